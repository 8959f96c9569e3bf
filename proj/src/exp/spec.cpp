#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "diffood/exp.hpp"
#include "diffood/toydata.hpp"

namespace diffood::exp {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream in(value);
    for (std::string item; std::getline(in, item, ',');) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    }
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

LengthRange parse_range(const std::string& key, const std::string& v) {
    const auto dash = v.find('-');
    if (dash == std::string::npos) throw ConfigError("config: '" + key + "' expects min-max, got '" + v + "'");
    return {parse_uint(key, trim(v.substr(0, dash))), parse_uint(key, trim(v.substr(dash + 1)))};
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& key, const std::string& v, F&& each) {
    std::vector<T> out;
    for (const auto& item : split_list(v)) out.push_back(each(key, item));
    if (out.empty()) throw ConfigError("config: '" + key + "' needs at least one value");
    return out;
}

using Setter = void (*)(ExperimentSpec&, const std::string&, const std::string&);

const std::vector<std::pair<std::string, Setter>>& setters() {
    static const std::vector<std::pair<std::string, Setter>> table = {
        {"name", [](ExperimentSpec& s, const std::string&, const std::string& v) { s.name = v; }},
        {"id_domain", [](ExperimentSpec& s, const std::string&, const std::string& v) { s.id_domain = v; }},
        {"ood_domains",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) {
             s.ood_domains = split_list(v);
             if (s.ood_domains.empty()) throw ConfigError("config: '" + k + "' needs at least one value");
         }},
        {"data_dir", [](ExperimentSpec& s, const std::string&, const std::string& v) { s.data_dir = v; }},
        {"id_count", [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.id_count = parse_uint(k, v); }},
        {"eval_count",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.eval_count = parse_uint(k, v); }},
        {"ood_count", [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.ood_count = parse_uint(k, v); }},
        {"overlap", [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.overlap = parse_double(k, v); }},
        {"seq_len", [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.seq_len = parse_uint(k, v); }},
        {"size", [](ExperimentSpec& s, const std::string&, const std::string& v) { s.size_tag = v; }},
        {"embed_std",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.embed_std = parse_double(k, v); }},
        {"steps", [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.train.steps = parse_uint(k, v); }},
        {"batch_size",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.train.batch_size = parse_uint(k, v); }},
        {"lr", [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.train.lr = parse_double(k, v); }},
        {"lr_decay",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.train.lr_decay = parse_bool(k, v); }},
        {"T", [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.train.T = int(parse_uint(k, v)); }},
        {"beta_start",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.train.beta_start = parse_double(k, v); }},
        {"beta_end",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.train.beta_end = parse_double(k, v); }},
        {"sigma0", [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.train.sigma0 = parse_double(k, v); }},
        {"checkpoint_every",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.train.checkpoint_every = parse_uint(k, v); }},
        {"max_grad_norm",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.train.max_grad_norm = parse_double(k, v); }},
        {"mask_rate",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.train.mask_rate = parse_double(k, v); }},
        {"log_every",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.train.log_every = parse_uint(k, v); }},
        {"pretrain_steps",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.pretrain_steps = parse_uint(k, v); }},
        {"baseline_steps",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.baseline_steps = parse_uint(k, v); }},
        {"fewshot_steps",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.fewshot_steps = parse_uint(k, v); }},
        {"t_values",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) {
             s.t_values = parse_list<int>(k, v, [](auto& kk, auto& x) { return int(parse_uint(kk, x)); });
         }},
        {"step_t_values",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) {
             s.step_t_values = parse_list<int>(k, v, [](auto& kk, auto& x) { return int(parse_uint(kk, x)); });
         }},
        {"lambdas",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) {
             s.lambdas = parse_list<double>(k, v, parse_double);
         }},
        {"beta_ranges",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) {
             s.beta_ranges = parse_list<std::array<double, 2>>(k, v, [](auto& kk, auto& x) {
                 const auto colon = x.find(':');
                 if (colon == std::string::npos) throw ConfigError("config: '" + kk + "' expects start:end pairs");
                 return std::array<double, 2>{parse_double(kk, trim(x.substr(0, colon))),
                                              parse_double(kk, trim(x.substr(colon + 1)))};
             });
         }},
        {"shots",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) {
             s.shots = parse_list<std::size_t>(k, v, [](auto& kk, auto& x) {
                 return x == "full" ? std::size_t(0) : std::size_t(parse_uint(kk, x));
             });
         }},
        {"fewshot_seeds",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.fewshot_seeds = parse_uint(k, v); }},
        {"sizes", [](ExperimentSpec& s, const std::string& k, const std::string& v) {
             s.sizes = split_list(v);
             if (s.sizes.empty()) throw ConfigError("config: '" + k + "' needs at least one value");
         }},
        {"length_generator",
         [](ExperimentSpec& s, const std::string&, const std::string& v) { s.length_generator = v; }},
        {"short_lengths",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.short_lengths = parse_range(k, v); }},
        {"long_lengths",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.long_lengths = parse_range(k, v); }},
        {"eval_lengths",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.eval_lengths = parse_range(k, v); }},
        {"bin_width", [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.bin_width = parse_uint(k, v); }},
        {"t_eval", [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.t_eval = int(parse_uint(k, v)); }},
        {"draws", [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.draws = parse_uint(k, v); }},
        {"lambda", [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.lambda = parse_double(k, v); }},
        {"mlm_patterns",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.mlm_patterns = parse_uint(k, v); }},
        {"standardize",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.standardize = parse_bool(k, v); }},
        {"score_mode",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) {
             if (v == "recon") {
                 s.score_mode = ReconScoreMode::Recon;
             } else if (v == "rounding") {
                 s.score_mode = ReconScoreMode::RoundingOnly;
             } else {
                 throw ConfigError("config: '" + k + "' expects recon or rounding");
             }
         }},
        {"distinct_samples",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.distinct_samples = parse_uint(k, v); }},
        {"checkpoint", [](ExperimentSpec& s, const std::string&, const std::string& v) { s.checkpoint = v; }},
        {"seed", [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.seed = parse_uint(k, v); }},
        {"out", [](ExperimentSpec& s, const std::string&, const std::string& v) { s.out = v; }},
        {"threads", [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.threads = parse_uint(k, v); }},
        {"plots", [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.plots = parse_bool(k, v); }},
        {"save_checkpoints",
         [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.save_checkpoints = parse_bool(k, v); }},
    };
    return table;
}

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

}  // namespace

TrainConfig ExperimentSpec::train_config() const {
    TrainConfig c = train;
    c.seed = seed;
    return c;
}

void ExperimentSpec::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("experiment: " + what); };
    if (id_domain.empty()) fail("id_domain is empty");
    if (ood_domains.empty()) fail("ood_domains is empty");
    if (t_values.empty() || step_t_values.empty()) fail("t axes must be non-empty");
    if (lambdas.empty()) fail("lambda axis is empty");
    if (beta_ranges.empty()) fail("beta axis is empty");
    if (shots.empty()) fail("shot axis is empty");
    if (sizes.empty()) fail("size axis is empty");
    if (fewshot_seeds == 0) fail("fewshot_seeds must be >= 1");
    if (id_count == 0 || eval_count == 0 || ood_count == 0) fail("sentence counts must be > 0");
    if (draws == 0) fail("draws must be > 0");
    if (bin_width == 0) fail("bin_width must be > 0");
    if (!(embed_std > 0.0)) fail("embed_std must be > 0");
    if (!(overlap > 0.0 && overlap < 1.0)) fail("overlap must be in (0, 1)");
    for (const auto* r : {&short_lengths, &long_lengths, &eval_lengths}) {
        if (r->min == 0 || r->min > r->max) fail("length ranges need 1 <= min <= max");
    }
    try {
        train.validate();
        ModelConfig::for_size_tag(size_tag, 8, 8);
        for (const auto& s : sizes) ModelConfig::for_size_tag(s, 8, 8);
    } catch (const std::invalid_argument& e) {
        fail(e.what());
    }
    auto check_t = [&](int t) {
        if (t < 1 || t > train.T) fail("t = " + std::to_string(t) + " outside [1, " + std::to_string(train.T) + "]");
    };
    for (int t : t_values) check_t(t);
    for (int t : step_t_values) check_t(t);
    check_t(t_eval);
    for (double l : lambdas) {
        if (!(l >= 0.0 && l <= 1.0)) fail("lambda values must be in [0, 1]");
    }
    if (!(lambda >= 0.0 && lambda <= 1.0)) fail("lambda must be in [0, 1]");
    for (const auto& b : beta_ranges) {
        if (!(b[0] > 0.0 && b[0] <= b[1] && b[1] < 1.0)) fail("beta ranges need 0 < start <= end < 1");
    }
    std::vector<std::string> domains = ood_domains;
    domains.push_back(id_domain);
    if (data_dir.empty()) {
        const auto& gens = toy::generators();
        for (const auto& d : domains) {
            if (std::find(gens.begin(), gens.end(), d) == gens.end()) fail("unknown toy domain '" + d + "'");
        }
        if (std::find(gens.begin(), gens.end(), length_generator) == gens.end()) {
            fail("unknown length generator '" + length_generator + "'");
        }
    } else {
        for (const auto& d : domains) {
            if (!std::filesystem::exists(data_dir / (d + ".jsonl")) && !std::filesystem::exists(data_dir / (d + ".txt"))) {
                fail("corpus '" + d + "' not found in " + data_dir.string());
            }
        }
    }
}

json spec_json(const ExperimentSpec& s) {
    auto range = [](const LengthRange& r) { return json::array({r.min, r.max}); };
    return {{"name", s.name},
            {"id_domain", s.id_domain},
            {"ood_domains", s.ood_domains},
            {"data_dir", s.data_dir.string()},
            {"id_count", s.id_count},
            {"eval_count", s.eval_count},
            {"ood_count", s.ood_count},
            {"overlap", s.overlap},
            {"seq_len", s.seq_len},
            {"size", s.size_tag},
            {"embed_std", s.embed_std},
            {"train", train_config_json(s.train_config())},
            {"pretrain_steps", s.pretrain_steps},
            {"baseline_steps", s.baseline_steps},
            {"fewshot_steps", s.fewshot_steps},
            {"t_values", s.t_values},
            {"step_t_values", s.step_t_values},
            {"lambdas", s.lambdas},
            {"beta_ranges", s.beta_ranges},
            {"shots", s.shots},
            {"fewshot_seeds", s.fewshot_seeds},
            {"sizes", s.sizes},
            {"length_generator", s.length_generator},
            {"short_lengths", range(s.short_lengths)},
            {"long_lengths", range(s.long_lengths)},
            {"eval_lengths", range(s.eval_lengths)},
            {"bin_width", s.bin_width},
            {"t_eval", s.t_eval},
            {"draws", s.draws},
            {"lambda", s.lambda},
            {"mlm_patterns", s.mlm_patterns},
            {"standardize", s.standardize},
            {"score_mode", s.score_mode == ReconScoreMode::Recon ? "recon" : "rounding"},
            {"distinct_samples", s.distinct_samples},
            {"checkpoint", s.checkpoint.string()},
            {"seed", s.seed},
            {"threads", s.threads}};
}

void apply_setting(ExperimentSpec& spec, const std::string& key, const std::string& value) {
    for (const auto& [name, set] : setters()) {
        if (name == key) {
            set(spec, key, trim(value));
            return;
        }
    }
    throw ConfigError("config: unknown key '" + key + "'");
}

void apply_config_file(ExperimentSpec& spec, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        }
        apply_setting(spec, trim(line.substr(0, eq)), line.substr(eq + 1));
    }
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, set] : setters()) k.push_back(name);
        return k;
    }();
    return keys;
}

namespace {

text::Corpus load_domain(const ExperimentSpec& spec, const std::string& domain, std::size_t count,
                         std::uint64_t seed) {
    if (spec.data_dir.empty()) {
        toy::ToyDomainSpec t;
        t.generator = domain;
        t.count = count;
        t.overlap = spec.overlap;
        t.seed = seed;
        return toy::generate(t);
    }
    const auto jsonl = spec.data_dir / (domain + ".jsonl");
    auto corpus = text::load_corpus(std::filesystem::exists(jsonl) ? jsonl : spec.data_dir / (domain + ".txt"));
    if (corpus.empty()) throw text::DataError("corpus '" + domain + "' is empty");
    return corpus;
}

}  // namespace

Workspace prepare(const ExperimentSpec& spec) {
    spec.validate();
    Workspace ws;
    const std::size_t id_total = spec.id_count + 2 * spec.eval_count;
    auto id_corpus = load_domain(spec, spec.id_domain, id_total, spec.seed);
    std::vector<text::Corpus> ood;
    for (std::size_t i = 0; i < spec.ood_domains.size(); ++i) {
        const auto& d = spec.ood_domains[i];
        // A distinct seed keeps an OOD set drawn from the ID generator disjoint in sampling.
        auto c = load_domain(spec, d, spec.ood_count, Rng(spec.seed).split("ood").split(i).seed());
        if (!spec.data_dir.empty()) c = text::subsample(c, spec.ood_count, spec.seed);
        ood.push_back(std::move(c));
    }

    if (spec.data_dir.empty()) {
        auto tokens = toy::lexicon(spec.overlap);
        tokens.insert(tokens.begin(), {"<pad>", "<unk>", "<bos>", "<eos>"});
        ws.vocab = text::Vocab::from_tokens(std::move(tokens));
    } else {
        std::vector<std::string> all = id_corpus.sentences;
        for (const auto& c : ood) all.insert(all.end(), c.sentences.begin(), c.sentences.end());
        ws.vocab = text::Vocab::build(all);
    }

    const double total = double(id_corpus.size());
    if (id_corpus.size() <= 2 * spec.eval_count) {
        throw text::DataError("ID corpus has " + std::to_string(id_corpus.size()) + " sentences; need more than " +
                              std::to_string(2 * spec.eval_count));
    }
    const double ev = double(spec.eval_count) / total;
    auto parts = text::split(id_corpus, {1.0 - 2.0 * ev, ev, ev}, spec.seed);
    if (!spec.data_dir.empty() && parts.train.size() > spec.id_count) {
        parts.train = text::subsample(parts.train, spec.id_count, spec.seed);
    }

    if (spec.seq_len > 0) {
        ws.n = spec.seq_len;
    } else {
        std::size_t longest = 0;
        auto scan = [&](const text::Corpus& c) {
            for (const auto& s : c.sentences) longest = std::max(longest, text::tokenize(s).size());
        };
        scan(parts.train);
        scan(parts.dev);
        scan(parts.test);
        for (const auto& c : ood) scan(c);
        ws.n = std::min<std::size_t>(128, round_up(longest + 2, 8));
    }

    auto make = [&](std::string name, text::Corpus c) {
        Dataset d;
        d.name = std::move(name);
        d.seqs = text::encode_corpus(c, ws.vocab, ws.n);
        d.corpus = std::move(c);
        return d;
    };
    ws.id_train = make(spec.id_domain + "-train", std::move(parts.train));
    ws.id_dev = make(spec.id_domain + "-dev", std::move(parts.dev));
    ws.id_test = make(spec.id_domain, std::move(parts.test));
    std::set<std::string> names = {ws.id_test.name};
    for (std::size_t i = 0; i < ood.size(); ++i) {
        std::string name = spec.ood_domains[i];
        for (int k = 2; names.count(name) > 0; ++k) name = spec.ood_domains[i] + "#" + std::to_string(k);
        names.insert(name);
        ws.ood.push_back(make(name, std::move(ood[i])));
    }
    return ws;
}

ModelConfig model_config(const ExperimentSpec& spec, const Workspace& ws, const std::string& size_tag,
                         std::size_t num_classes) {
    auto mc = ModelConfig::for_size_tag(size_tag, ws.vocab.size(), ws.n);
    mc.embed_std = spec.embed_std;
    mc.num_classes = num_classes;
    return mc;
}

std::vector<Checkpoint> train_model(const ExperimentSpec& spec, const Workspace& ws,
                                        std::span<const text::TokenSequence> data, const TrainConfig& config,
                                        const std::string& tag, const ModelConfig& mc) {
    Denoiser model(mc, config.seed);
    if (spec.pretrain_steps > 0 && spec.data_dir.empty()) {
        std::vector<text::TokenSequence> mix;
        for (const auto& g : toy::generators()) {
            toy::ToyDomainSpec t;
            t.generator = g;
            t.count = g == "news" ? 300 : 2000;
            t.overlap = spec.overlap;
            t.seed = Rng(spec.seed).split("pretrain").seed();
            const auto enc = text::encode_corpus(toy::generate(t), ws.vocab, ws.n);
            mix.insert(mix.end(), enc.begin(), enc.end());
        }
        TrainConfig pc = config;
        pc.steps = spec.pretrain_steps;
        pc.objective = Objective::Mlm;
        pc.checkpoint_every = 0;
        train(pc, model, mix, ws.vocab.tokens(), {nullptr, nullptr, false});
    }

    TrainHooks hooks;
    hooks.keep_all = config.checkpoint_every > 0;
    std::ofstream curve;
    if (!spec.out.empty()) {
        std::filesystem::create_directories(spec.out);
        curve.open(spec.out / (tag + "_curve.csv"));
        hooks.curve_csv = &curve;
        if (spec.save_checkpoints) {
            const auto dir = spec.out / "checkpoints" / tag;
            hooks.on_checkpoint = [dir](const Checkpoint& c) {
                save_checkpoint(c, dir / ("step_" + std::to_string(c.step)));
            };
        }
    }
    return train(config, model, data, ws.vocab.tokens(), hooks);
}

Manifest::Manifest(const ExperimentSpec& spec) {
    doc_ = {{"spec", spec_json(spec)},
            {"seed", spec.seed},
            {"checkpoints", json::object()},
            {"notes", json::array()},
            {"outputs", json::array()}};
}

void Manifest::checkpoint(const std::string& tag, const Checkpoint& c) {
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(parameter_hash(*c.model)));
    doc_["checkpoints"][tag] = {{"step", c.step}, {"hash", hex}, {"size", c.model_config().size_tag}};
}

void Manifest::note(const std::string& text) {
    std::cerr << "note: " << text << '\n';
    doc_["notes"].push_back(text);
}

void Manifest::output(const std::string& file) {
    auto& outs = doc_["outputs"];
    if (std::find(outs.begin(), outs.end(), file) == outs.end()) outs.push_back(file);
}

void Manifest::write(const std::filesystem::path& dir) const {
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "manifest.json");
    out << doc_.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
}

Checkpoint obtain_checkpoint(const ExperimentSpec& spec, const Workspace& ws, Manifest& manifest) {
    Checkpoint c;
    if (!spec.checkpoint.empty()) {
        c = load_checkpoint(spec.checkpoint);
        if (c.vocab != ws.vocab.tokens()) {
            throw CheckpointError("checkpoint vocabulary does not match the experiment data");
        }
        if (c.model_config().n != ws.n) {
            throw CheckpointError("checkpoint sequence length " + std::to_string(c.model_config().n) +
                                  " does not match the experiment's " + std::to_string(ws.n));
        }
    } else {
        auto config = spec.train_config();
        config.checkpoint_every = 0;
        c = train_model(spec, ws, ws.id_train.seqs, config, "diffusion", model_config(spec, ws, spec.size_tag))
                .back();
    }
    manifest.checkpoint("diffusion", c);
    return c;
}

std::vector<Checkpoint> obtain_series(const ExperimentSpec& spec, const Workspace& ws, Manifest& manifest) {
    std::vector<Checkpoint> series;
    if (!spec.checkpoint.empty()) {
        if (std::filesystem::exists(spec.checkpoint / "manifest.json")) {
            series.push_back(load_checkpoint(spec.checkpoint));
        } else {
            for (const auto& entry : std::filesystem::directory_iterator(spec.checkpoint)) {
                if (entry.is_directory() && std::filesystem::exists(entry.path() / "manifest.json")) {
                    series.push_back(load_checkpoint(entry.path()));
                }
            }
        }
        if (series.empty()) throw CheckpointError("no checkpoints under " + spec.checkpoint.string());
        std::sort(series.begin(), series.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
        for (const auto& c : series) {
            if (c.vocab != ws.vocab.tokens()) throw CheckpointError("checkpoint vocabulary does not match the data");
        }
    } else {
        auto config = spec.train_config();
        if (config.checkpoint_every == 0) config.checkpoint_every = std::max<std::size_t>(1, config.steps / 5);
        series = train_model(spec, ws, ws.id_train.seqs, config, "series", model_config(spec, ws, spec.size_tag));
    }
    for (const auto& c : series) manifest.checkpoint("step_" + std::to_string(c.step), c);
    return series;
}

}  // namespace diffood::exp
