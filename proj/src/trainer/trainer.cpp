#include "diffood/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "diffood/adam.hpp"
#include "diffood/ops.hpp"

namespace diffood {

using nlohmann::json;

std::string to_string(Objective o) {
    switch (o) {
        case Objective::Diffusion: return "diffusion";
        case Objective::Mlm: return "mlm";
        case Objective::Classifier: return "classifier";
    }
    return "?";
}

Objective objective_from_string(const std::string& s) {
    if (s == "diffusion") return Objective::Diffusion;
    if (s == "mlm") return Objective::Mlm;
    if (s == "classifier") return Objective::Classifier;
    throw std::invalid_argument("unknown objective '" + s + "'");
}

double TrainConfig::lr_at(std::size_t step) const {
    if (!lr_decay) return lr;
    return lr * (1.0 - double(step) / double(steps));
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw std::invalid_argument("train: batch_size must be > 0");
    if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be > 0");
    if (!(mask_rate > 0.0 && mask_rate <= 1.0)) throw std::invalid_argument("train: mask_rate must be in (0, 1]");
    if (sigma0 < 0.0) throw std::invalid_argument("train: sigma0 must be >= 0");
    if (max_grad_norm < 0.0) throw std::invalid_argument("train: max_grad_norm must be >= 0");
    schedule();
}

TrainingError::TrainingError(std::size_t s, double l, const std::string& what)
    : std::runtime_error("training diverged at step " + std::to_string(s) + " (lr " + std::to_string(l) + "): " + what),
      step(s),
      lr(l) {}

std::vector<std::size_t> choose_mask(const text::TokenSequence& seq, double rate, Rng& rng) {
    if (!(rate > 0.0 && rate <= 1.0)) throw std::invalid_argument("mask rate must be in (0, 1]");
    if (seq.length == 0) throw text::DataError("mask: empty sentence");
    std::vector<std::size_t> candidates;
    for (std::size_t i = 1; i + 1 < seq.length; ++i) candidates.push_back(i);
    if (candidates.empty()) {
        for (std::size_t i = 0; i < seq.length; ++i) candidates.push_back(i);
    }
    const auto count = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(rate * double(candidates.size()))), 1, candidates.size());
    std::shuffle(candidates.begin(), candidates.end(), rng.engine());
    candidates.resize(count);
    std::sort(candidates.begin(), candidates.end());
    return candidates;
}

namespace {

Checkpoint snapshot(const TrainConfig& config, const Denoiser& model, std::size_t step,
                    const std::vector<MetricPoint>& history, const std::vector<std::string>& vocab) {
    Checkpoint c;
    c.train_config = config;
    c.step = step;
    c.history = history;
    c.vocab = vocab;
    c.model = std::make_shared<Denoiser>(model.cast<float>());
    return c;
}

/// Cycles through seeded epoch permutations of [0, size).
class BatchSampler {
public:
    BatchSampler(std::size_t size, Rng rng) : size_(size), rng_(rng) { refill(); }
    std::vector<std::size_t> next(std::size_t batch) {
        std::vector<std::size_t> out;
        while (out.size() < batch) {
            if (pos_ == order_.size()) refill();
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    void refill() {
        order_.resize(size_);
        std::iota(order_.begin(), order_.end(), 0);
        std::shuffle(order_.begin(), order_.end(), rng_.engine());
        pos_ = 0;
    }
    std::size_t size_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

Tensor objective_loss(const TrainConfig& config, const Denoiser& model, const NoiseSchedule& schedule,
                      std::span<const text::TokenSequence> batch, Rng& step_rng) {
    switch (config.objective) {
        case Objective::Diffusion: {
            std::vector<int> t(batch.size());
            std::vector<Rng> rngs;
            for (std::size_t b = 0; b < batch.size(); ++b) {
                t[b] = static_cast<int>(step_rng.uniform_int(1, schedule.T));
                rngs.push_back(step_rng.split(b));
            }
            return recon_step<float>(model, batch, t, schedule, config.sigma0, rngs).loss;
        }
        case Objective::Mlm: {
            const std::size_t n = model.config().n;
            std::vector<std::size_t> masked;
            std::vector<std::int32_t> targets;
            for (std::size_t b = 0; b < batch.size(); ++b) {
                for (auto i : choose_mask(batch[b], config.mask_rate, step_rng)) {
                    masked.push_back(b * n + i);
                    targets.push_back(batch[b].ids[i]);
                }
            }
            return ops::cross_entropy(model.mlm_logits(batch, masked), targets);
        }
        case Objective::Classifier: {
            std::vector<std::int32_t> labels;
            for (const auto& s : batch) {
                if (!s.label) throw text::DataError("classifier objective needs labeled data");
                labels.push_back(*s.label);
            }
            return ops::cross_entropy(model.classifier_logits(batch), labels);
        }
    }
    throw std::logic_error("unreachable");
}

void clip_grads(std::span<Tensor> params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        for (float g : p.grad()) sq += double(g) * double(g);
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const double s = max_norm / norm;
    for (auto& p : params) {
        for (auto& g : p.grad_mut()) g = static_cast<float>(double(g) * s);
    }
}

}  // namespace

std::vector<Checkpoint> train(const TrainConfig& config, Denoiser& model, std::span<const text::TokenSequence> data,
                              const std::vector<std::string>& vocab, const TrainHooks& hooks) {
    config.validate();
    if (data.empty()) throw text::DataError("train: no training data");
    if (config.objective == Objective::Classifier && !model.has_classifier()) {
        throw std::invalid_argument("train: classifier objective needs a model with num_classes > 0");
    }
    const auto schedule = config.schedule();
    const Rng root(config.seed);
    BatchSampler sampler(data.size(), root.split("batches"));
    auto params = model.parameter_tensors();
    AdamHyper hyper;
    hyper.lr = config.lr;
    auto adam = adam_init(params, hyper);

    std::vector<MetricPoint> history;
    std::vector<Checkpoint> series;
    auto emit = [&](std::size_t step) {
        auto c = snapshot(config, model, step, history, vocab);
        if (hooks.on_checkpoint) hooks.on_checkpoint(c);
        if (!hooks.keep_all) series.clear();
        series.push_back(std::move(c));
    };
    if (hooks.curve_csv) *hooks.curve_csv << "step,loss,lr\n";
    emit(0);

    for (std::size_t step = 0; step < config.steps; ++step) {
        const double lr = config.lr_at(step);
        std::vector<text::TokenSequence> batch;
        for (auto i : sampler.next(config.batch_size)) batch.push_back(data[i]);
        Rng step_rng = root.split(step);
        double loss_value = 0.0;
        try {
            model.zero_grad();
            const Tensor loss = objective_loss(config, model, schedule, batch, step_rng);
            loss_value = loss.item();
            loss.backward();
        } catch (const NumericError& e) {
            throw TrainingError(step + 1, lr, e.what());
        }
        if (!std::isfinite(loss_value)) throw TrainingError(step + 1, lr, "non-finite loss");
        if (config.max_grad_norm > 0.0) clip_grads(params, config.max_grad_norm);
        adam.hyper.lr = lr;
        adam_step(params, adam);

        const std::size_t done = step + 1;
        if (done % config.log_every == 0 || done == config.steps) {
            history.push_back({done, loss_value, lr});
            if (hooks.curve_csv) *hooks.curve_csv << done << ',' << loss_value << ',' << lr << '\n';
        }
        if (done == config.steps || (config.checkpoint_every > 0 && done % config.checkpoint_every == 0)) emit(done);
    }
    return series;
}

json model_config_json(const ModelConfig& c) {
    return {{"d", c.d},
            {"layers", c.layers},
            {"heads", c.heads},
            {"ffn_mult", c.ffn_mult},
            {"n", c.n},
            {"vocab_size", c.vocab_size},
            {"num_classes", c.num_classes},
            {"embed_std", c.embed_std},
            {"size_tag", c.size_tag}};
}

ModelConfig model_config_from(const json& j) {
    ModelConfig c;
    c.d = j.at("d");
    c.layers = j.at("layers");
    c.heads = j.at("heads");
    c.ffn_mult = j.at("ffn_mult");
    c.n = j.at("n");
    c.vocab_size = j.at("vocab_size");
    c.num_classes = j.at("num_classes");
    c.embed_std = j.at("embed_std");
    c.size_tag = j.at("size_tag");
    return c;
}

json train_config_json(const TrainConfig& c) {
    return {{"steps", c.steps},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"lr_decay", c.lr_decay},
            {"T", c.T},
            {"beta_start", c.beta_start},
            {"beta_end", c.beta_end},
            {"sigma0", c.sigma0},
            {"seed", c.seed},
            {"checkpoint_every", c.checkpoint_every},
            {"objective", to_string(c.objective)},
            {"mask_rate", c.mask_rate},
            {"max_grad_norm", c.max_grad_norm},
            {"log_every", c.log_every}};
}

TrainConfig train_config_from(const json& j) {
    TrainConfig c;
    c.steps = j.at("steps");
    c.batch_size = j.at("batch_size");
    c.lr = j.at("lr");
    c.lr_decay = j.at("lr_decay");
    c.T = j.at("T");
    c.beta_start = j.at("beta_start");
    c.beta_end = j.at("beta_end");
    c.sigma0 = j.at("sigma0");
    c.seed = j.at("seed");
    c.checkpoint_every = j.at("checkpoint_every");
    c.objective = objective_from_string(j.at("objective"));
    c.mask_rate = j.at("mask_rate");
    c.max_grad_norm = j.at("max_grad_norm");
    c.log_every = j.at("log_every");
    return c;
}

namespace {

std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
    return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
    if (!ckpt.model) throw CheckpointError("save_checkpoint: checkpoint has no model");
    std::filesystem::create_directories(dir);
    json entries = json::array();
    std::size_t offset = 0;
    std::ofstream bin(dir / "params.bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw CheckpointError("save_checkpoint: cannot write " + (dir / "params.bin").string());
    for (const auto& p : ckpt.model->parameters()) {
        const auto values = p.tensor.data();
        entries.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}, {"count", values.size()}});
        for (float v : values) {
            const std::uint32_t le = to_le(std::bit_cast<std::uint32_t>(v));
            bin.write(reinterpret_cast<const char*>(&le), sizeof le);
        }
        offset += values.size();
    }
    if (!bin) throw CheckpointError("save_checkpoint: write failed");
    json history = json::array();
    for (const auto& m : ckpt.history) history.push_back({{"step", m.step}, {"loss", m.loss}, {"lr", m.lr}});
    const json manifest = {{"format", "diffood-checkpoint"},
                           {"version", 1},
                           {"dtype", "f32-le"},
                           {"params_file", "params.bin"},
                           {"step", ckpt.step},
                           {"model_config", model_config_json(ckpt.model->config())},
                           {"train_config", train_config_json(ckpt.train_config)},
                           {"history", history},
                           {"vocab", ckpt.vocab},
                           {"entries", entries}};
    std::ofstream man(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    man << manifest.dump(2) << '\n';
    if (!man) throw CheckpointError("save_checkpoint: cannot write manifest");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream man(dir / "manifest.json", std::ios::binary);
    if (!man) throw CheckpointError("load_checkpoint: missing " + (dir / "manifest.json").string());
    json manifest;
    try {
        manifest = json::parse(man);
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("load_checkpoint: malformed manifest: ") + e.what());
    }
    Checkpoint c;
    std::vector<std::pair<std::string, Shape>> listed;
    std::vector<std::size_t> offsets;
    try {
        if (manifest.at("format") != "diffood-checkpoint" || manifest.at("dtype") != "f32-le") {
            throw CheckpointError("load_checkpoint: unsupported format");
        }
        c.step = manifest.at("step");
        c.train_config = train_config_from(manifest.at("train_config"));
        for (const auto& m : manifest.at("history")) c.history.push_back({m.at("step"), m.at("loss"), m.at("lr")});
        c.vocab = manifest.at("vocab").get<std::vector<std::string>>();
        const auto mc = model_config_from(manifest.at("model_config"));
        mc.validate();
        c.model = std::make_shared<Denoiser>(mc, 0);
        for (const auto& e : manifest.at("entries")) {
            listed.emplace_back(e.at("name"), e.at("shape").get<Shape>());
            offsets.push_back(e.at("offset"));
        }
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("load_checkpoint: bad manifest field: ") + e.what());
    }
    if (c.vocab.size() != c.model->config().vocab_size) {
        throw CheckpointError("load_checkpoint: vocab list size differs from model vocab_size");
    }

    auto model = std::const_pointer_cast<Denoiser>(c.model);
    auto& params = model->parameters();
    if (listed.size() != params.size()) {
        throw CheckpointError("load_checkpoint: manifest lists " + std::to_string(listed.size()) + " buffers, model has " +
                              std::to_string(params.size()));
    }
    std::ifstream bin(dir / manifest.value("params_file", std::string("params.bin")), std::ios::binary);
    if (!bin) throw CheckpointError("load_checkpoint: missing parameter file");
    std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    std::size_t expected = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, shape] = listed[i];
        if (name != params[i].name || shape != params[i].tensor.shape()) {
            throw CheckpointError("load_checkpoint: buffer '" + name + "' " + shape_str(shape) + " does not match model '" +
                                  params[i].name + "' " + shape_str(params[i].tensor.shape()));
        }
        if (offsets[i] != expected) throw CheckpointError("load_checkpoint: buffer '" + name + "' has a bad offset");
        expected += params[i].tensor.numel();
    }
    if (bytes.size() != expected * sizeof(float)) {
        throw CheckpointError("load_checkpoint: parameter file has " + std::to_string(bytes.size()) + " bytes, expected " +
                              std::to_string(expected * sizeof(float)));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto dst = params[i].tensor.data_mut();
        for (std::size_t j = 0; j < dst.size(); ++j) {
            std::uint32_t le;
            std::memcpy(&le, bytes.data() + (offsets[i] + j) * sizeof(float), sizeof le);
            dst[j] = std::bit_cast<float>(to_le(le));
            if (!std::isfinite(dst[j])) throw CheckpointError("load_checkpoint: buffer '" + params[i].name + "' is not finite");
        }
    }
    return c;
}

std::uint64_t parameter_hash(const Denoiser& model) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : model.parameters()) {
        for (float v : p.tensor.data()) {
            const auto bits = std::bit_cast<std::uint32_t>(v);
            for (int b = 0; b < 4; ++b) {
                h ^= (bits >> (8 * b)) & 0xffu;
                h *= 0x100000001b3ULL;
            }
        }
    }
    return h;
}

std::vector<EvalRow> eval_loop(std::span<const Checkpoint> checkpoints, std::span<const NamedData> datasets,
                               std::span<const int> t_list, std::size_t draws, std::uint64_t seed, std::size_t threads) {
    if (checkpoints.empty() || datasets.empty() || t_list.empty()) {
        throw std::invalid_argument("eval_loop: need at least one checkpoint, dataset and t");
    }
    std::vector<EvalRow> rows;
    const Rng root(seed);
    for (const auto& ckpt : checkpoints) {
        const auto schedule = ckpt.train_config.schedule();
        for (const auto& ds : datasets) {
            if (ds.data.empty()) throw text::DataError("eval_loop: dataset '" + ds.name + "' is empty");
            for (int t : t_list) {
                ReconEvalOptions opt;
                opt.t = t;
                opt.draws = draws;
                opt.sigma0 = ckpt.train_config.sigma0;
                opt.threads = threads;
                const auto per = evaluate_recon(*ckpt.model, ds.data, schedule, opt, root.split(ds.name));
                EvalRow row{ckpt.step, ds.name, t};
                double sq = 0.0;
                for (const auto& b : per) {
                    row.l_d += b.l_d;
                    row.l_c += b.l_c;
                    row.l_recon += b.l_recon;
                    sq += b.l_recon * b.l_recon;
                }
                const double m = double(per.size());
                row.l_d /= m;
                row.l_c /= m;
                row.l_recon /= m;
                const double var = per.size() > 1 ? std::max(0.0, (sq - m * row.l_recon * row.l_recon) / (m - 1.0)) : 0.0;
                row.stderr_recon = std::sqrt(var / m);
                rows.push_back(row);
            }
        }
    }
    return rows;
}

}  // namespace diffood
