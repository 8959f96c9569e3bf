#include "diffood/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "diffood/rng.hpp"

namespace diffood::text {

namespace {

const std::array<std::string, kNumSpecial> kSpecialTokens = {"<pad>", "<unk>", "<bos>", "<eos>"};

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    return idx;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

Vocab Vocab::build(std::span<const std::string> corpus, std::size_t min_freq) {
    if (corpus.empty()) throw DataError("build_vocab: empty corpus");
    std::map<std::string, std::size_t> freq;
    for (const auto& s : corpus) {
        for (auto& tok : tokenize(s)) ++freq[tok];
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [tok, count] : freq) {
        if (count >= min_freq && std::find(kSpecialTokens.begin(), kSpecialTokens.end(), tok) == kSpecialTokens.end()) {
            kept.emplace_back(tok, count);
        }
    }
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> tokens(kSpecialTokens.begin(), kSpecialTokens.end());
    for (auto& [tok, count] : kept) tokens.push_back(tok);
    return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < kNumSpecial || !std::equal(kSpecialTokens.begin(), kSpecialTokens.end(), tokens.begin())) {
        throw DataError("vocab: token list must start with <pad> <unk> <bos> <eos>");
    }
    Vocab v;
    v.tokens_ = std::move(tokens);
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
        if (!v.ids_.emplace(v.tokens_[i], static_cast<std::int32_t>(i)).second) {
            throw DataError("vocab: duplicate token '" + v.tokens_[i] + "'");
        }
    }
    return v;
}

std::int32_t Vocab::id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

const std::string& Vocab::token(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw DataError("vocab: id out of range");
    return tokens_[static_cast<std::size_t>(id)];
}

TokenSequence encode(std::string_view text, const Vocab& vocab, std::size_t n, std::string domain,
                     std::optional<int> label) {
    if (n < 2) throw DataError("encode: padded length must be >= 2");
    auto toks = tokenize(text);
    const std::size_t keep = std::min(toks.size(), n - 2);
    TokenSequence seq;
    seq.ids.assign(n, kPad);
    seq.ids[0] = kBos;
    for (std::size_t i = 0; i < keep; ++i) seq.ids[i + 1] = vocab.id(toks[i]);
    seq.ids[keep + 1] = kEos;
    seq.length = keep + 2;
    seq.domain = std::move(domain);
    seq.label = label;
    return seq;
}

std::string decode(std::span<const std::int32_t> ids, const Vocab& vocab) {
    std::string out;
    for (auto id : ids) {
        if (id == kEos) break;
        if (id == kPad || id == kBos) continue;
        if (!out.empty()) out.push_back(' ');
        out += vocab.token(id);
    }
    return out;
}

bool Corpus::has_labels() const {
    return !labels.empty() && std::all_of(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); });
}

void Corpus::add(std::string sentence, std::optional<int> label) {
    sentences.push_back(std::move(sentence));
    labels.push_back(label);
}

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_corpus: cannot open " + path.string());
    Corpus corpus;
    corpus.domain = path.stem().string();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        if (format == CorpusFormat::Plain) {
            corpus.add(line);
            continue;
        }
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
        }
        if (!obj.is_object() || !obj.contains("text") || !obj["text"].is_string()) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected an object with a \"text\" string");
        }
        std::optional<int> label;
        if (obj.contains("label") && !obj["label"].is_null()) {
            if (!obj["label"].is_number_integer()) {
                throw DataError(path.string() + ":" + std::to_string(line_no) + ": \"label\" must be an integer");
            }
            label = obj["label"].get<int>();
        }
        corpus.add(obj["text"].get<std::string>(), label);
    }
    return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
    return load_corpus(path, path.extension() == ".jsonl" ? CorpusFormat::Jsonl : CorpusFormat::Plain);
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path, CorpusFormat format) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_corpus: cannot write " + path.string());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (format == CorpusFormat::Plain) {
            out << corpus.sentences[i] << '\n';
        } else {
            nlohmann::json obj{{"text", corpus.sentences[i]}};
            if (i < corpus.labels.size() && corpus.labels[i]) obj["label"] = *corpus.labels[i];
            out << obj.dump() << '\n';
        }
    }
}

std::vector<TokenSequence> encode_corpus(const Corpus& corpus, const Vocab& vocab, std::size_t n) {
    std::vector<TokenSequence> out;
    out.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto label = i < corpus.labels.size() ? corpus.labels[i] : std::nullopt;
        out.push_back(encode(corpus.sentences[i], vocab, n, corpus.domain, label));
    }
    return out;
}

double average_length(std::span<const std::string> sentences) {
    if (sentences.empty()) return 0.0;
    double total = 0.0;
    for (const auto& s : sentences) total += static_cast<double>(tokenize(s).size());
    return total / static_cast<double>(sentences.size());
}

CorpusStats corpus_stats(const Corpus& id_corpus, const Corpus& ood_corpus, const Vocab& vocab) {
    if (ood_corpus.empty()) throw DataError("corpus_stats: empty OOD corpus");
    std::set<std::string> ood_tokens;
    for (const auto& s : ood_corpus.sentences) {
        for (auto& t : tokenize(s)) ood_tokens.insert(std::move(t));
    }
    if (ood_tokens.empty()) throw DataError("corpus_stats: OOD corpus has no tokens");
    std::size_t shared = 0;
    for (const auto& t : ood_tokens) {
        const auto id = vocab.id(t);
        if (id >= kNumSpecial) ++shared;
    }
    CorpusStats stats;
    stats.vocab_size = vocab.size() - kNumSpecial;
    stats.avg_len = average_length(id_corpus.sentences);
    stats.avg_len_ood = average_length(ood_corpus.sentences);
    stats.token_overlap = static_cast<double>(shared) / static_cast<double>(ood_tokens.size());
    return stats;
}

Splits split(const Corpus& corpus, std::array<double, 3> fractions, std::uint64_t seed) {
    const double total = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(total - 1.0) > 1e-9 || *std::min_element(fractions.begin(), fractions.end()) < 0.0) {
        throw DataError("split: fractions must be non-negative and sum to 1");
    }
    const std::size_t n = corpus.size();
    const auto n_dev = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
    const auto n_test = static_cast<std::size_t>(std::llround(fractions[2] * static_cast<double>(n)));
    if (n_dev + n_test >= n || n_dev == 0 || n_test == 0) {
        throw DataError("split: a partition would be empty (" + std::to_string(n) + " sentences)");
    }
    const auto idx = shuffled_indices(n, seed);
    Splits out;
    for (Corpus* c : {&out.train, &out.dev, &out.test}) c->domain = corpus.domain;
    for (std::size_t i = 0; i < n; ++i) {
        Corpus& dst = i < n_dev ? out.dev : i < n_dev + n_test ? out.test : out.train;
        const std::size_t j = idx[i];
        dst.add(corpus.sentences[j], j < corpus.labels.size() ? corpus.labels[j] : std::nullopt);
    }
    return out;
}

Corpus subsample(const Corpus& corpus, std::size_t k, std::uint64_t seed) {
    const auto idx = shuffled_indices(corpus.size(), seed);
    Corpus out;
    out.domain = corpus.domain;
    for (std::size_t i = 0; i < std::min(k, idx.size()); ++i) {
        const std::size_t j = idx[i];
        out.add(corpus.sentences[j], j < corpus.labels.size() ? corpus.labels[j] : std::nullopt);
    }
    return out;
}

}  // namespace diffood::text
