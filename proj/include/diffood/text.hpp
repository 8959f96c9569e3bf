#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace diffood::text {

inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kUnk = 1;
inline constexpr std::int32_t kBos = 2;
inline constexpr std::int32_t kEos = 3;
inline constexpr std::int32_t kNumSpecial = 4;

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Lowercased whitespace tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Bijection between ids [0, size) and tokens. Ids 0..3 are PAD, UNK, BOS, EOS.
class Vocab {
public:
    /// Tokens with frequency >= min_freq get ids in descending frequency, ties
    /// broken lexicographically.
    static Vocab build(std::span<const std::string> corpus, std::size_t min_freq = 1);
    /// Restores a vocab from its id -> token list (specials included).
    static Vocab from_tokens(std::vector<std::string> tokens);

    std::int32_t id(std::string_view token) const;
    bool contains(std::string_view token) const;
    const std::string& token(std::int32_t id) const;
    std::size_t size() const noexcept { return tokens_.size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> ids_;
};

struct TokenSequence {
    std::vector<std::int32_t> ids;  // padded to n
    std::size_t length = 0;         // BOS + tokens + EOS, before padding
    std::string domain;
    std::optional<int> label;
};

/// BOS + tokens + EOS, truncated to n (EOS kept at position n-1), PAD-filled.
TokenSequence encode(std::string_view text, const Vocab& vocab, std::size_t n, std::string domain = {},
                     std::optional<int> label = std::nullopt);

/// Inverse of encode: skips PAD/BOS, stops at the first EOS.
std::string decode(std::span<const std::int32_t> ids, const Vocab& vocab);

struct Corpus {
    std::string domain;
    std::vector<std::string> sentences;
    std::vector<std::optional<int>> labels;  // parallel to sentences

    std::size_t size() const noexcept { return sentences.size(); }
    bool empty() const noexcept { return sentences.empty(); }
    bool has_labels() const;
    void add(std::string sentence, std::optional<int> label = std::nullopt);
};

enum class CorpusFormat { Plain, Jsonl };

/// Plain: one UTF-8 sentence per line, LF or CRLF, blank lines skipped.
/// Jsonl: one object per line with "text" and optional integer "label".
/// The domain tag is the file stem.
Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format);
/// Format from the extension: ".jsonl" is JSON-lines, anything else plain.
Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path, CorpusFormat format);

std::vector<TokenSequence> encode_corpus(const Corpus& corpus, const Vocab& vocab, std::size_t n);

/// Mean whitespace-token count per sentence.
double average_length(std::span<const std::string> sentences);

struct CorpusStats {
    std::size_t vocab_size = 0;  // distinct non-special tokens in the ID vocab
    double avg_len = 0.0;        // ID corpus
    double avg_len_ood = 0.0;
    double token_overlap = 0.0;  // distinct OOD tokens present in the ID vocab / distinct OOD tokens
};

CorpusStats corpus_stats(const Corpus& id_corpus, const Corpus& ood_corpus, const Vocab& vocab);

struct Splits {
    Corpus train;
    Corpus dev;
    Corpus test;
};

/// Deterministic shuffled partition. Dev and test sizes are rounded from their
/// fractions; train takes the remainder.
Splits split(const Corpus& corpus, std::array<double, 3> fractions, std::uint64_t seed);

/// First k sentences of a seeded shuffle (k >= size returns a shuffled copy).
Corpus subsample(const Corpus& corpus, std::size_t k, std::uint64_t seed);

}  // namespace diffood::text
