#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "diffood/rng.hpp"
#include "diffood/text.hpp"
#include "test_util.hpp"

using namespace diffood;
using namespace diffood::text;

namespace {

void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    out << content;
}

Corpus corpus_of(std::vector<std::string> sentences, std::string domain = "d") {
    Corpus c;
    c.domain = std::move(domain);
    for (auto& s : sentences) c.add(std::move(s));
    return c;
}

}  // namespace

TEST(Vocab, SpecialsThenFrequency) {
    const std::vector<std::string> corpus = {"a a b"};
    const auto v = Vocab::build(corpus, 1);
    EXPECT_EQ(v.tokens(), (std::vector<std::string>{"<pad>", "<unk>", "<bos>", "<eos>", "a", "b"}));
    EXPECT_EQ(v.id("a"), 4);
    EXPECT_EQ(v.id("b"), 5);
}

TEST(Vocab, MinFreqMapsRareTokensToUnk) {
    const std::vector<std::string> corpus = {"a a b"};
    const auto v = Vocab::build(corpus, 2);
    EXPECT_EQ(v.size(), 5u);
    EXPECT_EQ(v.id("b"), kUnk);
    EXPECT_EQ(encode("b", v, 4).ids[1], kUnk);
}

TEST(Vocab, OrderMatchesBruteForceFrequencySort) {
    Rng rng(5);
    std::vector<std::string> corpus;
    for (int s = 0; s < 60; ++s) {
        std::string line;
        const auto len = rng.uniform_int(1, 12);
        for (int i = 0; i < len; ++i) {
            // Skewed distribution over 30 tokens to get many ties and a long tail.
            const auto k = std::min(rng.uniform_int(0, 29), rng.uniform_int(0, 29));
            line += "w" + std::to_string(k) + " ";
        }
        corpus.push_back(line);
    }
    std::map<std::string, std::size_t> freq;
    for (const auto& s : corpus) {
        for (const auto& t : tokenize(s)) ++freq[t];
    }
    std::vector<std::pair<std::string, std::size_t>> expect(freq.begin(), freq.end());
    std::sort(expect.begin(), expect.end(), [](const auto& x, const auto& y) {
        return x.second != y.second ? x.second > y.second : x.first < y.first;
    });
    const auto v = Vocab::build(corpus, 1);
    ASSERT_EQ(v.size(), expect.size() + 4);
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(v.token(std::int32_t(i + 4)), expect[i].first);
}

TEST(Vocab, EmptyCorpusIsAnError) {
    EXPECT_THROW(Vocab::build(std::vector<std::string>{}, 1), DataError);
}

TEST(Vocab, FromTokensRoundTrip) {
    const std::vector<std::string> corpus = {"x y y z"};
    const auto v = Vocab::build(corpus, 1);
    const auto w = Vocab::from_tokens(v.tokens());
    EXPECT_EQ(w.tokens(), v.tokens());
    EXPECT_EQ(w.id("y"), v.id("y"));
}

TEST(Encode, RoundTrip) {
    const std::vector<std::string> corpus = {"a b c"};
    const auto v = Vocab::build(corpus);
    EXPECT_EQ(decode(encode("a b", v, 8).ids, v), "a b");
    EXPECT_EQ(decode(encode("  A\tB  ", v, 8).ids, v), "a b");
}

TEST(Encode, EmptySentence) {
    const std::vector<std::string> corpus = {"a"};
    const auto s = encode("", Vocab::build(corpus), 8);
    EXPECT_EQ(s.ids, (std::vector<std::int32_t>{kBos, kEos, kPad, kPad, kPad, kPad, kPad, kPad}));
    EXPECT_EQ(s.length, 2u);
}

TEST(Encode, TruncatesKeepingEos) {
    std::string text;
    for (int i = 0; i < 100; ++i) text += "a ";
    const std::vector<std::string> corpus = {"a"};
    const auto s = encode(text, Vocab::build(corpus), 16);
    ASSERT_EQ(s.ids.size(), 16u);
    EXPECT_EQ(s.length, 16u);
    EXPECT_EQ(s.ids[0], kBos);
    EXPECT_EQ(s.ids[15], kEos);
    EXPECT_EQ(s.ids[14], 4);
}

TEST(Encode, CarriesDomainAndLabel) {
    const std::vector<std::string> corpus = {"a"};
    const auto s = encode("a", Vocab::build(corpus), 4, "dom", 3);
    EXPECT_EQ(s.domain, "dom");
    EXPECT_EQ(s.label, 3);
}

TEST(Stats, OverlapExamples) {
    const auto id = corpus_of({"a b c"});
    const auto v = Vocab::build(id.sentences);
    EXPECT_DOUBLE_EQ(corpus_stats(id, corpus_of({"a d"}), v).token_overlap, 0.5);
    EXPECT_DOUBLE_EQ(corpus_stats(id, corpus_of({"c b", "a"}), v).token_overlap, 1.0);
    EXPECT_THROW(corpus_stats(id, corpus_of({}), v), DataError);
}

TEST(Stats, OverlapMatchesSetIntersection) {
    Rng rng(9);
    const auto random_corpus = [&](int lo, int hi) {
        Corpus c;
        for (int s = 0; s < 40; ++s) {
            std::string line;
            for (int i = 0; i < 6; ++i) line += "t" + std::to_string(rng.uniform_int(lo, hi)) + " ";
            c.add(line);
        }
        return c;
    };
    for (int trial = 0; trial < 5; ++trial) {
        const auto id = random_corpus(0, 60);
        const auto ood = random_corpus(30 + trial * 5, 120);
        const auto v = Vocab::build(id.sentences);
        std::set<std::string> id_set, ood_set;
        for (const auto& s : id.sentences) {
            for (const auto& t : tokenize(s)) id_set.insert(t);
        }
        for (const auto& s : ood.sentences) {
            for (const auto& t : tokenize(s)) ood_set.insert(t);
        }
        std::size_t shared = 0;
        for (const auto& t : ood_set) shared += id_set.count(t);
        const auto stats = corpus_stats(id, ood, v);
        EXPECT_DOUBLE_EQ(stats.token_overlap, double(shared) / double(ood_set.size()));
        EXPECT_EQ(stats.vocab_size, id_set.size());
        EXPECT_DOUBLE_EQ(stats.avg_len, 6.0);
    }
}

TEST(Load, PlainFileInOrder) {
    const auto dir = testutil::temp_dir("load_plain");
    write_file(dir / "trec.txt", "one\ntwo words\nthree\n");
    const auto c = load_corpus(dir / "trec.txt");
    EXPECT_EQ(c.sentences, (std::vector<std::string>{"one", "two words", "three"}));
    EXPECT_EQ(c.domain, "trec");
    EXPECT_FALSE(c.has_labels());
}

TEST(Load, CrlfMatchesLf) {
    const auto dir = testutil::temp_dir("load_crlf");
    write_file(dir / "a.txt", "x y\nz\n");
    write_file(dir / "b.txt", "x y\r\nz\r\n");
    EXPECT_EQ(load_corpus(dir / "a.txt").sentences, load_corpus(dir / "b.txt").sentences);
    write_file(dir / "c.jsonl", "{\"text\": \"x y\"}\r\n{\"text\": \"z\"}\r\n");
    EXPECT_EQ(load_corpus(dir / "c.jsonl").sentences, load_corpus(dir / "a.txt").sentences);
}

TEST(Load, JsonlLabels) {
    const auto dir = testutil::temp_dir("load_jsonl");
    write_file(dir / "sst.jsonl", "{\"text\": \"good\", \"label\": 1}\n{\"text\": \"bad\", \"label\": 0}\n");
    const auto c = load_corpus(dir / "sst.jsonl");
    ASSERT_EQ(c.size(), 2u);
    EXPECT_EQ(c.labels[0], 1);
    EXPECT_EQ(c.labels[1], 0);
    EXPECT_TRUE(c.has_labels());
}

TEST(Load, MalformedJsonlNamesLine) {
    const auto dir = testutil::temp_dir("load_bad");
    write_file(dir / "bad.jsonl", "{\"text\": \"ok\"}\n{not json\n");
    try {
        load_corpus(dir / "bad.jsonl");
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("bad.jsonl:2:"), std::string::npos) << e.what();
    }
}

TEST(Load, SaveRoundTrip) {
    const auto dir = testutil::temp_dir("load_save");
    Corpus c = corpus_of({"a b", "c"}, "dom");
    c.labels = {0, 1};
    save_corpus(c, dir / "dom.jsonl", CorpusFormat::Jsonl);
    const auto back = load_corpus(dir / "dom.jsonl");
    EXPECT_EQ(back.sentences, c.sentences);
    EXPECT_EQ(back.labels, c.labels);
}

TEST(Split, Sizes) {
    std::vector<std::string> s;
    for (int i = 0; i < 10; ++i) s.push_back("s" + std::to_string(i));
    const auto parts = split(corpus_of(s), {0.8, 0.1, 0.1}, 1);
    EXPECT_EQ(parts.train.size(), 8u);
    EXPECT_EQ(parts.dev.size(), 1u);
    EXPECT_EQ(parts.test.size(), 1u);
    std::set<std::string> all(parts.train.sentences.begin(), parts.train.sentences.end());
    all.insert(parts.dev.sentences[0]);
    all.insert(parts.test.sentences[0]);
    EXPECT_EQ(all.size(), 10u);
}

TEST(Split, DeterministicUnderSeed) {
    std::vector<std::string> s;
    for (int i = 0; i < 200; ++i) s.push_back("s" + std::to_string(i));
    const auto c = corpus_of(s);
    const auto a = split(c, {0.8, 0.1, 0.1}, 3);
    const auto b = split(c, {0.8, 0.1, 0.1}, 3);
    const auto d = split(c, {0.8, 0.1, 0.1}, 4);
    EXPECT_EQ(a.train.sentences, b.train.sentences);
    EXPECT_EQ(a.test.sentences, b.test.sentences);
    EXPECT_NE(a.train.sentences, d.train.sentences);
}

TEST(Split, Errors) {
    const auto c = corpus_of({"a", "b", "c"});
    EXPECT_THROW(split(c, {0.5, 0.2, 0.2}, 1), DataError);
    EXPECT_THROW(split(c, {0.98, 0.01, 0.01}, 1), DataError);
}

TEST(Subsample, TakesKDeterministically) {
    std::vector<std::string> s;
    for (int i = 0; i < 50; ++i) s.push_back("s" + std::to_string(i));
    const auto c = corpus_of(s);
    EXPECT_EQ(subsample(c, 10, 2).size(), 10u);
    EXPECT_EQ(subsample(c, 10, 2).sentences, subsample(c, 10, 2).sentences);
    EXPECT_EQ(subsample(c, 80, 2).size(), 50u);
}
