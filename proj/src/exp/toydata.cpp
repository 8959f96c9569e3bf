#include "diffood/toydata.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>

#include "diffood/rng.hpp"

namespace diffood::toy {

namespace {

// Template symbols: N noun, V verb, A adjective, R adverb, P label-specific
// adjective, T label-specific noun. Anything else is a literal token.
struct Grammar {
    std::string name;
    double avg_len;
    int labels;
    std::vector<std::vector<std::string>> templates;  // per label (one group if unlabeled)
    std::vector<std::string> modifiers;
    bool multi_sentence = false;
};

const std::vector<Grammar>& grammars() {
    static const std::vector<Grammar> g = {
        {"questions",
         10.0,
         6,
         {{"what is the A N ?", "what N did the N V ?"},
          {"who V the N ?", "who is the A N ?"},
          {"where is the N ?", "where did the N V ?"},
          {"when did the N V ?", "when was the N V ?"},
          {"how many N V the N ?", "how many A N are there ?"},
          {"why does the N V ?", "why is the N so A ?"}},
         {"in the N", "of the A N", "R", "for the N", "to the N"},
         false},
        {"captions",
         13.0,
         0,
         {{"a A N V on a N .", "two N V near the A N .", "a N is V with a N .", "the A N V R ."}},
         {"beside a N", "while a N V", "and a A N", "R", "in front of a N", "under the N"},
         false},
        {"reviews",
         25.0,
         2,
         {{"the N was P .", "i found the N P and R P .", "this A N is P ."},
          {"the N was P .", "i found the N P and R P .", "this A N is P ."}},
         {"but the N V", "and the A N was P", "R", "even the N", "i think", "the N V R"},
         false},
        {"news",
         200.0,
         4,
         {{"the T V the A N .", "officials said the T will V .", "a A T V R on monday ."},
          {"the T V the A N .", "officials said the T will V .", "a A T V R on monday ."},
          {"the T V the A N .", "officials said the T will V .", "a A T V R on monday ."},
          {"the T V the A N .", "officials said the T will V .", "a A T V R on monday ."}},
         {"according to the N", "after the A T", "R", "and the T", "in the N"},
         true},
    };
    return g;
}

const Grammar& grammar(const std::string& name) {
    for (const auto& g : grammars()) {
        if (g.name == name) return g;
    }
    throw std::invalid_argument("unknown toy generator '" + name + "'");
}

bool is_slot(const std::string& tok) {
    return tok == "N" || tok == "V" || tok == "A" || tok == "R" || tok == "P" || tok == "T";
}

std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string t; in >> t;) out.push_back(t);
    return out;
}

std::set<std::string> literals(const Grammar& g) {
    std::set<std::string> out;
    auto add = [&](const std::string& s) {
        for (auto& t : split_ws(s)) {
            if (!is_slot(t)) out.insert(t);
        }
    };
    for (const auto& group : g.templates) {
        for (const auto& t : group) add(t);
    }
    for (const auto& m : g.modifiers) add(m);
    return out;
}

constexpr std::size_t kSharedNouns = 60;
constexpr std::size_t kSharedVerbs = 30;
constexpr std::size_t kSharedAdjs = 20;
constexpr std::size_t kSharedAdvs = 10;
constexpr std::size_t kShared = kSharedNouns + kSharedVerbs + kSharedAdjs + kSharedAdvs;

/// Deterministic pronounceable pseudo-words, unique across calls on one instance.
class WordFactory {
public:
    explicit WordFactory(std::uint64_t seed) : rng_(seed) {
        for (const auto& g : grammars()) {
            for (const auto& l : literals(g)) used_.insert(l);
        }
    }
    std::vector<std::string> make(std::size_t count) {
        static const std::string cons = "bdfgklmnprstvz";
        static const std::string vows = "aeiou";
        std::vector<std::string> out;
        while (out.size() < count) {
            const auto syll = rng_.uniform_int(2, 3);
            std::string w;
            for (int i = 0; i < syll; ++i) {
                w += cons[std::size_t(rng_.uniform_int(0, std::int64_t(cons.size()) - 1))];
                w += vows[std::size_t(rng_.uniform_int(0, std::int64_t(vows.size()) - 1))];
            }
            if (used_.insert(w).second) out.push_back(w);
        }
        return out;
    }

private:
    Rng rng_;
    std::set<std::string> used_;
};

struct Pools {
    std::vector<std::string> N, V, A, R;
    std::vector<std::vector<std::string>> P;  // per label
    std::vector<std::vector<std::string>> T;  // per label
};

struct Lexicon {
    std::map<std::string, Pools> domains;
};

void append(std::vector<std::string>& dst, const std::vector<std::string>& src) {
    dst.insert(dst.end(), src.begin(), src.end());
}

Lexicon build_lexicon(double overlap) {
    if (!(overlap > 0.0 && overlap < 1.0)) throw std::invalid_argument("toy: overlap must be in (0, 1)");
    WordFactory words(0x70794c6578ULL);
    const auto sN = words.make(kSharedNouns);
    const auto sV = words.make(kSharedVerbs);
    const auto sA = words.make(kSharedAdjs);
    const auto sR = words.make(kSharedAdvs);

    Lexicon lex;
    for (const auto& g : grammars()) {
        const auto lit = literals(g);
        double inter = 0.0;
        for (const auto& o : grammars()) {
            if (o.name == g.name) continue;
            const auto lo = literals(o);
            inter += double(std::count_if(lit.begin(), lit.end(), [&](const auto& t) { return lo.count(t) > 0; }));
        }
        inter /= double(grammars().size() - 1);
        const double unique_d = (inter + double(kShared)) / overlap - double(lit.size()) - double(kShared);
        const auto unique = static_cast<std::size_t>(std::max(8.0, std::round(unique_d)));

        Pools p;
        p.N = sN;
        p.V = sV;
        p.A = sA;
        p.R = sR;
        const std::size_t uN = unique / 2;
        const std::size_t uV = unique / 4;
        const std::size_t uA = unique * 3 / 20;
        const std::size_t uR = unique - uN - uV - uA;
        if (g.name == "news") {
            const auto topics = words.make(uN);
            p.T.resize(4);
            for (std::size_t i = 0; i < topics.size(); ++i) p.T[i % 4].push_back(topics[i]);
        } else {
            append(p.N, words.make(uN));
        }
        append(p.V, words.make(uV));
        if (g.name == "reviews") {
            const auto sentiment = words.make(uA);
            p.P.resize(2);
            for (std::size_t i = 0; i < sentiment.size(); ++i) p.P[i % 2].push_back(sentiment[i]);
        } else {
            append(p.A, words.make(uA));
        }
        append(p.R, words.make(uR));
        lex.domains[g.name] = std::move(p);
    }
    return lex;
}

const Lexicon& cached_lexicon(double overlap) {
    static std::mutex mu;
    static std::map<double, Lexicon> cache;
    std::lock_guard lock(mu);
    auto it = cache.find(overlap);
    if (it == cache.end()) it = cache.emplace(overlap, build_lexicon(overlap)).first;
    return it->second;
}

const std::string& pick(const std::vector<std::string>& pool, Rng& rng) {
    return pool[std::size_t(rng.uniform_int(0, std::int64_t(pool.size()) - 1))];
}

std::vector<std::string> expand(const std::string& pattern, const Pools& pools, int label, Rng& rng) {
    std::vector<std::string> out;
    for (const auto& t : split_ws(pattern)) {
        if (t == "N") {
            out.push_back(pick(pools.N, rng));
        } else if (t == "V") {
            out.push_back(pick(pools.V, rng));
        } else if (t == "A") {
            out.push_back(pick(pools.A, rng));
        } else if (t == "R") {
            out.push_back(pick(pools.R, rng));
        } else if (t == "P") {
            out.push_back(pick(pools.P.at(std::size_t(label)), rng));
        } else if (t == "T") {
            // Topic nouns dominate, shared nouns keep the overlap.
            out.push_back(rng.uniform() < 0.7 ? pick(pools.T.at(std::size_t(label)), rng) : pick(pools.N, rng));
        } else {
            out.push_back(t);
        }
    }
    return out;
}

/// One clause grown with modifiers toward `target` tokens (rounding to nearest).
std::vector<std::string> clause(const Grammar& g, const Pools& pools, int label, std::size_t target, Rng& rng) {
    const auto& group = g.templates[g.labels > 0 ? std::size_t(label) : 0];
    auto toks = expand(pick(group, rng), pools, label, rng);
    for (int guard = 0; guard < 1000; ++guard) {
        auto mod = expand(pick(g.modifiers, rng), pools, label, rng);
        if (2 * (toks.size() + mod.size()) > 2 * target + mod.size()) break;
        // Insert before the final punctuation.
        toks.insert(toks.end() - 1, mod.begin(), mod.end());
    }
    return toks;
}

}  // namespace

const std::vector<std::string>& generators() {
    static const std::vector<std::string> names = {"questions", "captions", "reviews", "news"};
    return names;
}

double default_avg_len(const std::string& generator) { return grammar(generator).avg_len; }

int num_labels(const std::string& generator) { return grammar(generator).labels; }

text::Corpus generate(const ToyDomainSpec& spec) {
    const Grammar& g = grammar(spec.generator);
    const Pools& pools = cached_lexicon(spec.overlap).domains.at(g.name);
    const double avg = spec.avg_len > 0.0 ? spec.avg_len : g.avg_len;
    std::size_t lo;
    std::size_t hi;
    if (spec.max_len > 0) {
        if (spec.min_len > spec.max_len) throw std::invalid_argument("toy: min_len > max_len");
        lo = spec.min_len;
        hi = spec.max_len;
    } else {
        lo = static_cast<std::size_t>(std::llround(avg * 0.7));
        hi = static_cast<std::size_t>(std::llround(avg * 1.3));
    }
    Rng rng = Rng(spec.seed).split(g.name);
    text::Corpus corpus;
    corpus.domain = g.name;
    for (std::size_t i = 0; i < spec.count; ++i) {
        const int label = g.labels > 0 ? int(rng.uniform_int(0, g.labels - 1)) : 0;
        const auto target = std::size_t(rng.uniform_int(std::int64_t(lo), std::int64_t(hi)));
        std::vector<std::string> toks;
        if (g.multi_sentence) {
            while (toks.size() < target) {
                const std::size_t rest = target - toks.size();
                auto c = clause(g, pools, label, std::min<std::size_t>(rest, 8 + std::size_t(rng.uniform_int(0, 12))), rng);
                if (toks.size() + c.size() > target + c.size() / 2 && !toks.empty()) break;
                toks.insert(toks.end(), c.begin(), c.end());
            }
        } else {
            toks = clause(g, pools, label, target, rng);
        }
        if (spec.max_len > 0) {
            // Hard range: top up with further clauses, then cut at the maximum.
            while (toks.size() < lo) {
                auto c = clause(g, pools, label, lo - toks.size(), rng);
                toks.insert(toks.end(), c.begin(), c.end());
            }
            if (toks.size() > hi) toks.resize(hi);
        }
        std::string line;
        for (const auto& t : toks) {
            if (!line.empty()) line += ' ';
            line += t;
        }
        corpus.add(std::move(line), g.labels > 0 ? std::optional<int>(label) : std::nullopt);
    }
    return corpus;
}

std::vector<std::string> lexicon(double overlap) {
    std::set<std::string> all;
    for (const auto& g : grammars()) {
        for (const auto& l : literals(g)) all.insert(l);
    }
    for (const auto& [name, p] : cached_lexicon(overlap).domains) {
        for (const auto* pool : {&p.N, &p.V, &p.A, &p.R}) all.insert(pool->begin(), pool->end());
        for (const auto& v : p.P) all.insert(v.begin(), v.end());
        for (const auto& v : p.T) all.insert(v.begin(), v.end());
    }
    return {all.begin(), all.end()};
}

}  // namespace diffood::toy
