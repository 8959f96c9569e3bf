#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffood/text.hpp"

// Synthetic template-grammar corpora standing in for real benchmark datasets.
namespace diffood::toy {

struct ToyDomainSpec {
    std::string generator;  // questions | captions | reviews | news
    std::size_t count = 5000;
    double avg_len = 0.0;   // target mean tokens per sentence; 0 uses the domain default
    double overlap = 0.5;   // target fraction of a domain's tokens shared with another domain
    std::uint64_t seed = 0;
    /// Optional hard length range (tokens); when set, targets are uniform in it.
    std::size_t min_len = 0;
    std::size_t max_len = 0;
};

const std::vector<std::string>& generators();
double default_avg_len(const std::string& generator);
/// Number of classes carried by the generator's labels (0: unlabeled).
int num_labels(const std::string& generator);

/// Deterministic under spec.seed. Labels are set iff num_labels > 0.
text::Corpus generate(const ToyDomainSpec& spec);

/// Every token any generator can emit at the given overlap.
std::vector<std::string> lexicon(double overlap = 0.5);

}  // namespace diffood::toy
