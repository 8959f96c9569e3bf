#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace diffood {

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;
};

/// Finite-difference checks (double precision, tiny shapes) for every
/// differentiable op and for the end-to-end diffusion, MLM and classifier
/// losses of small denoisers.
std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed = 1);

}  // namespace diffood
