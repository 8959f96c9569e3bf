#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "diffood/tensor.hpp"

namespace diffood {

struct AdamHyper {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::uint64_t step_count = 0;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    AdamHyper hyper;
};

AdamState adam_init(std::span<const Tensor> params, const AdamHyper& hyper = {});

/// One bias-corrected Adam update using each parameter's accumulated grad and
/// `state.hyper.lr`. Increments `state.step_count` by one.
void adam_step(std::span<Tensor> params, AdamState& state);

}  // namespace diffood
