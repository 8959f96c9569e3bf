#include "diffood/adam.hpp"

namespace diffood {

AdamState adam_init(std::span<const Tensor> params, const AdamHyper& hyper) {
    AdamState state;
    state.hyper = hyper;
    for (const auto& p : params) {
        state.m.emplace_back(p.numel(), 0.0f);
        state.v.emplace_back(p.numel(), 0.0f);
    }
    return state;
}

void adam_step(std::span<Tensor> params, AdamState& state) {
    if (params.size() != state.m.size()) {
        throw ShapeError("adam_step", Shape{params.size()}, Shape{state.m.size()}, "parameter count differs from state");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].numel() != state.m[i].size()) {
            throw ShapeError("adam_step", params[i].shape(), Shape{state.m[i].size()}, "moment buffer size differs");
        }
    }
    state.step_count += 1;
    const auto& h = state.hyper;
    const double t = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(h.beta1, t);
    const double c2 = 1.0 - std::pow(h.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (!p.requires_grad()) continue;
        auto w = p.data_mut();
        auto g = p.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g[j];
            const double mj = h.beta1 * m[j] + (1.0 - h.beta1) * gj;
            const double vj = h.beta2 * v[j] + (1.0 - h.beta2) * gj * gj;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            const double update = h.lr * (mj / c1) / (std::sqrt(vj / c2) + h.eps);
            w[j] = static_cast<float>(w[j] - update);
        }
    }
}

}  // namespace diffood
