#include "diffood/gradsuite.hpp"

#include <functional>

#include "diffood/diffusion.hpp"
#include "diffood/gradcheck.hpp"
#include "diffood/ops.hpp"

namespace diffood {

namespace {

constexpr double kStep = 1e-5;

Tensor64 random(Shape shape, Rng& rng, double scale = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor64(std::move(shape), std::move(v), true);
}

std::vector<double> weights(std::size_t n, Rng& rng) {
    std::vector<double> w(n);
    for (auto& x : w) x = rng.normal();
    return w;
}

/// Contracts an op's output with fixed random weights to get a scalar.
double check(const std::function<Tensor64(std::span<Tensor64>)>& op, std::vector<Tensor64> inputs, Rng& rng) {
    const auto probe = op(inputs);
    const auto w = weights(probe.numel(), rng);
    return finite_diff_check_params<double>([&] { return ops::weighted_sum(op(inputs), w); }, inputs, kStep);
}

text::TokenSequence tiny_seq(std::vector<std::int32_t> content, std::size_t n) {
    text::TokenSequence s;
    s.ids.assign(n, text::kPad);
    s.ids[0] = text::kBos;
    for (std::size_t i = 0; i < content.size(); ++i) s.ids[i + 1] = content[i];
    s.ids[content.size() + 1] = text::kEos;
    s.length = content.size() + 2;
    s.label = int(content.size() % 3);
    return s;
}

ModelConfig tiny_config(const std::string& tag) {
    ModelConfig c;
    c.d = 8;
    c.layers = 1;
    c.heads = tag == "large-analog" ? 4 : 2;
    c.ffn_mult = 2;
    c.n = 6;
    c.vocab_size = 10;
    c.num_classes = 3;
    c.size_tag = tag;
    return c;
}

/// Tiny model with weights at a larger scale than the 0.02 init, so every
/// path carries a gradient well above the comparison floor.
Denoiser64 tiny_model(const std::string& tag, std::uint64_t seed) {
    Denoiser64 m(tiny_config(tag), seed);
    Rng rng(seed + 100);
    for (auto& p : m.parameters()) {
        for (auto& v : p.tensor.data_mut()) v += 0.3 * rng.normal();
    }
    return m;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<GradCheckResult> out;
    auto run = [&](const std::string& name, const std::function<Tensor64(std::span<Tensor64>)>& op,
                   std::vector<Shape> shapes) {
        std::vector<Tensor64> inputs;
        for (auto& s : shapes) inputs.push_back(random(s, rng));
        out.push_back({name, check(op, std::move(inputs), rng)});
    };

    run("add", [](auto x) { return ops::add(x[0], x[1]); }, {{2, 3}, {2, 3}});
    run("add_broadcast", [](auto x) { return ops::add(x[0], x[1]); }, {{2, 3, 4}, {4}});
    run("sub", [](auto x) { return ops::sub(x[0], x[1]); }, {{2, 3, 4}, {3, 4}});
    run("mul", [](auto x) { return ops::mul(x[0], x[1]); }, {{3, 4}, {3, 4}});
    run("mul_broadcast", [](auto x) { return ops::mul(x[0], x[1]); }, {{2, 3, 4}, {3, 4}});
    run("scale", [](auto x) { return ops::scale(x[0], -1.7); }, {{2, 5}});
    run("scale_leading", [](auto x) {
        const double f[] = {0.3, -2.0};
        return ops::scale_leading(x[0], f);
    }, {{2, 3, 2}});
    run("matmul_shared", [](auto x) { return ops::matmul(x[0], x[1]); }, {{2, 3, 4}, {4, 5}});
    run("matmul_batched", [](auto x) { return ops::matmul(x[0], x[1]); }, {{2, 2, 3, 4}, {2, 2, 4, 3}});
    run("transpose", [](auto x) { return ops::transpose(x[0], 0, 2); }, {{2, 3, 4}});
    run("permute", [](auto x) { return ops::permute(x[0], {2, 0, 3, 1}); }, {{2, 3, 2, 3}});
    run("reshape", [](auto x) { return ops::reshape(x[0], {6, 2}); }, {{3, 4}});
    run("concat", [](auto x) { return ops::concat<double>({x[0], x[1]}, 1); }, {{2, 3, 2}, {2, 1, 2}});
    run("softmax_last", [](auto x) { return ops::softmax(x[0], 1); }, {{3, 5}});
    run("softmax_inner", [](auto x) { return ops::softmax(x[0], 0); }, {{4, 3}});
    run("layer_norm", [](auto x) { return ops::layer_norm(x[0], x[1], x[2]); }, {{2, 3, 6}, {6}, {6}});
    run("gelu", [](auto x) { return ops::gelu(x[0]); }, {{3, 7}});
    run("embedding", [](auto x) {
        const std::int32_t ids[] = {3, 0, 3, 1};
        return ops::embedding(x[0], ids);
    }, {{5, 3}});
    run("broadcast_rows", [](auto x) { return ops::broadcast_rows(x[0], 3); }, {{2, 4}});
    run("replace_rows", [](auto x) {
        const std::uint8_t flags[] = {0, 1, 0, 1};
        return ops::replace_rows(x[0], flags, x[1]);
    }, {{4, 3}, {3}});
    run("select_rows", [](auto x) {
        const std::size_t idx[] = {2, 0, 2};
        return ops::select_rows(x[0], idx);
    }, {{4, 3}});
    run("pool", [](auto x) {
        const double w[] = {0.5, 0.5, 0.0, 1.0 / 3, 1.0 / 3, 1.0 / 3};
        return ops::pool(x[0], w);
    }, {{2, 3, 4}});
    run("sum", [](auto x) { return ops::sum(x[0]); }, {{3, 4}});
    run("mean", [](auto x) { return ops::mean(x[0]); }, {{3, 4}});
    run("weighted_sum", [](auto x) {
        const double w[] = {1.0, -2.0, 0.5, 0.0, 3.0, 1.5};
        return ops::weighted_sum(x[0], w);
    }, {{2, 3}});
    run("mse_rows", [](auto x) { return ops::mse_rows(x[0], x[1]); }, {{2, 3, 4}, {2, 3, 4}});
    run("mse_loss", [](auto x) { return ops::mse_loss(x[0], x[1]); }, {{3, 4}, {3, 4}});
    run("cross_entropy_rows", [](auto x) {
        const std::int32_t t[] = {1, 4, 0};
        return ops::cross_entropy_rows(x[0], t);
    }, {{3, 5}});
    run("cross_entropy", [](auto x) {
        const std::int32_t t[] = {2, 2, 0, 1};
        return ops::cross_entropy(x[0], t);
    }, {{4, 3}});

    const auto schedule = NoiseSchedule::linear(1000);
    const std::vector<text::TokenSequence> batch = {tiny_seq({4, 7, 9}, 6), tiny_seq({5, 6}, 6)};

    for (const std::string tag : {"base-analog", "large-analog"}) {
        const auto model = tiny_model(tag, seed + 7);
        {
            auto x = random({2, 6, 8}, rng);
            const int t[] = {5, 800};
            const auto w = weights(2 * 6 * 8, rng);
            const double err = finite_diff_check<double>(
                [&](const Tensor64& in) { return ops::weighted_sum(model.denoise(in, t), w); }, x, kStep);
            out.push_back({"denoiser_input[" + tag + "]", err});
        }
        auto params = model.parameter_tensors();
        {
            const int t[] = {30, 600};
            const Rng r0 = rng.split(1);
            const Rng r1 = rng.split(2);
            auto loss = [&] {
                Rng rngs[] = {r0, r1};
                return recon_step<double>(model, batch, t, schedule, 0.1, rngs).loss;
            };
            out.push_back({"recon_loss[" + tag + "]", finite_diff_check_params<double>(loss, params, kStep)});
        }
        {
            const std::size_t masked[] = {1, 2, 6 + 1};
            const std::int32_t targets[] = {4, 7, 5};
            auto loss = [&] { return ops::cross_entropy(model.mlm_logits(batch, masked), targets); };
            out.push_back({"mlm_loss[" + tag + "]", finite_diff_check_params<double>(loss, params, kStep)});
        }
        {
            const std::int32_t labels[] = {0, 2};
            auto loss = [&] { return ops::cross_entropy(model.classifier_logits(batch), labels); };
            out.push_back({"classifier_loss[" + tag + "]", finite_diff_check_params<double>(loss, params, kStep)});
        }
    }
    return out;
}

}  // namespace diffood
