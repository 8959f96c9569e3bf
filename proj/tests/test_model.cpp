#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "diffood/gradcheck.hpp"
#include "diffood/gradsuite.hpp"
#include "diffood/model.hpp"
#include "diffood/ops.hpp"
#include "diffood/trainer.hpp"
#include "test_util.hpp"

using namespace diffood;
using testutil::make_seq;
using testutil::random_tensor;

namespace {

ModelConfig small_config(std::size_t vocab, std::size_t n, std::size_t classes = 0) {
    ModelConfig c;
    c.d = 16;
    c.layers = 1;
    c.heads = 2;
    c.ffn_mult = 2;
    c.n = n;
    c.vocab_size = vocab;
    c.num_classes = classes;
    return c;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
    const std::size_t w = t.shape().back();
    return {t.data().begin() + std::ptrdiff_t(r * w), t.data().begin() + std::ptrdiff_t((r + 1) * w)};
}

}  // namespace

TEST(ModelConfig, Validation) {
    auto c = small_config(10, 8);
    EXPECT_NO_THROW(c.validate());
    c.heads = 3;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = small_config(10, 8);
    c.layers = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    EXPECT_THROW(ModelConfig::for_size_tag("huge", 10, 8), std::invalid_argument);
    const auto base = ModelConfig::base_analog(50, 16);
    const auto large = ModelConfig::large_analog(50, 16);
    EXPECT_EQ(base.d, 64u);
    EXPECT_EQ(base.layers, 2u);
    EXPECT_EQ(large.d, 128u);
    EXPECT_EQ(large.layers, 4u);
}

TEST(Denoiser, ShapeContractAndBatchIndependence) {
    for (const auto& cfg : {small_config(12, 6), ModelConfig::base_analog(12, 6)}) {
        const Denoiser m(cfg, 1);
        const auto one = random_tensor<float>({1, 6, cfg.d}, 2, 1.0, false);
        std::vector<float> twice(one.data().begin(), one.data().end());
        twice.insert(twice.end(), one.data().begin(), one.data().end());
        const std::vector<int> t = {400, 400};
        NoGradGuard guard;
        const auto out = m.denoise(Tensor({2, 6, cfg.d}, twice), t);
        EXPECT_EQ(out.shape(), (Shape{2, 6, cfg.d}));
        const std::size_t half = 6 * cfg.d;
        for (std::size_t i = 0; i < half; ++i) EXPECT_EQ(out.data()[i], out.data()[half + i]);
    }
}

TEST(Denoiser, BatchPermutationConsistent) {
    const Denoiser m(small_config(12, 5), 3);
    const auto x = random_tensor<float>({3, 5, 16}, 4, 1.0, false);
    const std::vector<int> t = {10, 500, 990};
    NoGradGuard guard;
    const auto out = m.denoise(x, t);
    const std::vector<std::size_t> perm = {2, 0, 1};
    std::vector<float> px;
    std::vector<int> pt;
    for (auto p : perm) {
        px.insert(px.end(), x.data().begin() + std::ptrdiff_t(p * 80), x.data().begin() + std::ptrdiff_t((p + 1) * 80));
        pt.push_back(t[p]);
    }
    const auto pout = m.denoise(Tensor({3, 5, 16}, px), pt);
    for (std::size_t b = 0; b < 3; ++b) {
        // Equal up to float rounding: GEMM blocking depends on a row's place in the batch.
        for (std::size_t i = 0; i < 80; ++i) EXPECT_NEAR(pout.data()[b * 80 + i], out.data()[perm[b] * 80 + i], 1e-6);
    }
}

TEST(Denoiser, WrongShapeIsAnError) {
    const Denoiser m(small_config(12, 6), 1);
    const std::vector<int> t = {1};
    EXPECT_THROW(m.denoise(Tensor::zeros({1, 5, 16}), t), ShapeError);
    EXPECT_THROW(m.denoise(Tensor::zeros({1, 6, 8}), t), ShapeError);
    const std::vector<int> t2 = {1, 2};
    EXPECT_THROW(m.denoise(Tensor::zeros({1, 6, 16}), t2), ShapeError);
}

TEST(Denoiser, InputGradientMatchesFiniteDifferences) {
    ModelConfig cfg = small_config(10, 4);
    cfg.d = 8;
    Denoiser64 m(cfg, 5);
    const auto x = random_tensor<double>({2, 4, 8}, 6);
    const auto w = testutil::random_weights(64, 7);
    const std::vector<int> t = {3, 700};
    const auto f = [&](const Tensor64& in) { return ops::weighted_sum(m.denoise(in, t), w); };
    EXPECT_LE(finite_diff_check<double>(f, x, 1e-5), 1e-3);
}

TEST(Denoiser, GradientSuitePasses) {
    for (const auto& r : run_gradient_suite(3)) EXPECT_LE(r.max_rel_error, 1e-3) << r.name;
}

TEST(HiddenRepr, SingleTokenAndDeterminism) {
    const Denoiser m(small_config(12, 6), 2);
    text::TokenSequence s;
    s.ids = {5, 0, 0, 0, 0, 0};
    s.length = 1;
    const std::vector<text::TokenSequence> batch = {s};
    NoGradGuard guard;
    const auto h = m.hidden_repr(batch);
    const int t0[] = {0};
    const auto states = m.encode(m.embed(batch), t0);
    const auto first = row(states, 0);
    for (std::size_t k = 0; k < 16; ++k) EXPECT_FLOAT_EQ(h.data()[k], float(first[k]));

    const std::vector<text::TokenSequence> pair = {make_seq({4, 7}, 6), make_seq({4, 7}, 6)};
    const auto hp = m.hidden_repr(pair);
    EXPECT_EQ(row(hp, 0), row(hp, 1));
}

TEST(HiddenRepr, PoolingMatchesLoop) {
    const Denoiser m(small_config(12, 8), 3);
    const std::vector<text::TokenSequence> batch = {make_seq({4, 5, 6}, 8), make_seq({7}, 8)};
    NoGradGuard guard;
    const auto h = m.hidden_repr(batch);
    const std::vector<int> t0 = {0, 0};
    const auto states = m.encode(m.embed(batch), t0);
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t k = 0; k < 16; ++k) {
            double s = 0.0;
            for (std::size_t i = 0; i < batch[b].length; ++i) s += states.data()[(b * 8 + i) * 16 + k];
            EXPECT_NEAR(h.data()[b * 16 + k], s / double(batch[b].length), 1e-5);
        }
    }
}

TEST(HiddenRepr, EmptySentenceIsAnError) {
    const Denoiser m(small_config(12, 4), 1);
    text::TokenSequence s;
    s.ids.assign(4, text::kPad);
    const std::vector<text::TokenSequence> batch = {s};
    EXPECT_THROW(m.hidden_repr(batch), text::DataError);
}

TEST(Mlm, NoMaskedPositionsIsAnError) {
    const Denoiser m(small_config(12, 6), 1);
    const std::vector<text::TokenSequence> batch = {make_seq({4, 5}, 6)};
    EXPECT_THROW(m.mlm_logits(batch, {}), std::invalid_argument);
    Rng rng(1);
    EXPECT_THROW(choose_mask(batch[0], 0.0, rng), std::invalid_argument);
}

TEST(Mlm, ChooseMaskRules) {
    Rng rng(2);
    std::vector<std::int32_t> content(20, 5);
    const auto many = choose_mask(make_seq(content, 24), 0.15, rng);
    EXPECT_EQ(many.size(), 3u);
    for (auto i : many) {
        EXPECT_GE(i, 1u);
        EXPECT_LE(i, 20u);
    }
    EXPECT_EQ(choose_mask(make_seq({7}, 4), 0.15, rng), (std::vector<std::size_t>{1}));
    text::TokenSequence one;
    one.ids = {6, 0};
    one.length = 1;
    EXPECT_EQ(choose_mask(one, 0.15, rng), (std::vector<std::size_t>{0}));
}

TEST(Mlm, UntrainedLossNearChance) {
    const std::size_t V = 60;
    Rng rng(3);
    double total = 0.0;
    const int trials = 30;
    for (int i = 0; i < trials; ++i) {
        const Denoiser m(small_config(V, 12), std::uint64_t(i));
        std::vector<text::TokenSequence> batch;
        std::vector<std::size_t> masked;
        std::vector<std::int32_t> targets;
        for (std::size_t b = 0; b < 4; ++b) {
            std::vector<std::int32_t> content;
            for (int k = 0; k < 10; ++k) content.push_back(std::int32_t(rng.uniform_int(4, std::int64_t(V) - 1)));
            batch.push_back(make_seq(content, 12));
            for (auto p : choose_mask(batch.back(), 0.15, rng)) {
                masked.push_back(b * 12 + p);
                targets.push_back(batch.back().ids[p]);
            }
        }
        NoGradGuard guard;
        total += ops::cross_entropy(m.mlm_logits(batch, masked), targets).item();
    }
    // Tied N(0, 1) embeddings give random logits of small but nonzero spread.
    EXPECT_NEAR(total / trials, std::log(double(V)), 0.15 * std::log(double(V)));
}

TEST(Classifier, ProbabilitiesAndDegenerateHead) {
    const std::vector<text::TokenSequence> batch = {make_seq({4, 5}, 6), make_seq({6}, 6)};
    NoGradGuard guard;
    const Denoiser m3(small_config(12, 6, 3), 1);
    const auto p = ops::softmax(m3.classifier_logits(batch), 1);
    for (std::size_t b = 0; b < 2; ++b) {
        EXPECT_NEAR(p.data()[b * 3] + p.data()[b * 3 + 1] + p.data()[b * 3 + 2], 1.0, 1e-6);
    }
    const Denoiser m1(small_config(12, 6, 1), 1);
    const auto p1 = ops::softmax(m1.classifier_logits(batch), 1);
    EXPECT_EQ(p1.data()[0], 1.0f);
    EXPECT_EQ(p1.data()[1], 1.0f);
    const Denoiser none(small_config(12, 6), 1);
    EXPECT_THROW(none.classifier_logits(batch), std::logic_error);
}

TEST(Training, MlmLossDecreases) {
    // 1k sentences from a small bigram-like grammar.
    Rng rng(4);
    std::vector<text::TokenSequence> data;
    for (int i = 0; i < 1000; ++i) {
        std::vector<std::int32_t> content;
        std::int32_t tok = std::int32_t(rng.uniform_int(4, 11));
        for (int k = 0; k < 8; ++k) {
            content.push_back(tok);
            tok = std::int32_t(4 + (tok - 4 + 1 + rng.uniform_int(0, 1)) % 8);
        }
        data.push_back(make_seq(content, 12));
    }
    Denoiser m(small_config(12, 12), 5);
    // Fixed masks over 64 held sentences, scored before and after training.
    Rng mask_rng(6);
    const std::vector<text::TokenSequence> held(data.begin(), data.begin() + 64);
    std::vector<std::size_t> masked;
    std::vector<std::int32_t> targets;
    for (std::size_t b = 0; b < held.size(); ++b) {
        for (auto p : choose_mask(held[b], 0.15, mask_rng)) {
            masked.push_back(b * 12 + p);
            targets.push_back(held[b].ids[p]);
        }
    }
    const auto held_loss = [&] {
        NoGradGuard guard;
        return double(ops::cross_entropy(m.mlm_logits(held, masked), targets).item());
    };
    const double before = held_loss();
    TrainConfig cfg;
    cfg.steps = 2000;
    cfg.lr = 1e-3;
    cfg.seed = 6;
    cfg.objective = Objective::Mlm;
    train(cfg, m, data, {});
    EXPECT_LT(held_loss(), 0.7 * before);
}

TEST(Training, ClassifierSeparatesLabels) {
    // Label 1 sentences contain token 4, label 0 sentences token 5.
    Rng rng(7);
    std::vector<text::TokenSequence> data;
    for (int i = 0; i < 400; ++i) {
        const int label = i % 2;
        std::vector<std::int32_t> content;
        for (int k = 0; k < 6; ++k) content.push_back(std::int32_t(rng.uniform_int(6, 15)));
        content[std::size_t(rng.uniform_int(0, 5))] = label ? 4 : 5;
        auto s = make_seq(content, 10);
        s.label = label;
        data.push_back(s);
    }
    Denoiser m(small_config(16, 10, 2), 8);
    TrainConfig cfg;
    cfg.steps = 2000;
    cfg.lr = 1e-3;
    cfg.seed = 9;
    cfg.objective = Objective::Classifier;
    train(cfg, m, data, {});
    NoGradGuard guard;
    const auto logits = m.classifier_logits(data);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const int pred = logits.data()[i * 2 + 1] > logits.data()[i * 2] ? 1 : 0;
        hits += pred == *data[i].label;
    }
    EXPECT_GT(double(hits) / double(data.size()), 0.9);
}
