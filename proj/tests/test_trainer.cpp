#include <cmath>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "diffood/trainer.hpp"
#include "test_util.hpp"

using namespace diffood;
using testutil::make_seq;

namespace {

ModelConfig tiny(std::size_t vocab = 12, std::size_t n = 8) {
    ModelConfig c;
    c.d = 16;
    c.layers = 1;
    c.heads = 2;
    c.ffn_mult = 2;
    c.n = n;
    c.vocab_size = vocab;
    return c;
}

std::vector<text::TokenSequence> corpus(std::size_t count, std::uint64_t seed, std::int32_t lo = 4,
                                        std::int32_t hi = 11) {
    Rng rng(seed);
    std::vector<text::TokenSequence> out;
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<std::int32_t> c;
        const auto len = rng.uniform_int(1, 5);
        for (int k = 0; k < len; ++k) c.push_back(std::int32_t(rng.uniform_int(lo, hi)));
        out.push_back(make_seq(c, 8));
    }
    return out;
}

std::vector<std::string> vocab_list(std::size_t v) {
    std::vector<std::string> out = {"<pad>", "<unk>", "<bos>", "<eos>"};
    for (std::size_t i = 4; i < v; ++i) out.push_back("w" + std::to_string(i));
    return out;
}

TrainConfig quick(std::size_t steps, std::uint64_t seed = 1) {
    TrainConfig c;
    c.steps = steps;
    c.lr = 1e-3;
    c.seed = seed;
    c.log_every = 5;
    return c;
}

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

TEST(TrainConfig, LinearDecay) {
    TrainConfig c;
    c.steps = 1000;
    c.lr = 5e-5;
    for (std::size_t s : {0u, 1u, 250u, 999u, 1000u}) {
        EXPECT_NEAR(c.lr_at(s), 5e-5 * (1.0 - double(s) / 1000.0), 1e-9);
    }
    c.lr_decay = false;
    EXPECT_EQ(c.lr_at(700), 5e-5);
}

TEST(TrainConfig, Defaults) {
    const TrainConfig c;
    EXPECT_EQ(c.lr, 5e-5);
    EXPECT_EQ(c.batch_size, 16u);
    EXPECT_EQ(c.T, 1000);
    EXPECT_EQ(c.beta_start, 1e-4);
    EXPECT_EQ(c.beta_end, 0.02);
    EXPECT_EQ(c.sigma0, 1e-4);
}

TEST(Train, ZeroStepsReturnsInitialCheckpoint) {
    Denoiser m(tiny(), 1);
    const auto before = parameter_hash(m);
    const auto data = corpus(10, 2);
    const auto series = train(quick(0), m, data, vocab_list(12));
    ASSERT_EQ(series.size(), 1u);
    EXPECT_EQ(series[0].step, 0u);
    EXPECT_EQ(parameter_hash(*series[0].model), before);
}

TEST(Train, BitIdenticalUnderSeed) {
    const auto data = corpus(40, 3);
    Denoiser a(tiny(), 4);
    Denoiser b(tiny(), 4);
    train(quick(30, 5), a, data, vocab_list(12));
    train(quick(30, 5), b, data, vocab_list(12));
    EXPECT_EQ(parameter_hash(a), parameter_hash(b));
    Denoiser c(tiny(), 4);
    train(quick(30, 6), c, data, vocab_list(12));
    EXPECT_NE(parameter_hash(a), parameter_hash(c));
}

TEST(Train, CheckpointCadenceAndCurve) {
    const auto data = corpus(40, 3);
    Denoiser m(tiny(), 4);
    auto cfg = quick(20);
    cfg.checkpoint_every = 5;
    std::ostringstream csv;
    TrainHooks hooks;
    hooks.curve_csv = &csv;
    const auto series = train(cfg, m, data, vocab_list(12), hooks);
    std::vector<std::size_t> steps;
    for (const auto& c : series) steps.push_back(c.step);
    EXPECT_EQ(steps, (std::vector<std::size_t>{0, 5, 10, 15, 20}));
    std::istringstream in(csv.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "step,loss,lr");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 4u);
    EXPECT_EQ(series.back().history.size(), 4u);
    EXPECT_NEAR(series.back().history[0].lr, cfg.lr_at(4), 1e-15);
}

TEST(Train, NonFiniteLossAborts) {
    const auto data = corpus(20, 3);
    Denoiser m(tiny(), 4);
    auto cfg = quick(200);
    cfg.lr = 1e30;
    cfg.lr_decay = false;
    try {
        train(cfg, m, data, vocab_list(12));
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_GE(e.step, 2u);
        EXPECT_EQ(e.lr, 1e30);
    }
}

TEST(Train, InvalidConfigs) {
    const auto data = corpus(4, 3);
    Denoiser m(tiny(), 4);
    auto cfg = quick(5);
    cfg.batch_size = 0;
    EXPECT_THROW(train(cfg, m, data, {}), std::invalid_argument);
    cfg = quick(5);
    cfg.objective = Objective::Classifier;
    EXPECT_THROW(train(cfg, m, data, {}), std::invalid_argument);
    EXPECT_THROW(train(quick(5), m, std::span<const text::TokenSequence>{}, {}), text::DataError);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    const auto dir = testutil::temp_dir("ckpt_roundtrip");
    const auto data = corpus(20, 3);
    Denoiser m(tiny(), 4);
    const auto series = train(quick(10), m, data, vocab_list(12));
    save_checkpoint(series.back(), dir / "a");
    const auto loaded = load_checkpoint(dir / "a");
    save_checkpoint(loaded, dir / "b");
    EXPECT_EQ(read_bytes(dir / "a" / "params.bin"), read_bytes(dir / "b" / "params.bin"));
    EXPECT_EQ(read_bytes(dir / "a" / "manifest.json"), read_bytes(dir / "b" / "manifest.json"));
    EXPECT_EQ(parameter_hash(*loaded.model), parameter_hash(m));
    EXPECT_EQ(loaded.train_config, series.back().train_config);
    EXPECT_EQ(loaded.step, 10u);
    EXPECT_EQ(loaded.vocab, vocab_list(12));
}

TEST(Checkpoint, LoadedModelReplaysLossBitExactly) {
    const auto dir = testutil::temp_dir("ckpt_replay");
    const auto data = corpus(20, 3);
    Denoiser m(tiny(), 4);
    const auto series = train(quick(10), m, data, vocab_list(12));
    const NamedData ds[] = {{"dev", data}};
    const int ts[] = {300};
    const auto recorded = eval_loop(std::span(&series.back(), 1), ds, ts, 2, 9);
    save_checkpoint(series.back(), dir);
    const auto loaded = load_checkpoint(dir);
    const auto replay = eval_loop(std::span(&loaded, 1), ds, ts, 2, 9);
    EXPECT_EQ(replay[0].l_recon, recorded[0].l_recon);
}

TEST(Checkpoint, TruncatedBufferIsAnError) {
    const auto dir = testutil::temp_dir("ckpt_trunc");
    Denoiser m(tiny(), 4);
    const auto series = train(quick(0), m, corpus(4, 3), vocab_list(12));
    save_checkpoint(series.back(), dir);
    const auto size = std::filesystem::file_size(dir / "params.bin");
    std::filesystem::resize_file(dir / "params.bin", size - 7);
    EXPECT_THROW(load_checkpoint(dir), CheckpointError);
}

TEST(Checkpoint, ShapeMismatchNamesBuffer) {
    const auto dir = testutil::temp_dir("ckpt_shape");
    Denoiser m(tiny(), 4);
    save_checkpoint(train(quick(0), m, corpus(4, 3), vocab_list(12)).back(), dir);
    auto manifest = nlohmann::json::parse(read_bytes(dir / "manifest.json"));
    manifest["entries"][0]["shape"] = {3, 3};
    std::ofstream(dir / "manifest.json") << manifest.dump(2);
    try {
        load_checkpoint(dir);
        FAIL() << "expected CheckpointError";
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("buffer '"), std::string::npos) << e.what();
    }
}

TEST(EvalLoop, TableShape) {
    Denoiser m(tiny(), 4);
    const auto series = train(quick(0), m, corpus(4, 3), vocab_list(12));
    const auto a = corpus(6, 1);
    const auto b = corpus(6, 2);
    const NamedData one[] = {{"a", a}};
    const int t1[] = {100};
    EXPECT_EQ(eval_loop(series, one, t1, 1, 1).size(), 1u);
    const NamedData two[] = {{"a", a}, {"b", b}};
    const int t3[] = {100, 500, 900};
    const auto rows = eval_loop(series, two, t3, 1, 1);
    EXPECT_EQ(rows.size(), 6u);
    EXPECT_EQ(rows[4].dataset, "b");
    EXPECT_EQ(rows[4].t, 500);
    EXPECT_THROW(eval_loop(series, std::span<const NamedData>{}, t1, 1, 1), std::invalid_argument);
}

TEST(EvalLoop, MoreDrawsStayWithinMonteCarloError) {
    const auto data = corpus(60, 5);
    Denoiser m(tiny(), 4);
    const auto series = train(quick(100), m, data, vocab_list(12));
    const NamedData ds[] = {{"dev", data}};
    const int ts[] = {500};
    const auto k10 = eval_loop(std::span(&series.back(), 1), ds, ts, 10, 3)[0];
    const auto k20 = eval_loop(std::span(&series.back(), 1), ds, ts, 20, 3)[0];
    EXPECT_LT(std::abs(k20.l_recon - k10.l_recon), k10.stderr_recon);
}

TEST(EvalLoop, TrainingLowersSmallTLoss) {
    const auto data = corpus(200, 5);
    Denoiser m(tiny(), 4);
    auto cfg = quick(400);
    cfg.checkpoint_every = 400;
    const auto series = train(cfg, m, data, vocab_list(12));
    const NamedData ds[] = {{"dev", std::span(data).subspan(0, 50)}};
    const int ts[] = {100};
    const auto rows = eval_loop(series, ds, ts, 4, 3);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_LE(rows.back().l_recon, rows.front().l_recon);
}
