#include <cmath>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "diffood/exp.hpp"
#include "diffood/toydata.hpp"
#include "test_util.hpp"

using namespace diffood;
using namespace diffood::exp;

namespace {

ExperimentSpec small_spec(const std::string& name) {
    ExperimentSpec s;
    s.name = name;
    s.id_count = 40;
    s.eval_count = 8;
    s.ood_count = 8;
    s.train.steps = 6;
    s.train.batch_size = 4;
    s.train.lr = 1e-3;
    s.train.log_every = 2;
    s.baseline_steps = 4;
    s.draws = 1;
    s.mlm_patterns = 2;
    s.t_values = {100, 500};
    s.save_checkpoints = false;
    s.out = testutil::temp_dir("exp_" + name);
    return s;
}

std::size_t csv_rows(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) ++n;
    return n == 0 ? 0 : n - 1;
}

std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Config, SettingsAndErrors) {
    ExperimentSpec s;
    apply_setting(s, "t_values", "100, 700");
    apply_setting(s, "beta_ranges", "1e-3:0.2,1e-5:2e-3");
    apply_setting(s, "shots", "10,full");
    apply_setting(s, "short_lengths", "2-9");
    apply_setting(s, "standardize", "true");
    apply_setting(s, "score_mode", "rounding");
    apply_setting(s, "lr", "0.002");
    EXPECT_EQ(s.t_values, (std::vector<int>{100, 700}));
    ASSERT_EQ(s.beta_ranges.size(), 2u);
    EXPECT_EQ(s.beta_ranges[1][0], 1e-5);
    EXPECT_EQ(s.shots, (std::vector<std::size_t>{10, 0}));
    EXPECT_EQ(s.short_lengths.min, 2u);
    EXPECT_EQ(s.short_lengths.max, 9u);
    EXPECT_TRUE(s.standardize);
    EXPECT_EQ(s.score_mode, ReconScoreMode::RoundingOnly);
    EXPECT_EQ(s.train.lr, 0.002);
    EXPECT_THROW(apply_setting(s, "no_such_key", "1"), ConfigError);
    EXPECT_THROW(apply_setting(s, "draws", "-3"), ConfigError);
    EXPECT_THROW(apply_setting(s, "lr", "fast"), ConfigError);
    EXPECT_THROW(apply_setting(s, "t_values", ""), ConfigError);
    for (const auto& k : config_keys()) EXPECT_FALSE(k.empty());
}

TEST(Config, FileWithComments) {
    const auto dir = testutil::temp_dir("config_file");
    std::ofstream(dir / "a.cfg") << "# experiment\n\nsteps = 123  # inline\nid_domain=reviews\n";
    ExperimentSpec s;
    apply_config_file(s, dir / "a.cfg");
    EXPECT_EQ(s.train.steps, 123u);
    EXPECT_EQ(s.id_domain, "reviews");
    std::ofstream(dir / "b.cfg") << "steps 5\n";
    EXPECT_THROW(apply_config_file(s, dir / "b.cfg"), ConfigError);
    EXPECT_THROW(apply_config_file(s, dir / "missing.cfg"), ConfigError);
}

TEST(Config, Validation) {
    ExperimentSpec s;
    EXPECT_NO_THROW(s.validate());
    s.t_values.clear();
    EXPECT_THROW(s.validate(), ConfigError);
    s = ExperimentSpec{};
    s.lambda = 1.5;
    EXPECT_THROW(s.validate(), ConfigError);
    s = ExperimentSpec{};
    s.data_dir = "/nonexistent/corpora";
    EXPECT_THROW(s.validate(), ConfigError);
    EXPECT_EQ(ExperimentSpec{}.train_config().seed, ExperimentSpec{}.seed);
}

TEST(Distinct, Examples) {
    const std::vector<std::string> a = {"a a b"};
    EXPECT_DOUBLE_EQ(distinct_n(a, 1), 2.0 / 3.0);
    const std::vector<std::string> u = {"a b c", "d e"};
    EXPECT_EQ(distinct_n(u, 1), 1.0);
    EXPECT_EQ(distinct_n(u, 2), 1.0);
    const std::vector<std::string> short_ones = {"a", "b"};
    EXPECT_THROW(distinct_n(short_ones, 2), std::invalid_argument);
    EXPECT_THROW(distinct_n(a, 4), std::invalid_argument);
    EXPECT_THROW(distinct_n(std::vector<std::string>{}, 1), std::invalid_argument);
}

TEST(Distinct, MatchesSetOracle) {
    Rng rng(3);
    std::vector<std::string> samples;
    for (int i = 0; i < 30; ++i) {
        std::string s;
        for (int k = 0; k < rng.uniform_int(0, 8); ++k) s += "t" + std::to_string(rng.uniform_int(0, 5)) + " ";
        samples.push_back(s);
    }
    for (std::size_t n = 1; n <= 3; ++n) {
        std::set<std::string> grams;
        std::size_t total = 0;
        for (const auto& s : samples) {
            const auto toks = text::tokenize(s);
            for (std::size_t i = 0; i + n <= toks.size(); ++i) {
                std::string g;
                for (std::size_t j = 0; j < n; ++j) g += toks[i + j] + "|";
                grams.insert(g);
                ++total;
            }
        }
        EXPECT_DOUBLE_EQ(distinct_n(samples, n), double(grams.size()) / double(total));
    }
}

TEST(Project, RotationPreservesDistances) {
    Eigen::MatrixXd x(5, 2);
    x << 1, 0, -1, 0.5, 0, -2, 3, 1, -3, 0.5;
    x.rowwise() -= x.colwise().mean();
    const auto p = project_2d(x);
    for (Eigen::Index i = 0; i < 5; ++i) {
        for (Eigen::Index j = 0; j < 5; ++j) {
            EXPECT_NEAR((p.points.row(i) - p.points.row(j)).norm(), (x.row(i) - x.row(j)).norm(), 1e-5);
        }
    }
    EXPECT_GE(p.variance(0), p.variance(1));
    EXPECT_FALSE(p.degenerate);
}

TEST(Project, DuplicatedPointsGiveDuplicatedRows) {
    Rng rng(1);
    Eigen::MatrixXd x(4, 5);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal();
    Eigen::MatrixXd xx(8, 5);
    xx << x, x;
    const auto p = project_2d(xx);
    for (Eigen::Index i = 0; i < 4; ++i) EXPECT_LT((p.points.row(i) - p.points.row(i + 4)).norm(), 1e-12);
}

TEST(Project, VarianceOrderDegenerateAndErrors) {
    Rng rng(2);
    Eigen::MatrixXd x(50, 6);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.normal() * double(1 + i % 6);
    const auto p = project_2d(x);
    EXPECT_GE(p.variance(0), p.variance(1));
    EXPECT_NEAR(p.points.col(0).squaredNorm() / 50.0, p.variance(0), 1e-9);

    Eigen::MatrixXd line(4, 3);
    line << 1, 2, 3, 2, 4, 6, 3, 6, 9, 4, 8, 12;
    const auto d = project_2d(line);
    EXPECT_TRUE(d.degenerate);
    EXPECT_EQ(d.points.col(1).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_THROW(project_2d(Eigen::MatrixXd::Zero(2, 3)), std::invalid_argument);
}

TEST(ToyData, DeterministicUnderSeed) {
    for (const auto& g : toy::generators()) {
        toy::ToyDomainSpec s{.generator = g, .count = 50, .seed = 5};
        EXPECT_EQ(toy::generate(s).sentences, toy::generate(s).sentences) << g;
        auto other = s;
        other.seed = 6;
        EXPECT_NE(toy::generate(s).sentences, toy::generate(other).sentences) << g;
    }
}

TEST(ToyData, LengthAndOverlapTargets) {
    ExperimentSpec spec;
    spec.id_count = 1000;
    spec.out = testutil::temp_dir("gen_data");
    const auto stats = run_gen_data(spec);
    ASSERT_EQ(stats.size(), toy::generators().size());
    for (const auto& s : stats) {
        EXPECT_NEAR(s.avg_len, s.target_avg_len, 0.1 * s.target_avg_len) << s.domain;
        for (const auto& [other, v] : s.overlap) EXPECT_NEAR(v, spec.overlap, 0.1) << s.domain << " vs " << other;
        EXPECT_TRUE(std::filesystem::exists(spec.out / (s.domain + ".txt")));
    }
    EXPECT_TRUE(std::filesystem::exists(spec.out / "data_manifest.json"));
    const auto first = read_text(spec.out / "questions.txt");
    run_gen_data(spec);
    EXPECT_EQ(read_text(spec.out / "questions.txt"), first);
}

TEST(ToyData, HardLengthRange) {
    toy::ToyDomainSpec s{.generator = "reviews", .count = 200, .seed = 1, .min_len = 30, .max_len = 39};
    for (const auto& line : toy::generate(s).sentences) {
        const auto n = text::tokenize(line).size();
        EXPECT_GE(n, 30u);
        EXPECT_LE(n, 39u);
    }
}

TEST(Prepare, SplitsAndSharedVocab) {
    const auto spec = small_spec("prepare");
    const auto ws = prepare(spec);
    EXPECT_EQ(ws.id_train.seqs.size(), 40u);
    EXPECT_EQ(ws.id_dev.seqs.size(), 8u);
    EXPECT_EQ(ws.id_test.seqs.size(), 8u);
    ASSERT_EQ(ws.ood.size(), 1u);
    EXPECT_EQ(ws.ood[0].name, "captions");
    EXPECT_EQ(ws.id_test.name, "questions");
    EXPECT_EQ(ws.n % 8, 0u);
    for (const auto& s : ws.ood[0].seqs) {
        EXPECT_EQ(s.ids.size(), ws.n);
        for (auto id : s.ids) EXPECT_LT(std::size_t(id), ws.vocab.size());
    }
}

TEST(Prepare, LoadsCorporaFromDisk) {
    const auto dir = testutil::temp_dir("prepare_disk");
    {
        std::ofstream id(dir / "mine.jsonl");
        for (int i = 0; i < 30; ++i) id << "{\"text\": \"alpha beta " << i << "\", \"label\": " << i % 2 << "}\n";
        std::ofstream ood(dir / "other.txt");
        for (int i = 0; i < 5; ++i) ood << "gamma delta\n";
    }
    auto spec = small_spec("prepare_disk");
    spec.data_dir = dir;
    spec.id_domain = "mine";
    spec.ood_domains = {"other"};
    spec.id_count = 24;
    spec.eval_count = 3;
    const auto ws = prepare(spec);
    EXPECT_EQ(ws.id_train.seqs.size() + ws.id_dev.seqs.size() + ws.id_test.seqs.size(), 30u);
    EXPECT_TRUE(ws.vocab.contains("gamma"));
    EXPECT_TRUE(ws.id_train.seqs[0].label.has_value());
}

TEST(Runners, SweepRowCounts) {
    auto spec = small_spec("sweep");
    const auto ws = prepare(spec);
    Manifest manifest(spec);
    const auto ckpt = obtain_checkpoint(spec, ws, manifest);
    const auto rows = run_sweep_t(spec, ws, ckpt, manifest);
    // ID dev, ID test and one OOD set, each at two t values.
    std::set<std::string> datasets;
    for (const auto& r : rows) datasets.insert(r.dataset);
    EXPECT_EQ(rows.size(), datasets.size() * spec.t_values.size());
    EXPECT_EQ(csv_rows(spec.out / "sweep_t.csv"), rows.size());
    EXPECT_TRUE(std::filesystem::exists(spec.out / "sweep_t.svg"));

    spec.t_values = {300};
    spec.ood_domains = {"captions"};
    const auto one = run_sweep_t(spec, ws, ckpt, manifest);
    EXPECT_EQ(one.size(), datasets.size());

    const std::vector<Checkpoint> series = {ckpt};
    const auto steps = run_sweep_steps(spec, ws, series, manifest);
    EXPECT_EQ(steps.size(), datasets.size() * spec.step_t_values.size());
    manifest.write(spec.out);
    const auto doc = nlohmann::json::parse(read_text(spec.out / "manifest.json"));
    EXPECT_EQ(doc.at("spec").at("seed"), spec.seed);
}

TEST(Runners, DetectionLambdaAndFewshot) {
    auto spec = small_spec("detect");
    spec.lambdas = {0.5};
    spec.shots = {4};
    spec.fewshot_seeds = 1;
    spec.fewshot_steps = 3;
    const auto ws = prepare(spec);
    Manifest manifest(spec);
    const auto ckpt = obtain_checkpoint(spec, ws, manifest);

    const auto det = run_detection(spec, ws, &ckpt, manifest, false);
    std::set<std::string> detectors;
    for (const auto& r : det.metrics) detectors.insert(r.detector);
    EXPECT_EQ(detectors, (std::set<std::string>{"diffusion", "diffusion+maha"}));
    EXPECT_EQ(csv_rows(spec.out / "metrics.csv"), det.metrics.size());
    EXPECT_EQ(csv_rows(spec.out / "scores.csv"), (8u + 8u) * detectors.size());

    const auto full = run_detection(spec, ws, &ckpt, manifest, true);
    std::set<std::string> all;
    for (const auto& r : full.metrics) all.insert(r.detector);
    EXPECT_TRUE(all.count("mlm"));
    EXPECT_TRUE(all.count("cosine"));
    for (const auto& r : full.metrics) {
        EXPECT_GE(r.metrics.auroc, 0.0);
        EXPECT_LE(r.metrics.auroc, 1.0);
    }

    EXPECT_EQ(run_lambda_sweep(spec, ws, ckpt, manifest).size(), 1u);
    const auto fs = run_fewshot(spec, ws, manifest);
    ASSERT_FALSE(fs.empty());
    for (const auto& r : fs) {
        EXPECT_EQ(r.k, 4u);
        EXPECT_EQ(r.train_size, 4u);
    }
}

TEST(Runners, IdenticalSizesGiveIdenticalRows) {
    auto spec = small_spec("sizes");
    spec.sizes = {"base-analog", "base-analog"};
    const auto ws = prepare(spec);
    Manifest manifest(spec);
    const auto rows = run_model_size(spec, ws, manifest);
    ASSERT_EQ(rows.size() % 2, 0u);
    const std::size_t half = rows.size() / 2;
    EXPECT_EQ(half, 1u + ws.ood.size());
    for (std::size_t i = 0; i < half; ++i) {
        EXPECT_EQ(rows[i].dataset, rows[half + i].dataset);
        EXPECT_EQ(rows[i].l_recon, rows[half + i].l_recon);
    }
}

TEST(Runners, SingleLengthBin) {
    auto spec = small_spec("length");
    spec.short_lengths = {3, 8};
    spec.long_lengths = {5, 9};
    spec.eval_lengths = {3, 9};
    spec.id_count = 20;
    Manifest manifest(spec);
    const auto rows = run_length_bins(spec, manifest);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].model, "short");
    EXPECT_EQ(rows[1].model, "long");
    EXPECT_EQ(rows[0].count, spec.eval_count);
}

TEST(Runners, StatsProjectDistinct) {
    auto spec = small_spec("misc");
    spec.distinct_samples = 3;
    const auto ws = prepare(spec);
    Manifest manifest(spec);
    const auto stats = run_stats(spec, ws, manifest);
    ASSERT_EQ(stats.size(), 1u);
    EXPECT_GE(stats[0].stats.token_overlap, 0.0);
    EXPECT_LE(stats[0].stats.token_overlap, 1.0);

    auto small_t = spec;
    small_t.train.T = 20;
    const auto ckpt = obtain_checkpoint(small_t, ws, manifest);
    const auto p = run_project(spec, ws, ckpt, manifest);
    EXPECT_EQ(std::size_t(p.points.rows()), ws.id_test.seqs.size() + ws.ood[0].seqs.size());
    EXPECT_EQ(csv_rows(spec.out / "projection.csv"), std::size_t(p.points.rows()));
    const auto d = run_distinct(small_t, ckpt, manifest);
    EXPECT_EQ(d.samples.size(), 3u);
}

TEST(Report, CsvQuotingAndFormat) {
    const auto dir = testutil::temp_dir("report");
    write_csv(dir / "x.csv", {"a", "b"}, {{"plain", "with,comma"}, {"q\"uote", "1"}});
    EXPECT_EQ(read_text(dir / "x.csv"), "a,b\nplain,\"with,comma\"\n\"q\"\"uote\",1\n");
    EXPECT_EQ(fmt(0.5), "0.5");
    EXPECT_EQ(fmt(1.0 / 3.0), "0.333333333");
    const auto svg = line_plot_svg("t", "x", "y", {{"s", {1, 2}, {3, 4}}});
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
}
