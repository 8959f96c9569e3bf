#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "diffood/detect.hpp"
#include "diffood/model.hpp"
#include "diffood/text.hpp"
#include "diffood/trainer.hpp"

// Experiment runners shared by the CLI and the acceptance suite.
namespace diffood::exp {

struct LengthRange {
    std::size_t min = 0;
    std::size_t max = 0;
};

struct ExperimentSpec {
    std::string name = "experiment";
    std::string id_domain = "questions";
    std::vector<std::string> ood_domains = {"captions"};
    /// Directory with <domain>.jsonl or <domain>.txt corpora; empty generates toy data.
    std::filesystem::path data_dir;
    std::size_t id_count = 5000;   // ID training sentences (dev/test come on top)
    std::size_t eval_count = 200;  // ID dev and ID test sentences each
    std::size_t ood_count = 200;   // sentences per OOD domain
    double overlap = 0.5;
    std::size_t seq_len = 0;  // padded length n; 0 derives it from the data

    std::string size_tag = "base-analog";
    double embed_std = 1.0;
    TrainConfig train;
    std::size_t pretrain_steps = 0;   // MLM steps on a mixed-domain corpus before diffusion
    std::size_t baseline_steps = 1000;  // steps for the MLM and classifier baselines
    std::size_t fewshot_steps = 0;      // 0 uses train.steps

    std::vector<int> t_values = {100, 200, 300, 400, 500, 600, 700, 800, 900};
    std::vector<int> step_t_values = {500, 700};
    std::vector<double> lambdas = {0.99, 0.9, 0.7, 0.5, 0.3, 0.1};
    std::vector<std::array<double, 2>> beta_ranges = {{1e-3, 0.2}, {1e-4, 2e-2}, {1e-5, 2e-3}};
    std::vector<std::size_t> shots = {10, 100, 1000, 0};  // 0 = full training set
    std::size_t fewshot_seeds = 5;
    std::vector<std::string> sizes = {"base-analog", "large-analog"};

    std::string length_generator = "reviews";
    LengthRange short_lengths = {3, 12};
    LengthRange long_lengths = {30, 40};
    LengthRange eval_lengths = {3, 40};
    std::size_t bin_width = 10;

    int t_eval = 700;
    std::size_t draws = 10;
    double lambda = 0.99;
    std::size_t mlm_patterns = 10;
    bool standardize = false;
    ReconScoreMode score_mode = ReconScoreMode::Recon;

    std::size_t distinct_samples = 20;
    std::filesystem::path checkpoint;  // existing checkpoint (or series directory) to evaluate

    std::uint64_t seed = 7;
    std::filesystem::path out;
    std::size_t threads = 1;
    bool plots = true;
    bool save_checkpoints = true;

    /// spec.train with the experiment seed.
    TrainConfig train_config() const;
    void validate() const;
};

nlohmann::json spec_json(const ExperimentSpec& spec);

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Sets one field from its config-file key. Throws ConfigError on unknown
/// keys or malformed values.
void apply_setting(ExperimentSpec& spec, const std::string& key, const std::string& value);
/// `key = value` lines; `#` starts a comment, blank lines are skipped.
void apply_config_file(ExperimentSpec& spec, const std::filesystem::path& path);
/// Every accepted config key.
const std::vector<std::string>& config_keys();

struct Dataset {
    std::string name;
    text::Corpus corpus;
    std::vector<text::TokenSequence> seqs;
};

struct Workspace {
    text::Vocab vocab;
    std::size_t n = 0;
    Dataset id_train, id_dev, id_test;
    std::vector<Dataset> ood;
};

/// Generates or loads the corpora named by the spec, splits the ID corpus and
/// encodes everything against one shared vocabulary.
Workspace prepare(const ExperimentSpec& spec);

ModelConfig model_config(const ExperimentSpec& spec, const Workspace& ws, const std::string& size_tag,
                         std::size_t num_classes = 0);

/// Trains a fresh model on `data` with config.objective, after optional MLM
/// pretraining.
/// Writes `<tag>_curve.csv` and, if enabled, `checkpoints/<tag>/` under spec.out.
std::vector<Checkpoint> train_model(const ExperimentSpec& spec, const Workspace& ws,
                                        std::span<const text::TokenSequence> data, const TrainConfig& config,
                                        const std::string& tag, const ModelConfig& mc);

/// Tracks checkpoint hashes and notes for the experiment manifest.
class Manifest {
public:
    explicit Manifest(const ExperimentSpec& spec);
    void checkpoint(const std::string& tag, const Checkpoint& c);
    void note(const std::string& text);
    void output(const std::string& file);
    void write(const std::filesystem::path& dir) const;

private:
    nlohmann::json doc_;
};

// Runner results. Every runner writes its CSV (and SVG when spec.plots) under
// spec.out when spec.out is non-empty.

struct SweepRow {
    std::size_t step = 0;
    std::string dataset;
    int t = 0;
    double l_d = 0.0, l_c = 0.0, l_recon = 0.0, stderr_recon = 0.0;
};

std::vector<SweepRow> run_sweep_t(const ExperimentSpec& spec, const Workspace& ws, const Checkpoint& ckpt,
                                  Manifest& manifest);
std::vector<SweepRow> run_sweep_steps(const ExperimentSpec& spec, const Workspace& ws,
                                      std::span<const Checkpoint> series, Manifest& manifest);

struct SizeRow {
    std::string size_tag;
    std::string dataset;
    double l_recon = 0.0, stderr_recon = 0.0;
    double ratio = 0.0;  // OOD / ID for OOD rows, 1 for the ID row
};
std::vector<SizeRow> run_model_size(const ExperimentSpec& spec, const Workspace& ws, Manifest& manifest);

struct LengthRow {
    std::string model;  // short | long
    std::size_t bin_lo = 0, bin_hi = 0;
    std::size_t count = 0;
    double l_recon = 0.0, stderr_recon = 0.0;
};
std::vector<LengthRow> run_length_bins(const ExperimentSpec& spec, Manifest& manifest);

struct MetricRow {
    std::string id_domain, ood_domain, detector;
    detect::DetectionMetrics metrics;
};

struct DetectionResult {
    std::vector<MetricRow> metrics;
    /// domain -> detector -> per-sample scores (ID test under the ID domain name).
    std::map<std::string, std::map<std::string, std::vector<double>>> scores;
};

/// Every detector (baselines needing labels are skipped for unlabeled ID data).
/// `diffusion` is trained when not supplied.
DetectionResult run_detection(const ExperimentSpec& spec, const Workspace& ws, const Checkpoint* diffusion,
                              Manifest& manifest, bool baselines = true);

struct LambdaRow {
    double lambda = 0.0;
    std::string ood_domain;
    detect::DetectionMetrics metrics;
};
std::vector<LambdaRow> run_lambda_sweep(const ExperimentSpec& spec, const Workspace& ws, const Checkpoint& ckpt,
                                        Manifest& manifest);

struct BetaRow {
    double beta_start = 0.0, beta_end = 0.0;
    std::string dataset;
    double l_recon = 0.0;
    detect::DetectionMetrics metrics;  // vs first OOD domain (empty for the ID row)
};
std::vector<BetaRow> run_beta_sweep(const ExperimentSpec& spec, const Workspace& ws, Manifest& manifest);

struct FewshotRow {
    std::size_t k = 0;  // 0 = full
    std::size_t seed_index = 0;
    std::size_t train_size = 0;
    std::string ood_domain, detector;
    detect::DetectionMetrics metrics;
};
std::vector<FewshotRow> run_fewshot(const ExperimentSpec& spec, const Workspace& ws, Manifest& manifest);

/// Diffusion and diffusion+maha metrics of ID test against each OOD domain,
/// with the Mahalanobis statistics fitted on `fit_data`.
std::vector<MetricRow> diffusion_metrics(const ExperimentSpec& spec, const Workspace& ws, const Checkpoint& ckpt,
                                         std::span<const text::TokenSequence> fit_data);

struct Projection {
    Eigen::MatrixXd points;  // rows x 2
    Eigen::Vector2d variance;  // variance along pc1, pc2
    bool degenerate = false;
};

/// Top-2 principal components of mean-centered rows (pc2 = 0 when rank < 2).
Projection project_2d(const Eigen::MatrixXd& reprs);

/// Writes `projection.csv` (sample_id,domain,pc1,pc2) for ID test and every
/// OOD set, using the model's pooled hidden states.
Projection run_project(const ExperimentSpec& spec, const Workspace& ws, const Checkpoint& ckpt, Manifest& manifest);

/// Distinct n-grams / total n-grams over whitespace-tokenized samples.
double distinct_n(std::span<const std::string> samples, std::size_t n);

struct DistinctResult {
    std::vector<std::string> samples;
    std::array<double, 3> dist{};  // Dist-1, Dist-2, Dist-3
};
/// Samples spec.distinct_samples sentences by ancestral sampling.
DistinctResult run_distinct(const ExperimentSpec& spec, const Checkpoint& ckpt, Manifest& manifest);

struct DomainStats {
    std::string domain;
    std::size_t count = 0;
    double avg_len = 0.0;
    double target_avg_len = 0.0;
    std::map<std::string, double> overlap;  // fraction of this domain's tokens seen in the other domain
};
/// Writes every toy domain under spec.out (`<domain>.txt`, plus `<domain>.jsonl`
/// for labeled domains) and `data_manifest.json` with realized statistics.
std::vector<DomainStats> run_gen_data(const ExperimentSpec& spec);

struct StatsRow {
    std::string id_domain, ood_domain;
    text::CorpusStats stats;
};
std::vector<StatsRow> run_stats(const ExperimentSpec& spec, const Workspace& ws, Manifest& manifest);

/// Loads spec.checkpoint, or trains a diffusion model when it is empty.
Checkpoint obtain_checkpoint(const ExperimentSpec& spec, const Workspace& ws, Manifest& manifest);
/// Loads every checkpoint below spec.checkpoint (sorted by step), or trains a series.
std::vector<Checkpoint> obtain_series(const ExperimentSpec& spec, const Workspace& ws, Manifest& manifest);

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);
std::string fmt(double v);

struct Series {
    std::string label;
    std::vector<double> x, y;
};
/// Standalone SVG line chart (scatter when `markers_only`).
std::string line_plot_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                          const std::vector<Series>& series, bool markers_only = false);

}  // namespace diffood::exp
