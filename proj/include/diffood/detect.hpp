#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "diffood/diffusion.hpp"
#include "diffood/model.hpp"
#include "diffood/rng.hpp"
#include "diffood/text.hpp"

// Every detector score follows one convention: higher = more OOD.
namespace diffood::detect {

struct MahalanobisStats {
    std::vector<Eigen::VectorXd> mu;    // one per class (one for class-free)
    std::vector<int> classes;           // class label of each mu (empty for class-free)
    Eigen::MatrixXd sigma;              // shared covariance
    Eigen::MatrixXd sigma_pinv;
    std::size_t n = 0;
    std::vector<std::size_t> counts;    // N_c

    std::size_t dim() const { return static_cast<std::size_t>(sigma.rows()); }
    bool class_free() const { return classes.empty(); }
};

/// Pseudo-inverse of a symmetric matrix, dropping eigenvalues <= rel_cutoff * max.
Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& sym, double rel_cutoff = 1e-6);

/// reprs: one row per sample. With labels, per-class means and a covariance
/// pooled around them; without, a single global mean.
MahalanobisStats maha_fit(const Eigen::MatrixXd& reprs, std::optional<std::span<const int>> labels = std::nullopt);

/// Minimum over fitted means of (h - mu)^T pinv (h - mu).
double maha_score(const Eigen::VectorXd& h, const MahalanobisStats& stats);

/// Max cosine similarity of h to any row of dev.
double max_cosine(const Eigen::VectorXd& h, const Eigen::MatrixXd& dev);
/// Negated max cosine.
double cosine_score(const Eigen::VectorXd& h, const Eigen::MatrixXd& dev);

/// 1 - max softmax probability.
double msp_score(std::span<const double> logits);
/// -log sum exp(logits).
double energy_score(std::span<const double> logits);

/// lambda * recon + (1 - lambda) * maha.
double combined_score(double recon, double maha, double lambda);
/// 0 (ID) iff f <= gamma.
int decide(double f, double gamma);

struct Standardizer {
    double mean = 0.0;
    double sd = 1.0;
    static Standardizer fit(std::span<const double> values);
    double operator()(double v) const { return (v - mean) / sd; }
};

/// Smallest ID score with at least `percent`% of ID scores <= it.
double calibrate_gamma(std::span<const double> id_scores, unsigned percent = 95);

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);
double far95(std::span<const double> id_scores, std::span<const double> ood_scores);

struct DetectionMetrics {
    double auroc = 0.0;
    double far95 = 0.0;
    std::size_t n_id = 0;
    std::size_t n_ood = 0;
};

DetectionMetrics evaluate(std::span<const double> id_scores, std::span<const double> ood_scores);

// Batched model-side helpers. Results do not depend on `threads`.

/// Pooled hidden representations, one row per sentence.
Eigen::MatrixXd hidden_reprs(const Denoiser& model, std::span<const text::TokenSequence> data, std::size_t threads = 1);

/// Classifier logits, one row per sentence.
Eigen::MatrixXd classifier_logits(const Denoiser& model, std::span<const text::TokenSequence> data,
                                  std::size_t threads = 1);

/// Per-sentence reconstruction score averaged over options.draws noise draws.
std::vector<double> recon_scores(const Denoiser& model, std::span<const text::TokenSequence> data,
                                 const NoiseSchedule& schedule, const ReconEvalOptions& options, const Rng& base,
                                 ReconScoreMode mode = ReconScoreMode::Recon);

/// Mean masked-LM loss per masked word over `patterns` random masks.
/// Sentence i, pattern r uses base.split(i).split(r).
std::vector<double> mlm_scores(const Denoiser& model, std::span<const text::TokenSequence> data, std::size_t patterns,
                               double mask_rate, const Rng& base, std::size_t threads = 1);

/// Detector names in their canonical order.
inline const std::vector<std::string>& detector_names() {
    static const std::vector<std::string> names = {"mlm",        "cosine",    "msp",
                                                   "energy",     "maha",      "diffusion",
                                                   "diffusion+maha"};
    return names;
}

/// Per-sample scores for each detector, with the settings that produced them.
struct ScoreReport {
    std::map<std::string, std::vector<double>> scores;
    int t_eval = 0;
    double lambda = 0.0;
    std::size_t draws = 0;
    std::uint64_t checkpoint_id = 0;
};

}  // namespace diffood::detect
