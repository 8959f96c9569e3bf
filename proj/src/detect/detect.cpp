#include "diffood/detect.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "diffood/ops.hpp"
#include "diffood/trainer.hpp"

namespace diffood::detect {

namespace {

constexpr std::size_t kChunk = 16;

void require_nonempty(std::span<const double> id, std::span<const double> ood, const char* op) {
    if (id.empty() || ood.empty()) throw std::invalid_argument(std::string(op) + ": both score sets must be non-empty");
}

}  // namespace

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& sym, double rel_cutoff) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    if (eig.info() != Eigen::Success) throw std::runtime_error("pseudo_inverse: eigendecomposition failed");
    const auto& vals = eig.eigenvalues();
    const double cutoff = rel_cutoff * vals.maxCoeff();
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(vals.size());
    for (Eigen::Index i = 0; i < vals.size(); ++i) {
        if (vals[i] > cutoff && vals[i] > 0.0) inv[i] = 1.0 / vals[i];
    }
    const auto& V = eig.eigenvectors();
    Eigen::MatrixXd p = V * inv.asDiagonal() * V.transpose();
    return 0.5 * (p + p.transpose());
}

MahalanobisStats maha_fit(const Eigen::MatrixXd& reprs, std::optional<std::span<const int>> labels) {
    const auto N = static_cast<std::size_t>(reprs.rows());
    if (N < 2) throw std::invalid_argument("maha_fit: need at least 2 samples");
    MahalanobisStats s;
    s.n = N;
    std::vector<std::size_t> group(N, 0);
    if (labels) {
        if (labels->size() != N) throw std::invalid_argument("maha_fit: one label per sample required");
        const std::set<int> distinct(labels->begin(), labels->end());
        s.classes.assign(distinct.begin(), distinct.end());
        for (std::size_t i = 0; i < N; ++i) {
            group[i] = static_cast<std::size_t>(
                std::lower_bound(s.classes.begin(), s.classes.end(), (*labels)[i]) - s.classes.begin());
        }
    }
    const std::size_t C = labels ? s.classes.size() : 1;
    s.mu.assign(C, Eigen::VectorXd::Zero(reprs.cols()));
    s.counts.assign(C, 0);
    for (std::size_t i = 0; i < N; ++i) {
        s.mu[group[i]] += reprs.row(Eigen::Index(i)).transpose();
        ++s.counts[group[i]];
    }
    for (std::size_t c = 0; c < C; ++c) s.mu[c] /= double(s.counts[c]);
    Eigen::MatrixXd centered(reprs.rows(), reprs.cols());
    for (std::size_t i = 0; i < N; ++i) {
        centered.row(Eigen::Index(i)) = reprs.row(Eigen::Index(i)) - s.mu[group[i]].transpose();
    }
    s.sigma = centered.transpose() * centered / double(N);
    s.sigma = 0.5 * (s.sigma + s.sigma.transpose());
    s.sigma_pinv = pseudo_inverse(s.sigma);
    return s;
}

double maha_score(const Eigen::VectorXd& h, const MahalanobisStats& stats) {
    if (std::size_t(h.size()) != stats.dim()) {
        throw std::invalid_argument("maha_score: representation has dimension " + std::to_string(h.size()) +
                                    ", stats fitted on " + std::to_string(stats.dim()));
    }
    double best = std::numeric_limits<double>::infinity();
    for (const auto& mu : stats.mu) {
        const Eigen::VectorXd diff = h - mu;
        best = std::min(best, diff.dot(stats.sigma_pinv * diff));
    }
    return best;
}

double max_cosine(const Eigen::VectorXd& h, const Eigen::MatrixXd& dev) {
    if (dev.rows() == 0) throw std::invalid_argument("cosine: empty reference set");
    const double hn = h.norm();
    if (hn == 0.0) throw std::invalid_argument("cosine: zero-norm representation");
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < dev.rows(); ++i) {
        const double dn = dev.row(i).norm();
        if (dn == 0.0) throw std::invalid_argument("cosine: zero-norm reference representation");
        best = std::max(best, dev.row(i).dot(h) / (hn * dn));
    }
    return best;
}

double cosine_score(const Eigen::VectorXd& h, const Eigen::MatrixXd& dev) { return -max_cosine(h, dev); }

double msp_score(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("msp: no logits");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    return 1.0 - 1.0 / z;
}

double energy_score(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("energy: no logits");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    return -(mx + std::log(z));
}

double combined_score(double recon, double maha, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("combined_score: lambda must be in [0, 1]");
    return lambda * recon + (1.0 - lambda) * maha;
}

int decide(double f, double gamma) { return f <= gamma ? 0 : 1; }

Standardizer Standardizer::fit(std::span<const double> values) {
    if (values.size() < 2) throw std::invalid_argument("standardize: need at least 2 values");
    Standardizer s;
    for (double v : values) s.mean += v;
    s.mean /= double(values.size());
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(var / double(values.size() - 1));
    if (!(s.sd > 0.0)) s.sd = 1.0;
    return s;
}

double calibrate_gamma(std::span<const double> id_scores, unsigned percent) {
    if (id_scores.empty()) throw std::invalid_argument("calibrate_gamma: no ID scores");
    if (percent == 0 || percent > 100) throw std::invalid_argument("calibrate_gamma: percent must be in [1, 100]");
    std::vector<double> sorted(id_scores.begin(), id_scores.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const std::size_t k = (percent * n + 99) / 100;
    return sorted[k - 1];
}

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
    require_nonempty(id_scores, ood_scores, "auroc");
    std::vector<double> id(id_scores.begin(), id_scores.end());
    std::sort(id.begin(), id.end());
    std::uint64_t twice = 0;  // 2 * wins + ties
    for (double s : ood_scores) {
        const auto lo = std::lower_bound(id.begin(), id.end(), s);
        const auto hi = std::upper_bound(lo, id.end(), s);
        twice += 2 * std::uint64_t(lo - id.begin()) + std::uint64_t(hi - lo);
    }
    return double(twice) / (2.0 * double(id.size()) * double(ood_scores.size()));
}

double far95(std::span<const double> id_scores, std::span<const double> ood_scores) {
    require_nonempty(id_scores, ood_scores, "far95");
    const double gamma = calibrate_gamma(id_scores, 95);
    const auto below = std::count_if(ood_scores.begin(), ood_scores.end(), [&](double s) { return s <= gamma; });
    return double(below) / double(ood_scores.size());
}

DetectionMetrics evaluate(std::span<const double> id_scores, std::span<const double> ood_scores) {
    return {auroc(id_scores, ood_scores), far95(id_scores, ood_scores), id_scores.size(), ood_scores.size()};
}

Eigen::MatrixXd hidden_reprs(const Denoiser& model, std::span<const text::TokenSequence> data, std::size_t threads) {
    const auto d = Eigen::Index(model.config().d);
    Eigen::MatrixXd out(Eigen::Index(data.size()), d);
    parallel_chunks(data.size(), kChunk, threads, [&](std::size_t lo, std::size_t hi) {
        NoGradGuard guard;
        const Tensor reprs = model.hidden_repr(data.subspan(lo, hi - lo));
        const auto h = reprs.data();
        for (std::size_t i = lo; i < hi; ++i) {
            for (Eigen::Index j = 0; j < d; ++j) out(Eigen::Index(i), j) = h[(i - lo) * std::size_t(d) + std::size_t(j)];
        }
    });
    return out;
}

Eigen::MatrixXd classifier_logits(const Denoiser& model, std::span<const text::TokenSequence> data,
                                  std::size_t threads) {
    if (!model.has_classifier()) throw std::logic_error("classifier scores: model has no classifier head");
    const auto C = Eigen::Index(model.config().num_classes);
    Eigen::MatrixXd out(Eigen::Index(data.size()), C);
    parallel_chunks(data.size(), kChunk, threads, [&](std::size_t lo, std::size_t hi) {
        NoGradGuard guard;
        const Tensor logits = model.classifier_logits(data.subspan(lo, hi - lo));
        const auto z = logits.data();
        for (std::size_t i = lo; i < hi; ++i) {
            for (Eigen::Index j = 0; j < C; ++j) out(Eigen::Index(i), j) = z[(i - lo) * std::size_t(C) + std::size_t(j)];
        }
    });
    return out;
}

std::vector<double> recon_scores(const Denoiser& model, std::span<const text::TokenSequence> data,
                                 const NoiseSchedule& schedule, const ReconEvalOptions& options, const Rng& base,
                                 ReconScoreMode mode) {
    const auto per = evaluate_recon(model, data, schedule, options, base);
    std::vector<double> out;
    out.reserve(per.size());
    for (const auto& b : per) out.push_back(score_of(b, mode));
    return out;
}

std::vector<double> mlm_scores(const Denoiser& model, std::span<const text::TokenSequence> data, std::size_t patterns,
                               double mask_rate, const Rng& base, std::size_t threads) {
    if (patterns == 0) throw std::invalid_argument("mlm_scores: patterns must be >= 1");
    const std::size_t n = model.config().n;
    std::vector<double> out(data.size(), 0.0);
    parallel_chunks(data.size(), kChunk, threads, [&](std::size_t lo, std::size_t hi) {
        NoGradGuard guard;
        const auto batch = data.subspan(lo, hi - lo);
        for (std::size_t r = 0; r < patterns; ++r) {
            std::vector<std::size_t> masked;
            std::vector<std::int32_t> targets;
            std::vector<std::size_t> owner;
            for (std::size_t b = 0; b < batch.size(); ++b) {
                Rng rng = base.split(lo + b).split(r);
                for (auto i : choose_mask(batch[b], mask_rate, rng)) {
                    masked.push_back(b * n + i);
                    targets.push_back(batch[b].ids[i]);
                    owner.push_back(b);
                }
            }
            const Tensor losses = ops::cross_entropy_rows(model.mlm_logits(batch, masked), targets);
            const auto ce = losses.data();
            std::vector<double> sum(batch.size(), 0.0);
            std::vector<std::size_t> cnt(batch.size(), 0);
            for (std::size_t k = 0; k < owner.size(); ++k) {
                sum[owner[k]] += double(ce[k]);
                ++cnt[owner[k]];
            }
            for (std::size_t b = 0; b < batch.size(); ++b) out[lo + b] += sum[b] / double(cnt[b]);
        }
        for (std::size_t i = lo; i < hi; ++i) out[i] /= double(patterns);
    });
    return out;
}

}  // namespace diffood::detect
