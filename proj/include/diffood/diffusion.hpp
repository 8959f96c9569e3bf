#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "diffood/model.hpp"
#include "diffood/rng.hpp"
#include "diffood/tensor.hpp"
#include "diffood/text.hpp"

namespace diffood {

/// Per-step noise levels indexed by t in [0, T]; index 0 is the clean state
/// (beta 0, alpha_bar 1).
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    /// beta_t = start + (t-1)/(T-1) * (end - start). start == end gives a
    /// constant schedule.
    static NoiseSchedule linear(int T, double beta_start = 1e-4, double beta_end = 0.02);

    double beta(int t) const { return betas.at(static_cast<std::size_t>(t)); }
    double alpha_bar(int t) const { return alpha_bars.at(static_cast<std::size_t>(t)); }
    /// Variance of q(x_{t-1} | x_t, x_0).
    double posterior_variance(int t) const;
    void check_step(int t) const;
};

struct ReconLossBreakdown {
    double l_d = 0.0;
    double l_c = 0.0;
    double l_recon = 0.0;
};

/// Which quantity serves as the reconstruction score.
enum class ReconScoreMode { Recon, RoundingOnly };

double score_of(const ReconLossBreakdown& b, ReconScoreMode mode);

/// 1 for real positions, 0 for padding, flattened [B*n].
std::vector<std::uint8_t> token_mask(std::span<const text::TokenSequence> batch);

/// E[w] + sigma0 * noise, [B, n, d]. `noise` holds B*n*d standard normals
/// (ignored when sigma0 == 0).
template <typename T>
BasicTensor<T> embed_tokens(std::span<const text::TokenSequence> batch, const BasicTensor<T>& E, double sigma0,
                            std::span<const T> noise);

/// sqrt(ab_t) x0 + sqrt(1 - ab_t) eps with one t per leading slice of x0.
template <typename T>
BasicTensor<T> forward_noise(const BasicTensor<T>& x0, std::span<const int> t, const NoiseSchedule& schedule,
                             const BasicTensor<T>& eps);
/// Same with explicit alpha_bar values (may be 0 or 1).
template <typename T>
BasicTensor<T> forward_noise_ab(const BasicTensor<T>& x0, std::span<const double> alpha_bar, const BasicTensor<T>& eps);

/// Mean over unmasked positions of ||x0 - x0_hat||^2 / d.
template <typename T>
BasicTensor<T> diffusion_loss(const BasicTensor<T>& x0, const BasicTensor<T>& x0_hat, std::span<const std::uint8_t> mask);

/// Mean over unmasked positions of -log softmax(x0_hat E^T)[w].
template <typename T>
BasicTensor<T> rounding_loss(const BasicTensor<T>& x0_hat, std::span<const std::int32_t> ids, const BasicTensor<T>& E,
                             std::span<const std::uint8_t> mask);

template <typename T>
struct ReconStep {
    BasicTensor<T> loss;                       // mean over sentences of per-word l_recon
    std::vector<ReconLossBreakdown> per_sentence;
};

/// Batched L_recon: each sentence b is noised at t[b] with draws from rngs[b]
/// (sigma0 noise first, then eps), so a sentence's losses do not depend on
/// the rest of the batch.
template <typename T>
ReconStep<T> recon_step(const BasicDenoiser<T>& model, std::span<const text::TokenSequence> batch,
                        std::span<const int> t, const NoiseSchedule& schedule, double sigma0, std::span<Rng> rngs);

ReconLossBreakdown recon_loss(const text::TokenSequence& w, const Denoiser& model, const NoiseSchedule& schedule,
                              int t, double sigma0, Rng rng);

struct Reconstruction {
    std::vector<std::int32_t> ids;  // length n
    std::vector<bool> correct;      // per position, vs input
    double accuracy = 0.0;          // over non-PAD positions
};

/// One denoiser pass from x_t and argmax rounding.
Reconstruction reconstruct(const text::TokenSequence& w, const Denoiser& model, const NoiseSchedule& schedule, int t,
                           double sigma0, Rng rng);

/// Ancestral sampling with the DDPM posterior from x_T ~ N(0, I).
std::vector<std::int32_t> sample(const Denoiser& model, const NoiseSchedule& schedule, Rng rng);

struct ReconEvalOptions {
    int t = 700;
    std::size_t draws = 10;
    double sigma0 = 1e-4;
    std::size_t threads = 1;
    std::size_t chunk = 16;
};

/// Per-sentence breakdowns averaged over `draws` noise draws. Sentence i,
/// draw k uses base.split(i).split(k); results do not depend on `threads`.
std::vector<ReconLossBreakdown> evaluate_recon(const Denoiser& model, std::span<const text::TokenSequence> data,
                                               const NoiseSchedule& schedule, const ReconEvalOptions& options,
                                               const Rng& base);

/// Runs fn(chunk_begin, chunk_end) over [0, count) in fixed-size chunks on up
/// to `threads` workers. The first exception is rethrown.
void parallel_chunks(std::size_t count, std::size_t chunk, std::size_t threads,
                     const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace diffood
