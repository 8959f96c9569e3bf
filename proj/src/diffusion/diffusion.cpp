#include "diffood/diffusion.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "diffood/ops.hpp"

namespace diffood {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
        throw std::invalid_argument("schedule: need 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.T = T;
    s.betas.assign(static_cast<std::size_t>(T) + 1, 0.0);
    s.alphas.assign(static_cast<std::size_t>(T) + 1, 1.0);
    s.alpha_bars.assign(static_cast<std::size_t>(T) + 1, 1.0);
    for (int t = 1; t <= T; ++t) {
        const double frac = T == 1 ? 0.0 : double(t - 1) / double(T - 1);
        const auto i = static_cast<std::size_t>(t);
        s.betas[i] = (1.0 - frac) * beta_start + frac * beta_end;
        s.alphas[i] = 1.0 - s.betas[i];
        s.alpha_bars[i] = s.alpha_bars[i - 1] * s.alphas[i];
    }
    return s;
}

double NoiseSchedule::posterior_variance(int t) const {
    check_step(t);
    return (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t);
}

void NoiseSchedule::check_step(int t) const {
    if (t < 1 || t > T) {
        throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
    }
}

double score_of(const ReconLossBreakdown& b, ReconScoreMode mode) {
    return mode == ReconScoreMode::Recon ? b.l_recon : b.l_c;
}

std::vector<std::uint8_t> token_mask(std::span<const text::TokenSequence> batch) {
    std::vector<std::uint8_t> mask;
    for (const auto& s : batch) {
        for (std::size_t i = 0; i < s.ids.size(); ++i) mask.push_back(i < s.length ? 1 : 0);
    }
    return mask;
}

namespace {

std::vector<std::int32_t> flat_ids(std::span<const text::TokenSequence> batch) {
    std::vector<std::int32_t> ids;
    for (const auto& s : batch) ids.insert(ids.end(), s.ids.begin(), s.ids.end());
    return ids;
}

std::vector<double> mask_weights(std::span<const std::uint8_t> mask, const char* op) {
    const auto count = std::count(mask.begin(), mask.end(), std::uint8_t{1});
    if (count == 0) throw std::invalid_argument(std::string(op) + ": every position is masked");
    std::vector<double> w(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) w[i] = mask[i] ? 1.0 / double(count) : 0.0;
    return w;
}

template <typename T>
std::vector<T> normals(Rng& rng, std::size_t count) {
    std::vector<T> out(count);
    for (auto& v : out) v = static_cast<T>(rng.normal());
    return out;
}

std::size_t argmax_row(std::span<const float> row) {
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

template <typename T>
BasicTensor<T> embed_tokens(std::span<const text::TokenSequence> batch, const BasicTensor<T>& E, double sigma0,
                            std::span<const T> noise) {
    if (batch.empty()) throw std::invalid_argument("embed_tokens: empty batch");
    const std::size_t n = batch.front().ids.size();
    const std::size_t d = E.dim(1);
    const auto ids = flat_ids(batch);
    if (ids.size() != batch.size() * n) throw ShapeError("embed_tokens", Shape{ids.size()}, Shape{batch.size(), n});
    BasicTensor<T> x0 = ops::reshape(ops::embedding(E, ids), {batch.size(), n, d});
    if (sigma0 == 0.0) return x0;
    if (noise.size() != x0.numel()) throw ShapeError("embed_tokens", x0.shape(), Shape{noise.size()}, "noise size");
    std::vector<T> scaled(noise.begin(), noise.end());
    for (auto& v : scaled) v = static_cast<T>(sigma0 * double(v));
    return ops::add(x0, BasicTensor<T>(x0.shape(), std::move(scaled)));
}

template <typename T>
BasicTensor<T> forward_noise_ab(const BasicTensor<T>& x0, std::span<const double> alpha_bar, const BasicTensor<T>& eps) {
    if (alpha_bar.size() != x0.dim(0)) throw ShapeError("forward_noise", x0.shape(), Shape{alpha_bar.size()});
    std::vector<double> keep(alpha_bar.size());
    std::vector<double> noise(alpha_bar.size());
    for (std::size_t i = 0; i < alpha_bar.size(); ++i) {
        if (alpha_bar[i] < 0.0 || alpha_bar[i] > 1.0) throw std::invalid_argument("forward_noise: alpha_bar outside [0, 1]");
        keep[i] = std::sqrt(alpha_bar[i]);
        noise[i] = std::sqrt(1.0 - alpha_bar[i]);
    }
    return ops::add(ops::scale_leading(x0, keep), ops::scale_leading(eps, noise));
}

template <typename T>
BasicTensor<T> forward_noise(const BasicTensor<T>& x0, std::span<const int> t, const NoiseSchedule& schedule,
                             const BasicTensor<T>& eps) {
    std::vector<double> ab(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        schedule.check_step(t[i]);
        ab[i] = schedule.alpha_bar(t[i]);
    }
    return forward_noise_ab(x0, ab, eps);
}

template <typename T>
BasicTensor<T> diffusion_loss(const BasicTensor<T>& x0, const BasicTensor<T>& x0_hat, std::span<const std::uint8_t> mask) {
    const auto rows = ops::mse_rows(x0_hat, x0);
    if (rows.numel() != mask.size()) throw ShapeError("diffusion_loss", rows.shape(), Shape{mask.size()}, "mask size");
    return ops::weighted_sum(rows, mask_weights(mask, "diffusion_loss"));
}

template <typename T>
BasicTensor<T> rounding_loss(const BasicTensor<T>& x0_hat, std::span<const std::int32_t> ids, const BasicTensor<T>& E,
                             std::span<const std::uint8_t> mask) {
    const std::size_t d = E.dim(1);
    const auto flat = ops::reshape(x0_hat, {x0_hat.numel() / d, d});
    const auto logits = ops::matmul(flat, ops::transpose(E, 0, 1));
    const auto rows = ops::cross_entropy_rows(logits, ids);
    if (rows.numel() != mask.size()) throw ShapeError("rounding_loss", rows.shape(), Shape{mask.size()}, "mask size");
    return ops::weighted_sum(rows, mask_weights(mask, "rounding_loss"));
}

template <typename T>
ReconStep<T> recon_step(const BasicDenoiser<T>& model, std::span<const text::TokenSequence> batch,
                        std::span<const int> t, const NoiseSchedule& schedule, double sigma0, std::span<Rng> rngs) {
    const std::size_t B = batch.size();
    if (B == 0) throw std::invalid_argument("recon: empty batch");
    if (t.size() != B || rngs.size() != B) throw std::invalid_argument("recon: need one t and one rng per sentence");
    const std::size_t n = model.config().n;
    const std::size_t d = model.config().d;
    const std::size_t per = n * d;

    std::vector<T> sig_noise(sigma0 > 0.0 ? B * per : 0);
    std::vector<T> eps(B * per);
    for (std::size_t b = 0; b < B; ++b) {
        if (sigma0 > 0.0) {
            auto z = normals<T>(rngs[b], per);
            std::copy(z.begin(), z.end(), sig_noise.begin() + std::ptrdiff_t(b * per));
        }
        auto e = normals<T>(rngs[b], per);
        std::copy(e.begin(), e.end(), eps.begin() + std::ptrdiff_t(b * per));
    }

    const auto x0 = embed_tokens<T>(batch, model.embeddings(), sigma0, sig_noise);
    const auto x_t = forward_noise(x0, t, schedule, BasicTensor<T>({B, n, d}, std::move(eps)));
    const auto x0_hat = model.denoise(x_t, t);

    const auto d_rows = ops::mse_rows(x0_hat, x0);
    const auto c_rows = ops::cross_entropy_rows(model.rounding_logits(x0_hat), flat_ids(batch));

    std::vector<double> w(B * n, 0.0);
    ReconStep<T> out;
    out.per_sentence.resize(B);
    const auto dv = d_rows.data();
    const auto cv = c_rows.data();
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t len = batch[b].length;
        if (len == 0 || len > n) throw text::DataError("recon: bad sentence length");
        auto& br = out.per_sentence[b];
        for (std::size_t i = 0; i < len; ++i) {
            w[b * n + i] = 1.0 / double(len * B);
            br.l_d += double(dv[b * n + i]);
            br.l_c += double(cv[b * n + i]);
        }
        br.l_d /= double(len);
        br.l_c /= double(len);
        br.l_recon = br.l_d + br.l_c;
    }
    out.loss = ops::add(ops::weighted_sum(d_rows, w), ops::weighted_sum(c_rows, w));
    return out;
}

ReconLossBreakdown recon_loss(const text::TokenSequence& w, const Denoiser& model, const NoiseSchedule& schedule,
                              int t, double sigma0, Rng rng) {
    NoGradGuard guard;
    const int ts[1] = {t};
    return recon_step<float>(model, std::span(&w, 1), ts, schedule, sigma0, std::span(&rng, 1)).per_sentence.front();
}

Reconstruction reconstruct(const text::TokenSequence& w, const Denoiser& model, const NoiseSchedule& schedule, int t,
                           double sigma0, Rng rng) {
    NoGradGuard guard;
    schedule.check_step(t);
    const std::size_t n = model.config().n;
    const std::size_t d = model.config().d;
    const auto batch = std::span(&w, 1);
    std::vector<float> sig_noise = sigma0 > 0.0 ? normals<float>(rng, n * d) : std::vector<float>{};
    const auto x0 = embed_tokens<float>(batch, model.embeddings(), sigma0, sig_noise);
    const int ts[1] = {t};
    const auto x_t = forward_noise(x0, ts, schedule, Tensor({1, n, d}, normals<float>(rng, n * d)));
    const auto logits = model.rounding_logits(model.denoise(x_t, ts));
    const std::size_t V = logits.dim(1);
    Reconstruction r;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto id = static_cast<std::int32_t>(argmax_row(logits.data().subspan(i * V, V)));
        r.ids.push_back(id);
        r.correct.push_back(id == w.ids[i]);
        if (i < w.length && id == w.ids[i]) ++hits;
    }
    r.accuracy = double(hits) / double(w.length);
    return r;
}

std::vector<std::int32_t> sample(const Denoiser& model, const NoiseSchedule& schedule, Rng rng) {
    NoGradGuard guard;
    const std::size_t n = model.config().n;
    const std::size_t d = model.config().d;
    std::vector<float> x = normals<float>(rng, n * d);
    Tensor x0_hat;
    for (int t = schedule.T; t >= 1; --t) {
        const int ts[1] = {t};
        x0_hat = model.denoise(Tensor({1, n, d}, x), ts);
        if (t == 1) break;
        const double ab = schedule.alpha_bar(t);
        const double ab_prev = schedule.alpha_bar(t - 1);
        const double c0 = std::sqrt(ab_prev) * schedule.beta(t) / (1.0 - ab);
        const double ct = std::sqrt(schedule.alphas[static_cast<std::size_t>(t)]) * (1.0 - ab_prev) / (1.0 - ab);
        const double sd = std::sqrt(schedule.posterior_variance(t));
        const auto xh = x0_hat.data();
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = static_cast<float>(c0 * double(xh[i]) + ct * double(x[i]) + sd * rng.normal());
        }
    }
    const auto logits = model.rounding_logits(x0_hat);
    const std::size_t V = logits.dim(1);
    std::vector<std::int32_t> ids;
    for (std::size_t i = 0; i < n; ++i) {
        ids.push_back(static_cast<std::int32_t>(argmax_row(logits.data().subspan(i * V, V))));
    }
    return ids;
}

void parallel_chunks(std::size_t count, std::size_t chunk, std::size_t threads,
                     const std::function<void(std::size_t, std::size_t)>& fn) {
    if (chunk == 0) throw std::invalid_argument("parallel_chunks: chunk must be > 0");
    const std::size_t num_chunks = (count + chunk - 1) / chunk;
    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, num_chunks));
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto run = [&] {
        for (;;) {
            const std::size_t c = next.fetch_add(1);
            if (c >= num_chunks) return;
            try {
                fn(c * chunk, std::min(count, (c + 1) * chunk));
            } catch (...) {
                std::lock_guard lock(error_mu);
                if (!error) error = std::current_exception();
                next = num_chunks;
            }
        }
    };
    if (workers == 1) {
        run();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(run);
        for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);
}

std::vector<ReconLossBreakdown> evaluate_recon(const Denoiser& model, std::span<const text::TokenSequence> data,
                                               const NoiseSchedule& schedule, const ReconEvalOptions& options,
                                               const Rng& base) {
    if (options.draws == 0) throw std::invalid_argument("evaluate_recon: draws must be >= 1");
    schedule.check_step(options.t);
    std::vector<ReconLossBreakdown> out(data.size());
    parallel_chunks(data.size(), options.chunk, options.threads, [&](std::size_t lo, std::size_t hi) {
        NoGradGuard guard;
        const auto batch = data.subspan(lo, hi - lo);
        const std::vector<int> ts(batch.size(), options.t);
        for (std::size_t k = 0; k < options.draws; ++k) {
            std::vector<Rng> rngs;
            for (std::size_t i = lo; i < hi; ++i) rngs.push_back(base.split(i).split(k));
            const auto step = recon_step<float>(model, batch, ts, schedule, options.sigma0, rngs);
            for (std::size_t i = 0; i < batch.size(); ++i) {
                out[lo + i].l_d += step.per_sentence[i].l_d;
                out[lo + i].l_c += step.per_sentence[i].l_c;
            }
        }
        for (std::size_t i = lo; i < hi; ++i) {
            out[i].l_d /= double(options.draws);
            out[i].l_c /= double(options.draws);
            out[i].l_recon = out[i].l_d + out[i].l_c;
        }
    });
    return out;
}

#define DIFFOOD_DIFFUSION(T)                                                                                    \
    template BasicTensor<T> embed_tokens(std::span<const text::TokenSequence>, const BasicTensor<T>&, double,   \
                                         std::span<const T>);                                                    \
    template BasicTensor<T> forward_noise(const BasicTensor<T>&, std::span<const int>, const NoiseSchedule&,     \
                                          const BasicTensor<T>&);                                                \
    template BasicTensor<T> forward_noise_ab(const BasicTensor<T>&, std::span<const double>, const BasicTensor<T>&); \
    template BasicTensor<T> diffusion_loss(const BasicTensor<T>&, const BasicTensor<T>&,                         \
                                           std::span<const std::uint8_t>);                                       \
    template BasicTensor<T> rounding_loss(const BasicTensor<T>&, std::span<const std::int32_t>,                  \
                                          const BasicTensor<T>&, std::span<const std::uint8_t>);                 \
    template ReconStep<T> recon_step(const BasicDenoiser<T>&, std::span<const text::TokenSequence>,              \
                                     std::span<const int>, const NoiseSchedule&, double, std::span<Rng>);

DIFFOOD_DIFFUSION(float)
DIFFOOD_DIFFUSION(double)

}  // namespace diffood
