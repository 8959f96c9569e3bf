#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "diffood/rng.hpp"
#include "diffood/tensor.hpp"
#include "diffood/text.hpp"

namespace diffood {

struct ModelConfig {
    std::size_t d = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn_mult = 4;
    std::size_t n = 32;
    std::size_t vocab_size = 0;
    std::size_t num_classes = 0;  // 0: no classifier head
    double embed_std = 1.0;       // init scale of the embedding matrix
    std::string size_tag = "base-analog";

    /// d=64, 2 layers, 4 heads.
    static ModelConfig base_analog(std::size_t vocab_size, std::size_t n);
    /// d=128, 4 layers, 8 heads.
    static ModelConfig large_analog(std::size_t vocab_size, std::size_t n);
    static ModelConfig for_size_tag(const std::string& tag, std::size_t vocab_size, std::size_t n);

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct NamedTensor {
    std::string name;
    BasicTensor<T> tensor;
};

/// Bidirectional transformer encoder used as the x0-predicting denoiser.
///
/// Input vectors go through an input projection, learned positional embeddings
/// and a projected sinusoidal timestep embedding (added at every position),
/// then pre-LN blocks and a final layer norm. The embedding matrix is tied to
/// the rounding logits and the MLM decoder. Weights start N(0, 0.02); the
/// embedding matrix starts N(0, embed_std^2) so token identity survives the
/// unit-variance diffusion noise.
template <typename T>
class BasicDenoiser {
public:
    using TensorT = BasicTensor<T>;

    BasicDenoiser(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return config_; }
    const TensorT& embeddings() const noexcept { return embed_; }

    /// Parameters in a fixed order (checkpoint and optimizer order).
    std::vector<NamedTensor<T>>& parameters() noexcept { return params_; }
    const std::vector<NamedTensor<T>>& parameters() const noexcept { return params_; }
    std::vector<TensorT> parameter_tensors() const;
    std::size_t parameter_count() const;
    void zero_grad();

    /// x: [B, n, d], one timestep per batch row (0 allowed for clean inputs).
    /// Returns final (layer-normed) hidden states [B, n, d].
    TensorT encode(const TensorT& x, std::span<const int> t) const;

    /// x0 prediction from x_t: [B, n, d] -> [B, n, d].
    TensorT denoise(const TensorT& x_t, std::span<const int> t) const;

    /// Rounding logits x0_hat · E^T: [..., d] -> [rows, vocab].
    TensorT rounding_logits(const TensorT& x0_hat) const;

    /// Clean token embeddings E[w] for a batch: [B, n, d].
    TensorT embed(std::span<const text::TokenSequence> batch) const;

    /// Mean over non-PAD positions of the final hidden states for clean
    /// (un-noised) inputs at t = 0: [B, d].
    TensorT hidden_repr(std::span<const text::TokenSequence> batch) const;

    /// Logits at the masked positions ([#masked, vocab]) with the masked rows
    /// replaced by a learned mask vector before encoding. A d x d projection
    /// precedes the tied decoder so untrained logits stay near uniform. `masked` holds
    /// row-major (b * n + i) positions.
    TensorT mlm_logits(std::span<const text::TokenSequence> batch, std::span<const std::size_t> masked) const;

    /// Linear head on hidden_repr: [B, num_classes]. Throws if no head.
    TensorT classifier_logits(std::span<const text::TokenSequence> batch) const;
    bool has_classifier() const noexcept { return config_.num_classes > 0; }

    /// Copy with every parameter converted to U.
    template <typename U>
    BasicDenoiser<U> cast() const;

    /// Overwrites parameter values from another instance with identical config.
    template <typename U>
    void copy_from(const BasicDenoiser<U>& other);

private:
    struct Linear {
        TensorT w;
        TensorT b;
    };
    struct Block {
        TensorT ln1_g, ln1_b, ln2_g, ln2_b;
        Linear q, k, v, o, ff1, ff2;
    };

    TensorT add_param(const std::string& name, Shape shape, double stddev, double fill, Rng& rng);
    Linear add_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
    TensorT apply(const Linear& layer, const TensorT& x) const;
    TensorT timestep_features(std::span<const int> t) const;

    ModelConfig config_;
    std::vector<NamedTensor<T>> params_;
    TensorT embed_;
    TensorT pos_;
    Linear in_proj_;
    Linear time_proj_;
    std::vector<Block> blocks_;
    TensorT lnf_g_, lnf_b_;
    Linear out_proj_;
    TensorT mask_vec_;
    TensorT mlm_bias_;
    Linear mlm_proj_;
    Linear cls_;
};

using Denoiser = BasicDenoiser<float>;
using Denoiser64 = BasicDenoiser<double>;

/// Position weights 1/length for real tokens, 0 for padding, flattened [B*n].
std::vector<double> mean_pool_weights(std::span<const text::TokenSequence> batch);

}  // namespace diffood
