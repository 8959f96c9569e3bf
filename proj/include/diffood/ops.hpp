#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "diffood/tensor.hpp"

// Differentiable ops. All are templated on the scalar type and instantiated for
// float (training/evaluation) and double (gradient checking).
namespace diffood::ops {

// Elementwise. `b` may equal `a` in shape or be a trailing suffix of it
// (broadcast over leading axes, e.g. a bias or positional table).
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, double factor);
/// Scales each slice along the leading axis by its own factor (factors.size() == a.dim(0)).
template <typename T> BasicTensor<T> scale_leading(const BasicTensor<T>& a, std::span<const double> factors);

// a: [..., m, k]. b: [k, n] (shared) or [..., k, n] with identical leading axes.
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T> BasicTensor<T> transpose(const BasicTensor<T>& a, std::size_t axis0, std::size_t axis1);
template <typename T> BasicTensor<T> permute(const BasicTensor<T>& a, const std::vector<std::size_t>& perm);
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);
template <typename T> BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis);

template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& a, std::size_t axis);
/// Normalizes over the last axis; gamma/beta have the last axis' extent.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          double eps = 1e-5);
/// Exact (erf) GELU.
template <typename T> BasicTensor<T> gelu(const BasicTensor<T>& a);

/// Row gather: table [V, d], ids -> [ids.size(), d]. Out-of-range id -> ShapeError.
template <typename T> BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const std::int32_t> ids);

/// v: [B, d] -> [B, n, d], copying each row n times.
template <typename T> BasicTensor<T> broadcast_rows(const BasicTensor<T>& v, std::size_t n);

/// x: [N, d]. Rows with flag set are replaced by `row` ([d]).
template <typename T>
BasicTensor<T> replace_rows(const BasicTensor<T>& x, std::span<const std::uint8_t> flags, const BasicTensor<T>& row);

/// x: [N, d] -> [indices.size(), d].
template <typename T> BasicTensor<T> select_rows(const BasicTensor<T>& x, std::span<const std::size_t> indices);

/// x: [B, n, d], weights: B*n values -> [B, d] with out[b] = sum_i w[b,i] x[b,i].
template <typename T> BasicTensor<T> pool(const BasicTensor<T>& x, std::span<const double> weights);

// Reductions (64-bit accumulation).
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& a);
/// sum_i w_i a_i over all elements; weights.size() == a.numel().
template <typename T> BasicTensor<T> weighted_sum(const BasicTensor<T>& a, std::span<const double> weights);

/// Per-row mean squared error over the last axis: [..., d] x [..., d] -> [rows].
template <typename T> BasicTensor<T> mse_rows(const BasicTensor<T>& pred, const BasicTensor<T>& target);
/// Mean squared error over all elements -> scalar.
template <typename T> BasicTensor<T> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target);

/// Per-row negative log softmax probability of the target: logits [N, V] -> [N].
template <typename T>
BasicTensor<T> cross_entropy_rows(const BasicTensor<T>& logits, std::span<const std::int32_t> targets);
/// Mean of cross_entropy_rows -> scalar.
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::int32_t> targets);

}  // namespace diffood::ops
