#pragma once

// Differentiable primitives. Each op validates shapes, computes its forward
// value and, when any input requires a gradient, records a backward closure.
//
// Broadcasting is limited to scalar * tensor and row-vector + matrix.

#include <cstddef>
#include <cstdint>
#include <span>

#include "emgtf/tensor.hpp"

namespace emgtf {

inline constexpr double kLayerNormEps = 1e-5;

/// C[m,n] = A[m,k] B[k,n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Batched product over the leading axis: A[b,m,k] B[b,k,n] -> [b,m,n].
/// With transpose_b, B is read as [b,n,k] and used transposed.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

/// Adds a length-n vector to every row of a matrix viewed as [numel/n, n].
template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& row);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

/// Same data, new shape with equal element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Numerically stable softmax along `axis` (max subtracted per slice).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// Standardizes each row over the last axis, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = kLayerNormEps);

/// Exact GELU, x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

/// Mean negative log-likelihood of log-softmax(logits) at the target classes.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets);

/// [B,T,h*dh] -> [B*h,T,dh]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads);

/// [B*h,T,dh] -> [B,T,h*dh]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t heads);

/// Cuts windows [B,S,W] into non-overlapping S x P patches along time and
/// flattens each channel-major: row (b*N + j), column (c*P + p) holds
/// x[b, c, j*P + p]. Result is [B*N, S*P].
template <typename T>
Tensor<T> patchify(const Tensor<T>& x, std::size_t patch);

/// [B,N,d] with token [d] -> [B,N+1,d], token first.
template <typename T>
Tensor<T> prepend_token(const Tensor<T>& x, const Tensor<T>& token);

/// [B,T,d] -> [B,d] picking position `index`.
template <typename T>
Tensor<T> select_token(const Tensor<T>& x, std::size_t index);

/// Normalized Gaussian rule activations of a fuzzy neural block.
///
/// For each row v of `inputs` [B,D] and each cluster k of `centroids` [K,D]
/// with widths `scales` [K,D]:
///   log o_k = -1/4 * sum_j (v_j - c_kj)^2 / a_kj^2
///   out_k   = o_k / sum_f o_f
/// evaluated in the log domain so the product of D memberships cannot
/// underflow. Centroids are treated as constants.
template <typename T>
Tensor<T> fuzzy_rule_activation(const Tensor<T>& inputs, const Tensor<T>& centroids,
                                const Tensor<T>& scales);

/// Rows for which every rule activation was zero and the uniform 1/K output
/// was substituted, counted process-wide.
std::uint64_t fuzzy_uniform_fallbacks() noexcept;

} // namespace emgtf
