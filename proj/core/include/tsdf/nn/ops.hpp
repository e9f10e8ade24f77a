#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tsdf/nn/graph.hpp"
#include "tsdf/rng.hpp"

// Differentiable kernels. Every kernel validates operand shapes (throwing
// DimensionError with the kernel name and shapes), records its output on the
// operands' graph and, when any operand needs a gradient, a backward rule.
//
// Matrix kernels treat a tensor as rows() x cols(), i.e. all leading axes
// flattened and the last axis as the row.
namespace tsdf::nn {

// [m x k] * [k x n]; both operands rank 2.
template <class T>
Var<T> matmul(Var<T> a, Var<T> b);

template <class T>
Var<T> transpose(Var<T> a);

template <class T>
Var<T> add(Var<T> a, Var<T> b);

template <class T>
Var<T> sub(Var<T> a, Var<T> b);

// Elementwise product.
template <class T>
Var<T> mul(Var<T> a, Var<T> b);

template <class T>
Var<T> scale(Var<T> a, T factor);

// x: [n x d], v: [m x d] (or [d] when m = 1) with n % m == 0.
// Row r of x receives v[r / (n / m)]: bias (m = 1) and per-sample offsets.
template <class T>
Var<T> add_repeat(Var<T> x, Var<T> v);

// Row r of x receives v[r % m]: a per-position table tiled over a batch.
template <class T>
Var<T> add_tile(Var<T> x, Var<T> v);

// x * W + b with W: [in x out], b: [out].
template <class T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias);

// Softmax over the last axis, max-subtracted.
template <class T>
Var<T> softmax(Var<T> a);

// Normalizes each row to zero mean / unit variance, then applies gamma, beta.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));

// Exact Gaussian-CDF GELU: x * Phi(x).
template <class T>
Var<T> gelu(Var<T> x);

// Mean over consecutive groups of `group` rows: [n x d] -> [n / group x d].
template <class T>
Var<T> mean_pool(Var<T> x, std::size_t group);

template <class T>
Var<T> reshape(Var<T> x, Shape shape);

// Stacks rank-2 operands with equal column counts along the row axis.
template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts);

// Inverted dropout; identity when p == 0 or the rng is null.
template <class T>
Var<T> dropout(Var<T> x, double p, Rng* rng);

// Scaled dot-product attention for `batch * heads` independent problems.
// q, k, v: [batch * seq_len x heads * d_head]; rows are grouped by sample and
// columns by head. When `probs` is non-null the attention weights of every
// (sample, head) are appended to it as seq_len x seq_len matrices.
template <class T>
Var<T> multi_head_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t seq_len,
                            std::size_t heads, std::vector<Tensor<T>>* probs = nullptr);

template <class T>
Var<T> sum(Var<T> x);

template <class T>
Var<T> mean(Var<T> x);

// mean((a - b)^2) over all elements.
template <class T>
Var<T> mse_loss(Var<T> a, Var<T> b);

// Mean negative log-likelihood of `labels` under softmax(logits).
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels);

// Pointwise GELU on a plain value (shared with tests and the oracle grid).
double gelu_value(double x);

}  // namespace tsdf::nn
