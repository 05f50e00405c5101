#pragma once

// Differentiable op suite over TensorT. Every op validates shapes up front and
// throws std::invalid_argument naming the op and the offending shapes. All
// outputs are freshly allocated; accumulation into grad buffers happens only
// inside recorded backward closures.

#include "anymodal/tensor.hpp"

namespace am::nn {

enum class Pad { Same, Valid };

// ---- elementwise ----
template <typename T> TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> scale(const TensorT<T>& a, T c);
// b must match the last dimension of x; broadcast over leading dims.
template <typename T> TensorT<T> add_bias(const TensorT<T>& x, const TensorT<T>& b);
template <typename T> TensorT<T> gelu(const TensorT<T>& x);
template <typename T> TensorT<T> silu(const TensorT<T>& x);

// ---- normalization / attention pieces ----
template <typename T> TensorT<T> softmax(const TensorT<T>& x);
// Whole-tensor L2 normalization: y = x / ||x||. Norm accumulates in double;
// a norm under 1e-12 is rejected.
template <typename T> TensorT<T> l2_normalize(const TensorT<T>& x);
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain,
                      const TensorT<T>& bias, T eps = T(1e-5));

// ---- linear algebra ----
template <typename T> TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> bmm(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> reshape(const TensorT<T>& x, Shape s);
template <typename T> TensorT<T> permute(const TensorT<T>& x, const std::vector<int>& axes);

// ---- convolution ----
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  int stride, Pad pad);
template <typename T>
TensorT<T> conv1d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  int stride, Pad pad);
// Weight layout (IC, OC, KH, KW); output (N, OC, (H-1)*stride+KH, ...).
template <typename T>
TensorT<T> tconv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                   int stride);

// ---- resampling (nearest neighbor) ----
template <typename T> TensorT<T> resample_nearest2d(const TensorT<T>& x, int oh, int ow);
template <typename T> TensorT<T> resample_nearest1d(const TensorT<T>& x, int ol);

// ---- gather / concat ----
// x is (V, D); returns (ids.size(), D). Backward scatter-adds into x.
template <typename T>
TensorT<T> gather_rows(const TensorT<T>& x, const std::vector<int>& ids);
template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& xs, int axis);

// ---- reductions ----
template <typename T> TensorT<T> sum_all(const TensorT<T>& x);
template <typename T> TensorT<T> mean_all(const TensorT<T>& x);
template <typename T> TensorT<T> sum_axis(const TensorT<T>& x, int axis);
template <typename T> TensorT<T> mean_axis(const TensorT<T>& x, int axis);

// ---- losses ----
// logits (N, V); targets.size() == N; positions with target == ignore_index
// drop out of the mean. All positions ignored is an error.
template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const std::vector<int>& targets,
                         int ignore_index = -1);
template <typename T> TensorT<T> mse(const TensorT<T>& a, const TensorT<T>& b);
// Flattens both inputs; scalar cosine similarity with an epsilon-guarded norm.
template <typename T> TensorT<T> cosine_sim(const TensorT<T>& a, const TensorT<T>& b);

// ---- attention ----
// q (B, Tq, D), k/v (B, Tk, D). Composite of bmm/softmax; causal requires
// Tq == Tk and masks j > i with a large negative additive constant.
template <typename T>
TensorT<T> sdpa(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                bool causal);

// Constant (no-grad) helpers.
template <typename T> TensorT<T> causal_mask(int t);
template <typename T> TensorT<T> sinusoidal_embedding(int step, int dim);

// Exact cosine used by scoring: double accumulation, dot/sqrt(na*nb), so
// cos(x, x) == 1.0 whenever x has nonzero norm.
double cosine_exact(const float* a, const float* b, int64_t n);

}  // namespace am::nn
