#include "anymodal/ops.hpp"

#include <cmath>
#include <cstring>
#include <algorithm>

namespace am::nn {

namespace {

template <typename T>
bool want_tape(std::initializer_list<const TensorT<T>*> ins) {
  if (!recording<T>()) return false;
  for (const TensorT<T>* p : ins)
    if (p->defined() && p->has_grad()) return true;
  return false;
}

template <typename T>
void check_defined(const char* op, const TensorT<T>& t) {
  if (!t.defined()) op_error(op, "undefined tensor argument");
}

// C (M,N) += A (M,K) @ B (K,N)
template <typename T>
void mm_nn(T* c, const T* a, const T* b, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<int64_t>(i) * n;
    const T* arow = a + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      T av = arow[p];
      const T* brow = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (M,N) += A (M,K) @ B^T, B stored (N,K)
template <typename T>
void mm_nt(T* c, const T* a, const T* b, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<int64_t>(i) * k;
    T* crow = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<int64_t>(j) * k;
      T acc = T(0);
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C (M,N) += A^T @ B, A stored (K,M), B stored (K,N)
template <typename T>
void mm_tn(T* c, const T* a, const T* b, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const T* arow = a + static_cast<int64_t>(p) * m;
    const T* brow = b + static_cast<int64_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      T av = arow[i];
      T* crow = c + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

struct ConvGeom {
  int out = 0;
  int pad_lo = 0;
};

ConvGeom conv_geom(const char* op, int in, int k, int stride, Pad pad) {
  ConvGeom g;
  if (pad == Pad::Valid) {
    if (in < k) op_error(op, "input extent " + std::to_string(in) +
                                 " smaller than kernel " + std::to_string(k));
    g.out = (in - k) / stride + 1;
    g.pad_lo = 0;
  } else {
    g.out = (in + stride - 1) / stride;
    int total = std::max((g.out - 1) * stride + k - in, 0);
    g.pad_lo = total / 2;
  }
  return g;
}

// im2col for one sample: x (C,H,W) -> col (C*KH*KW, OH*OW)
template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride,
            int pad_y, int pad_x, int oh, int ow, T* col) {
  int r = 0;
  for (int c = 0; c < C; ++c) {
    const T* plane = x + static_cast<int64_t>(c) * H * W;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++r) {
        T* dst = col + static_cast<int64_t>(r) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride + ky - pad_y;
          if (iy < 0 || iy >= H) {
            for (int ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = T(0);
            continue;
          }
          const T* row = plane + static_cast<int64_t>(iy) * W;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride + kx - pad_x;
            dst[oy * ow + ox] = (ix >= 0 && ix < W) ? row[ix] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add of a col buffer back into dx (C,H,W).
template <typename T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int stride,
                int pad_y, int pad_x, int oh, int ow, T* dx) {
  int r = 0;
  for (int c = 0; c < C; ++c) {
    T* plane = dx + static_cast<int64_t>(c) * H * W;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++r) {
        const T* src = col + static_cast<int64_t>(r) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride + ky - pad_y;
          if (iy < 0 || iy >= H) continue;
          T* row = plane + static_cast<int64_t>(iy) * W;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride + kx - pad_x;
            if (ix >= 0 && ix < W) row[ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<size_t>(i)] = st[static_cast<size_t>(i) + 1] * s[static_cast<size_t>(i) + 1];
  return st;
}

// dst[idx] op= src[map(idx)] where map permutes axes; accumulate selects += vs =.
template <typename T>
void permute_raw(const Shape& in_shape, const T* in, const std::vector<int>& axes,
                 T* out, bool accumulate) {
  int r = static_cast<int>(in_shape.size());
  Shape out_shape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = in_shape[static_cast<size_t>(axes[static_cast<size_t>(i)])];
  auto in_strides = strides_of(in_shape);
  std::vector<int64_t> stride_for_out(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) stride_for_out[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(axes[static_cast<size_t>(i)])];
  std::vector<int> idx(static_cast<size_t>(r), 0);
  int64_t total = numel(out_shape);
  int64_t in_off = 0;
  for (int64_t o = 0; o < total; ++o) {
    if (accumulate)
      out[o] += in[in_off];
    else
      out[o] = in[in_off];
    for (int d = r - 1; d >= 0; --d) {
      idx[static_cast<size_t>(d)]++;
      in_off += stride_for_out[static_cast<size_t>(d)];
      if (idx[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
      in_off -= stride_for_out[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
  }
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  check_defined("add", a);
  check_defined("add", b);
  if (a.shape != b.shape)
    op_error("add", "shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (want_tape<T>({&a, &b})) {
    out.ensure_grad();
    TapeT<T>::active()->record([a, b, out]() {
      const T* g = out.gptr();
      int64_t n = out.size();
      if (a.has_grad()) {
        T* ga = a.grad->data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.has_grad()) {
        T* gb = b.grad->data();
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  check_defined("sub", a);
  check_defined("sub", b);
  if (a.shape != b.shape)
    op_error("sub", "shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  if (want_tape<T>({&a, &b})) {
    out.ensure_grad();
    TapeT<T>::active()->record([a, b, out]() {
      const T* g = out.gptr();
      int64_t n = out.size();
      if (a.has_grad()) {
        T* ga = a.grad->data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.has_grad()) {
        T* gb = b.grad->data();
        for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  check_defined("mul", a);
  check_defined("mul", b);
  if (a.shape != b.shape)
    op_error("mul", "shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (want_tape<T>({&a, &b})) {
    out.ensure_grad();
    TapeT<T>::active()->record([a, b, out]() {
      const T* g = out.gptr();
      const T* pa = a.ptr();
      const T* pb = b.ptr();
      int64_t n = out.size();
      if (a.has_grad()) {
        T* ga = a.grad->data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
      }
      if (b.has_grad()) {
        T* gb = b.grad->data();
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T c) {
  check_defined("scale", a);
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const T* pa = a.ptr();
  T* po = out.ptr();
  int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
  if (want_tape<T>({&a})) {
    out.ensure_grad();
    TapeT<T>::active()->record([a, out, c]() {
      const T* g = out.gptr();
      T* ga = a.grad->data();
      int64_t n = out.size();
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

template <typename T>
TensorT<T> add_bias(const TensorT<T>& x, const TensorT<T>& b) {
  check_defined("add_bias", x);
  check_defined("add_bias", b);
  if (b.rank() != 1 || x.rank() < 1 || x.shape.back() != b.dim(0))
    op_error("add_bias", "bias " + shape_str(b.shape) + " does not match last dim of " +
                             shape_str(x.shape));
  int d = b.dim(0);
  int64_t rows = x.size() / d;
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  const T* px = x.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = px + r * d;
    T* orow = po + r * d;
    for (int j = 0; j < d; ++j) orow[j] = xr[j] + pb[j];
  }
  if (want_tape<T>({&x, &b})) {
    out.ensure_grad();
    TapeT<T>::active()->record([x, b, out]() {
      int d = b.dim(0);
      int64_t rows = x.size() / d;
      const T* g = out.gptr();
      if (x.has_grad()) {
        T* gx = x.grad->data();
        int64_t n = out.size();
        for (int64_t i = 0; i < n; ++i) gx[i] += g[i];
      }
      if (b.has_grad()) {
        T* gb = b.grad->data();
        for (int64_t r = 0; r < rows; ++r) {
          const T* grow = g + r * d;
          for (int j = 0; j < d; ++j) gb[j] += grow[j];
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
  check_defined("gelu", x);
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  const T* px = x.ptr();
  T* po = out.ptr();
  int64_t n = out.size();
  const T inv_sqrt2 = T(0.7071067811865475244);
  for (int64_t i = 0; i < n; ++i)
    po[i] = T(0.5) * px[i] * (T(1) + std::erf(px[i] * inv_sqrt2));
  if (want_tape<T>({&x})) {
    out.ensure_grad();
    TapeT<T>::active()->record([x, out, inv_sqrt2]() {
      const T* g = out.gptr();
      const T* px = x.ptr();
      T* gx = x.grad->data();
      int64_t n = out.size();
      const T inv_sqrt_2pi = T(0.3989422804014326779);
      for (int64_t i = 0; i < n; ++i) {
        T v = px[i];
        T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        gx[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> l2_normalize(const TensorT<T>& x) {
  check_defined("l2_normalize", x);
  const T* px = x.ptr();
  int64_t n = x.size();
  double ss = 0.0;
  for (int64_t i = 0; i < n; ++i) ss += static_cast<double>(px[i]) * static_cast<double>(px[i]);
  double norm = std::sqrt(ss);
  if (norm < 1e-12)
    op_error("l2_normalize", "norm below 1e-12 for shape " + shape_str(x.shape));
  T inv = static_cast<T>(1.0 / norm);
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  T* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] * inv;
  if (want_tape<T>({&x})) {
    out.ensure_grad();
    TapeT<T>::active()->record([x, out, inv]() {
      // y = x/||x||; dx = (g - y (y.g)) / ||x||
      const T* g = out.gptr();
      const T* py = out.ptr();
      T* gx = x.grad->data();
      int64_t n = out.size();
      T dot = T(0);
      for (int64_t i = 0; i < n; ++i) dot += py[i] * g[i];
      for (int64_t i = 0; i < n; ++i) gx[i] += (g[i] - py[i] * dot) * inv;
    });
  }
  return out;
}

template <typename T>
TensorT<T> silu(const TensorT<T>& x) {
  check_defined("silu", x);
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  const T* px = x.ptr();
  T* po = out.ptr();
  int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) {
    T s = T(1) / (T(1) + std::exp(-px[i]));
    po[i] = px[i] * s;
  }
  if (want_tape<T>({&x})) {
    out.ensure_grad();
    TapeT<T>::active()->record([x, out]() {
      const T* g = out.gptr();
      const T* px = x.ptr();
      T* gx = x.grad->data();
      int64_t n = out.size();
      for (int64_t i = 0; i < n; ++i) {
        T s = T(1) / (T(1) + std::exp(-px[i]));
        gx[i] += g[i] * s * (T(1) + px[i] * (T(1) - s));
      }
    });
  }
  return out;
}

// ------------------------------------------------------------- normalization

template <typename T>
TensorT<T> softmax(const TensorT<T>& x) {
  check_defined("softmax", x);
  if (x.rank() < 1) op_error("softmax", "rank-0 input");
  int d = x.shape.back();
  int64_t rows = x.size() / d;
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = px + r * d;
    T* orow = po + r * d;
    T m = xr[0];
    for (int j = 1; j < d; ++j) m = std::max(m, xr[j]);
    T s = T(0);
    for (int j = 0; j < d; ++j) {
      orow[j] = std::exp(xr[j] - m);
      s += orow[j];
    }
    T inv = T(1) / s;
    for (int j = 0; j < d; ++j) orow[j] *= inv;
  }
  if (want_tape<T>({&x})) {
    out.ensure_grad();
    TapeT<T>::active()->record([x, out]() {
      int d = out.shape.back();
      int64_t rows = out.size() / d;
      const T* g = out.gptr();
      const T* y = out.ptr();
      T* gx = x.grad->data();
      for (int64_t r = 0; r < rows; ++r) {
        const T* yr = y + r * d;
        const T* gr = g + r * d;
        T* gxr = gx + r * d;
        T dot = T(0);
        for (int j = 0; j < d; ++j) dot += gr[j] * yr[j];
        for (int j = 0; j < d; ++j) gxr[j] += yr[j] * (gr[j] - dot);
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain,
                      const TensorT<T>& bias, T eps) {
  check_defined("layer_norm", x);
  check_defined("layer_norm", gain);
  check_defined("layer_norm", bias);
  if (x.rank() < 1) op_error("layer_norm", "rank-0 input");
  int d = x.shape.back();
  if (gain.shape != Shape{d} || bias.shape != Shape{d})
    op_error("layer_norm", "gain/bias must be [" + std::to_string(d) + "], got " +
                               shape_str(gain.shape) + " and " + shape_str(bias.shape));
  int64_t rows = x.size() / d;
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  const T* px = x.ptr();
  const T* pg = gain.ptr();
  const T* pb = bias.ptr();
  T* po = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = px + r * d;
    T* orow = po + r * d;
    T mu = T(0);
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= T(d);
    T var = T(0);
    for (int j = 0; j < d; ++j) {
      T c = xr[j] - mu;
      var += c * c;
    }
    var /= T(d);
    T inv = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) orow[j] = (xr[j] - mu) * inv * pg[j] + pb[j];
  }
  if (want_tape<T>({&x, &gain, &bias})) {
    out.ensure_grad();
    TapeT<T>::active()->record([x, gain, bias, out, eps]() {
      int d = x.shape.back();
      int64_t rows = x.size() / d;
      const T* px = x.ptr();
      const T* pg = gain.ptr();
      const T* g = out.gptr();
      std::vector<T> xhat(static_cast<size_t>(d));
      for (int64_t r = 0; r < rows; ++r) {
        const T* xr = px + r * d;
        const T* gr = g + r * d;
        T mu = T(0);
        for (int j = 0; j < d; ++j) mu += xr[j];
        mu /= T(d);
        T var = T(0);
        for (int j = 0; j < d; ++j) {
          T c = xr[j] - mu;
          var += c * c;
        }
        var /= T(d);
        T inv = T(1) / std::sqrt(var + eps);
        for (int j = 0; j < d; ++j) xhat[static_cast<size_t>(j)] = (xr[j] - mu) * inv;
        if (gain.has_grad()) {
          T* gg = gain.grad->data();
          for (int j = 0; j < d; ++j) gg[j] += gr[j] * xhat[static_cast<size_t>(j)];
        }
        if (bias.has_grad()) {
          T* gb = bias.grad->data();
          for (int j = 0; j < d; ++j) gb[j] += gr[j];
        }
        if (x.has_grad()) {
          T* gx = x.grad->data() + r * d;
          T sum1 = T(0), sum2 = T(0);
          for (int j = 0; j < d; ++j) {
            T dxh = gr[j] * pg[j];
            sum1 += dxh;
            sum2 += dxh * xhat[static_cast<size_t>(j)];
          }
          for (int j = 0; j < d; ++j) {
            T dxh = gr[j] * pg[j];
            gx[j] += inv * (dxh - sum1 / T(d) - xhat[static_cast<size_t>(j)] * sum2 / T(d));
          }
        }
      }
    });
  }
  return out;
}

// ------------------------------------------------------------ linear algebra

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  check_defined("matmul", a);
  check_defined("matmul", b);
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    op_error("matmul", "shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  TensorT<T> out = TensorT<T>::zeros({m, n});
  mm_nn(out.ptr(), a.ptr(), b.ptr(), m, k, n);
  if (want_tape<T>({&a, &b})) {
    out.ensure_grad();
    TapeT<T>::active()->record([a, b, out]() {
      int m = a.dim(0), k = a.dim(1), n = b.dim(1);
      if (a.has_grad()) mm_nt(a.grad->data(), out.gptr(), b.ptr(), m, n, k);
      if (b.has_grad()) mm_tn(b.grad->data(), a.ptr(), out.gptr(), k, m, n);
    });
  }
  return out;
}

template <typename T>
TensorT<T> bmm(const TensorT<T>& a, const TensorT<T>& b) {
  check_defined("bmm", a);
  check_defined("bmm", b);
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    op_error("bmm", "shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  int bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  TensorT<T> out = TensorT<T>::zeros({bs, m, n});
  for (int i = 0; i < bs; ++i)
    mm_nn(out.ptr() + static_cast<int64_t>(i) * m * n, a.ptr() + static_cast<int64_t>(i) * m * k,
          b.ptr() + static_cast<int64_t>(i) * k * n, m, k, n);
  if (want_tape<T>({&a, &b})) {
    out.ensure_grad();
    TapeT<T>::active()->record([a, b, out]() {
      int bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
      for (int i = 0; i < bs; ++i) {
        const T* g = out.grad->data() + static_cast<int64_t>(i) * m * n;
        if (a.has_grad())
          mm_nt(a.grad->data() + static_cast<int64_t>(i) * m * k, g,
                b.ptr() + static_cast<int64_t>(i) * k * n, m, n, k);
        if (b.has_grad())
          mm_tn(b.grad->data() + static_cast<int64_t>(i) * k * n,
                a.ptr() + static_cast<int64_t>(i) * m * k, g, k, m, n);
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape s) {
  check_defined("reshape", x);
  if (numel(s) != x.size())
    op_error("reshape", "cannot reshape " + shape_str(x.shape) + " to " + shape_str(s));
  TensorT<T> out = TensorT<T>::zeros(s);
  std::memcpy(out.ptr(), x.ptr(), sizeof(T) * static_cast<size_t>(x.size()));
  if (want_tape<T>({&x})) {
    out.ensure_grad();
    TapeT<T>::active()->record([x, out]() {
      const T* g = out.gptr();
      T* gx = x.grad->data();
      int64_t n = x.size();
      for (int64_t i = 0; i < n; ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
TensorT<T> permute(const TensorT<T>& x, const std::vector<int>& axes) {
  check_defined("permute", x);
  int r = x.rank();
  if (static_cast<int>(axes.size()) != r) op_error("permute", "axes rank mismatch");
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int a : axes) {
    if (a < 0 || a >= r || seen[static_cast<size_t>(a)]) op_error("permute", "axes is not a permutation");
    seen[static_cast<size_t>(a)] = true;
  }
  Shape os(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) os[static_cast<size_t>(i)] = x.dim(axes[static_cast<size_t>(i)]);
  TensorT<T> out = TensorT<T>::zeros(os);
  permute_raw(x.shape, x.ptr(), axes, out.ptr(), false);
  if (want_tape<T>({&x})) {
    out.ensure_grad();
    std::vector<int> inv(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) inv[static_cast<size_t>(axes[static_cast<size_t>(i)])] = i;
    TapeT<T>::active()->record([x, out, inv]() {
      permute_raw(out.shape, out.gptr(), inv, x.grad->data(), true);
    });
  }
  return out;
}

// --------------------------------------------------------------- convolution

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  int stride, Pad pad) {
  check_defined("conv2d", x);
  check_defined("conv2d", w);
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1))
    op_error("conv2d", "shape mismatch input " + shape_str(x.shape) + " weight " +
                           shape_str(w.shape));
  if (stride != 1 && stride != 2) op_error("conv2d", "stride must be 1 or 2");
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int OC = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  if (b.defined() && b.shape != Shape{OC})
    op_error("conv2d", "bias must be [" + std::to_string(OC) + "], got " + shape_str(b.shape));
  ConvGeom gy = conv_geom("conv2d", H, KH, stride, pad);
  ConvGeom gx = conv_geom("conv2d", W, KW, stride, pad);
  int OH = gy.out, OW = gx.out;
  int R = C * KH * KW;
  TensorT<T> out = TensorT<T>::zeros({N, OC, OH, OW});
  std::vector<T> col(static_cast<size_t>(R) * OH * OW);
  for (int n = 0; n < N; ++n) {
    im2col(x.ptr() + static_cast<int64_t>(n) * C * H * W, C, H, W, KH, KW, stride,
           gy.pad_lo, gx.pad_lo, OH, OW, col.data());
    T* o = out.ptr() + static_cast<int64_t>(n) * OC * OH * OW;
    mm_nn(o, w.ptr(), col.data(), OC, R, OH * OW);
    if (b.defined()) {
      const T* pb = b.ptr();
      for (int oc = 0; oc < OC; ++oc) {
        T* plane = o + static_cast<int64_t>(oc) * OH * OW;
        for (int i = 0; i < OH * OW; ++i) plane[i] += pb[oc];
      }
    }
  }
  if (want_tape<T>({&x, &w, &b})) {
    out.ensure_grad();
    int pad_y = gy.pad_lo, pad_x = gx.pad_lo;
    TapeT<T>::active()->record([x, w, b, out, stride, pad_y, pad_x]() {
      int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      int OC = w.dim(0), KH = w.dim(2), KW = w.dim(3);
      int OH = out.dim(2), OW = out.dim(3);
      int R = C * KH * KW;
      std::vector<T> col(static_cast<size_t>(R) * OH * OW);
      std::vector<T> dcol(static_cast<size_t>(R) * OH * OW);
      for (int n = 0; n < N; ++n) {
        const T* g = out.grad->data() + static_cast<int64_t>(n) * OC * OH * OW;
        bool need_col = w.has_grad() || x.has_grad();
        if (need_col)
          im2col(x.ptr() + static_cast<int64_t>(n) * C * H * W, C, H, W, KH, KW, stride,
                 pad_y, pad_x, OH, OW, col.data());
        if (w.has_grad()) mm_nt(w.grad->data(), g, col.data(), OC, OH * OW, R);
        if (x.has_grad()) {
          std::fill(dcol.begin(), dcol.end(), T(0));
          mm_tn(dcol.data(), w.ptr(), g, R, OC, OH * OW);
          col2im_add(dcol.data(), C, H, W, KH, KW, stride, pad_y, pad_x, OH, OW,
                     x.grad->data() + static_cast<int64_t>(n) * C * H * W);
        }
        if (b.defined() && b.has_grad()) {
          T* gb = b.grad->data();
          for (int oc = 0; oc < OC; ++oc) {
            const T* plane = g + static_cast<int64_t>(oc) * OH * OW;
            T acc = T(0);
            for (int i = 0; i < OH * OW; ++i) acc += plane[i];
            gb[oc] += acc;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> conv1d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  int stride, Pad pad) {
  check_defined("conv1d", x);
  check_defined("conv1d", w);
  if (x.rank() != 3 || w.rank() != 3 || x.dim(1) != w.dim(1))
    op_error("conv1d", "shape mismatch input " + shape_str(x.shape) + " weight " +
                           shape_str(w.shape));
  if (stride != 1 && stride != 2) op_error("conv1d", "stride must be 1 or 2");
  int N = x.dim(0), C = x.dim(1), L = x.dim(2);
  int OC = w.dim(0), K = w.dim(2);
  if (b.defined() && b.shape != Shape{OC})
    op_error("conv1d", "bias must be [" + std::to_string(OC) + "], got " + shape_str(b.shape));
  ConvGeom g1 = conv_geom("conv1d", L, K, stride, pad);
  int OL = g1.out;
  int R = C * K;
  TensorT<T> out = TensorT<T>::zeros({N, OC, OL});
  std::vector<T> col(static_cast<size_t>(R) * OL);
  for (int n = 0; n < N; ++n) {
    im2col(x.ptr() + static_cast<int64_t>(n) * C * L, C, 1, L, 1, K, stride, 0,
           g1.pad_lo, 1, OL, col.data());
    T* o = out.ptr() + static_cast<int64_t>(n) * OC * OL;
    mm_nn(o, w.ptr(), col.data(), OC, R, OL);
    if (b.defined()) {
      const T* pb = b.ptr();
      for (int oc = 0; oc < OC; ++oc)
        for (int i = 0; i < OL; ++i) o[static_cast<int64_t>(oc) * OL + i] += pb[oc];
    }
  }
  if (want_tape<T>({&x, &w, &b})) {
    out.ensure_grad();
    int pad_lo = g1.pad_lo;
    TapeT<T>::active()->record([x, w, b, out, stride, pad_lo]() {
      int N = x.dim(0), C = x.dim(1), L = x.dim(2);
      int OC = w.dim(0), K = w.dim(2);
      int OL = out.dim(2);
      int R = C * K;
      std::vector<T> col(static_cast<size_t>(R) * OL);
      std::vector<T> dcol(static_cast<size_t>(R) * OL);
      for (int n = 0; n < N; ++n) {
        const T* g = out.grad->data() + static_cast<int64_t>(n) * OC * OL;
        if (w.has_grad() || x.has_grad())
          im2col(x.ptr() + static_cast<int64_t>(n) * C * L, C, 1, L, 1, K, stride, 0,
                 pad_lo, 1, OL, col.data());
        if (w.has_grad()) mm_nt(w.grad->data(), g, col.data(), OC, OL, R);
        if (x.has_grad()) {
          std::fill(dcol.begin(), dcol.end(), T(0));
          mm_tn(dcol.data(), w.ptr(), g, R, OC, OL);
          col2im_add(dcol.data(), C, 1, L, 1, K, stride, 0, pad_lo, 1, OL,
                     x.grad->data() + static_cast<int64_t>(n) * C * L);
        }
        if (b.defined() && b.has_grad()) {
          T* gb = b.grad->data();
          for (int oc = 0; oc < OC; ++oc) {
            T acc = T(0);
            for (int i = 0; i < OL; ++i) acc += g[static_cast<int64_t>(oc) * OL + i];
            gb[oc] += acc;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> tconv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                   int stride) {
  check_defined("tconv2d", x);
  check_defined("tconv2d", w);
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(0))
    op_error("tconv2d", "shape mismatch input " + shape_str(x.shape) + " weight " +
                            shape_str(w.shape));
  if (stride != 1 && stride != 2) op_error("tconv2d", "stride must be 1 or 2");
  int N = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
  int OC = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  if (b.defined() && b.shape != Shape{OC})
    op_error("tconv2d", "bias must be [" + std::to_string(OC) + "], got " + shape_str(b.shape));
  int OH = (H - 1) * stride + KH;
  int OW = (W - 1) * stride + KW;
  TensorT<T> out = TensorT<T>::zeros({N, OC, OH, OW});
  T* po = out.ptr();
  const T* px = x.ptr();
  const T* pw = w.ptr();
  for (int n = 0; n < N; ++n) {
    for (int ic = 0; ic < IC; ++ic) {
      const T* xplane = px + (static_cast<int64_t>(n) * IC + ic) * H * W;
      for (int oc = 0; oc < OC; ++oc) {
        const T* wk = pw + (static_cast<int64_t>(ic) * OC + oc) * KH * KW;
        T* oplane = po + (static_cast<int64_t>(n) * OC + oc) * OH * OW;
        for (int iy = 0; iy < H; ++iy) {
          for (int ix = 0; ix < W; ++ix) {
            T v = xplane[iy * W + ix];
            if (v == T(0)) continue;
            for (int ky = 0; ky < KH; ++ky) {
              T* orow = oplane + static_cast<int64_t>(iy * stride + ky) * OW + ix * stride;
              for (int kx = 0; kx < KW; ++kx) orow[kx] += v * wk[ky * KW + kx];
            }
          }
        }
      }
    }
    if (b.defined()) {
      const T* pb = b.ptr();
      for (int oc = 0; oc < OC; ++oc) {
        T* oplane = po + (static_cast<int64_t>(n) * OC + oc) * OH * OW;
        for (int i = 0; i < OH * OW; ++i) oplane[i] += pb[oc];
      }
    }
  }
  if (want_tape<T>({&x, &w, &b})) {
    out.ensure_grad();
    TapeT<T>::active()->record([x, w, b, out, stride]() {
      int N = x.dim(0), IC = x.dim(1), H = x.dim(2), W = x.dim(3);
      int OC = w.dim(1), KH = w.dim(2), KW = w.dim(3);
      int OH = out.dim(2), OW = out.dim(3);
      const T* g = out.gptr();
      const T* px = x.ptr();
      const T* pw = w.ptr();
      for (int n = 0; n < N; ++n) {
        for (int ic = 0; ic < IC; ++ic) {
          const T* xplane = px + (static_cast<int64_t>(n) * IC + ic) * H * W;
          T* gxplane = x.has_grad() ? x.grad->data() + (static_cast<int64_t>(n) * IC + ic) * H * W
                                    : nullptr;
          for (int oc = 0; oc < OC; ++oc) {
            const T* wk = pw + (static_cast<int64_t>(ic) * OC + oc) * KH * KW;
            T* gwk = w.has_grad()
                         ? w.grad->data() + (static_cast<int64_t>(ic) * OC + oc) * KH * KW
                         : nullptr;
            const T* gplane = g + (static_cast<int64_t>(n) * OC + oc) * OH * OW;
            for (int iy = 0; iy < H; ++iy) {
              for (int ix = 0; ix < W; ++ix) {
                T xv = xplane[iy * W + ix];
                T acc = T(0);
                for (int ky = 0; ky < KH; ++ky) {
                  const T* grow =
                      gplane + static_cast<int64_t>(iy * stride + ky) * OW + ix * stride;
                  for (int kx = 0; kx < KW; ++kx) {
                    acc += grow[kx] * wk[ky * KW + kx];
                    if (gwk) gwk[ky * KW + kx] += grow[kx] * xv;
                  }
                }
                if (gxplane) gxplane[iy * W + ix] += acc;
              }
            }
          }
        }
        if (b.defined() && b.has_grad()) {
          T* gb = b.grad->data();
          for (int oc = 0; oc < OC; ++oc) {
            const T* gplane = g + (static_cast<int64_t>(n) * OC + oc) * OH * OW;
            T acc = T(0);
            for (int i = 0; i < OH * OW; ++i) acc += gplane[i];
            gb[oc] += acc;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- resampling

// Nearest-neighbor index map: src = (dst * in_extent) / out_extent, floored.
template <typename T>
TensorT<T> resample_nearest2d(const TensorT<T>& x, int oh, int ow) {
  check_defined("resample_nearest2d", x);
  if (x.rank() != 4) op_error("resample_nearest2d", "expected NCHW, got " + shape_str(x.shape));
  if (oh <= 0 || ow <= 0) op_error("resample_nearest2d", "output extent must be positive");
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  TensorT<T> out = TensorT<T>::zeros({N, C, oh, ow});
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int nc = 0; nc < N * C; ++nc) {
    const T* ip = px + static_cast<int64_t>(nc) * H * W;
    T* op = po + static_cast<int64_t>(nc) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      int iy = static_cast<int>((static_cast<int64_t>(oy) * H) / oh);
      for (int ox = 0; ox < ow; ++ox) {
        int ix = static_cast<int>((static_cast<int64_t>(ox) * W) / ow);
        op[oy * ow + ox] = ip[iy * W + ix];
      }
    }
  }
  if (want_tape<T>({&x})) {
    out.ensure_grad();
    TapeT<T>::active()->record([x, out]() {
      int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      int oh = out.dim(2), ow = out.dim(3);
      const T* g = out.gptr();
      T* gx = x.grad->data();
      for (int nc = 0; nc < N * C; ++nc) {
        const T* gp = g + static_cast<int64_t>(nc) * oh * ow;
        T* gxp = gx + static_cast<int64_t>(nc) * H * W;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = static_cast<int>((static_cast<int64_t>(oy) * H) / oh);
          for (int ox = 0; ox < ow; ++ox) {
            int ix = static_cast<int>((static_cast<int64_t>(ox) * W) / ow);
            gxp[iy * W + ix] += gp[oy * ow + ox];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> resample_nearest1d(const TensorT<T>& x, int ol) {
  check_defined("resample_nearest1d", x);
  if (x.rank() != 3) op_error("resample_nearest1d", "expected NCL, got " + shape_str(x.shape));
  if (ol <= 0) op_error("resample_nearest1d", "output extent must be positive");
  int N = x.dim(0), C = x.dim(1), L = x.dim(2);
  TensorT<T> out = TensorT<T>::zeros({N, C, ol});
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int nc = 0; nc < N * C; ++nc) {
    const T* ip = px + static_cast<int64_t>(nc) * L;
    T* op = po + static_cast<int64_t>(nc) * ol;
    for (int o = 0; o < ol; ++o) op[o] = ip[(static_cast<int64_t>(o) * L) / ol];
  }
  if (want_tape<T>({&x})) {
    out.ensure_grad();
    TapeT<T>::active()->record([x, out]() {
      int L = x.dim(2), ol = out.dim(2);
      int NC = x.dim(0) * x.dim(1);
      const T* g = out.gptr();
      T* gx = x.grad->data();
      for (int nc = 0; nc < NC; ++nc) {
        const T* gp = g + static_cast<int64_t>(nc) * ol;
        T* gxp = gx + static_cast<int64_t>(nc) * L;
        for (int o = 0; o < ol; ++o) gxp[(static_cast<int64_t>(o) * L) / ol] += gp[o];
      }
    });
  }
  return out;
}

// ----------------------------------------------------------- gather / concat

template <typename T>
TensorT<T> gather_rows(const TensorT<T>& x, const std::vector<int>& ids) {
  check_defined("gather_rows", x);
  if (x.rank() != 2) op_error("gather_rows", "expected 2-D table, got " + shape_str(x.shape));
  int v = x.dim(0), d = x.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      op_error("gather_rows", "index " + std::to_string(id) + " out of range [0," +
                                  std::to_string(v) + ")");
  int n = static_cast<int>(ids.size());
  TensorT<T> out = TensorT<T>::zeros({n, d});
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int i = 0; i < n; ++i)
    std::memcpy(po + static_cast<int64_t>(i) * d, px + static_cast<int64_t>(ids[static_cast<size_t>(i)]) * d,
                sizeof(T) * static_cast<size_t>(d));
  if (want_tape<T>({&x})) {
    out.ensure_grad();
    TapeT<T>::active()->record([x, out, ids]() {
      int d = x.dim(1);
      const T* g = out.gptr();
      T* gx = x.grad->data();
      for (size_t i = 0; i < ids.size(); ++i) {
        const T* grow = g + static_cast<int64_t>(i) * d;
        T* gxr = gx + static_cast<int64_t>(ids[i]) * d;
        for (int j = 0; j < d; ++j) gxr[j] += grow[j];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& xs, int axis) {
  if (xs.empty()) op_error("concat", "no inputs");
  int r = xs[0].rank();
  if (axis < 0 || axis >= r) op_error("concat", "axis out of range");
  Shape os = xs[0].shape;
  int total_axis = 0;
  for (const auto& x : xs) {
    check_defined("concat", x);
    if (x.rank() != r) op_error("concat", "rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && x.dim(i) != os[static_cast<size_t>(i)])
        op_error("concat", "shape mismatch " + shape_str(x.shape) + " vs " + shape_str(os) +
                               " along axis " + std::to_string(axis));
    total_axis += x.dim(axis);
  }
  os[static_cast<size_t>(axis)] = total_axis;
  TensorT<T> out = TensorT<T>::zeros(os);
  int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= os[static_cast<size_t>(i)];
  int64_t inner = 1;
  for (int i = axis + 1; i < r; ++i) inner *= os[static_cast<size_t>(i)];
  int64_t out_stride = static_cast<int64_t>(total_axis) * inner;
  int64_t off = 0;
  for (const auto& x : xs) {
    int64_t blk = static_cast<int64_t>(x.dim(axis)) * inner;
    const T* px = x.ptr();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(out.ptr() + o * out_stride + off, px + o * blk,
                  sizeof(T) * static_cast<size_t>(blk));
    off += blk;
  }
  bool rec = false;
  if (recording<T>())
    for (const auto& x : xs)
      if (x.has_grad()) rec = true;
  if (rec) {
    out.ensure_grad();
    std::vector<TensorT<T>> inputs = xs;
    TapeT<T>::active()->record([inputs, out, axis, outer, inner, out_stride]() {
      const T* g = out.gptr();
      int64_t off = 0;
      for (const auto& x : inputs) {
        int64_t blk = static_cast<int64_t>(x.dim(axis)) * inner;
        if (x.has_grad()) {
          T* gx = x.grad->data();
          for (int64_t o = 0; o < outer; ++o) {
            const T* src = g + o * out_stride + off;
            T* dst = gx + o * blk;
            for (int64_t i = 0; i < blk; ++i) dst[i] += src[i];
          }
        }
        off += blk;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- reductions

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
  check_defined("sum_all", x);
  double acc = 0;
  const T* px = x.ptr();
  int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(px[i]);
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc));
  if (want_tape<T>({&x})) {
    out.ensure_grad();
    TapeT<T>::active()->record([x, out]() {
      T g = (*out.grad)[0];
      T* gx = x.grad->data();
      int64_t n = x.size();
      for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& x) {
  check_defined("mean_all", x);
  double acc = 0;
  const T* px = x.ptr();
  int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(px[i]);
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
  if (want_tape<T>({&x})) {
    out.ensure_grad();
    TapeT<T>::active()->record([x, out]() {
      int64_t n = x.size();
      T g = (*out.grad)[0] / static_cast<T>(n);
      T* gx = x.grad->data();
      for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

template <typename T>
TensorT<T> sum_axis(const TensorT<T>& x, int axis) {
  check_defined("sum_axis", x);
  if (axis < 0 || axis >= x.rank()) op_error("sum_axis", "axis out of range");
  Shape os;
  for (int i = 0; i < x.rank(); ++i)
    if (i != axis) os.push_back(x.dim(i));
  if (os.empty()) os.push_back(1);
  int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  int64_t mid = x.dim(axis);
  int64_t inner = 1;
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  TensorT<T> out = TensorT<T>::zeros(os);
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t m = 0; m < mid; ++m) {
      const T* src = px + (o * mid + m) * inner;
      T* dst = po + o * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  if (want_tape<T>({&x})) {
    out.ensure_grad();
    TapeT<T>::active()->record([x, out, outer, mid, inner]() {
      const T* g = out.gptr();
      T* gx = x.grad->data();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t m = 0; m < mid; ++m) {
          T* dst = gx + (o * mid + m) * inner;
          const T* src = g + o * inner;
          for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    });
  }
  return out;
}

template <typename T>
TensorT<T> mean_axis(const TensorT<T>& x, int axis) {
  if (axis < 0 || axis >= x.rank()) op_error("mean_axis", "axis out of range");
  T inv = T(1) / static_cast<T>(x.dim(axis));
  return scale(sum_axis(x, axis), inv);
}

// -------------------------------------------------------------------- losses

template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const std::vector<int>& targets,
                         int ignore_index) {
  check_defined("cross_entropy", logits);
  if (logits.rank() != 2) op_error("cross_entropy", "expected (N,V) logits, got " + shape_str(logits.shape));
  int n = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(targets.size()) != n)
    op_error("cross_entropy", "targets size " + std::to_string(targets.size()) +
                                  " does not match rows " + std::to_string(n));
  int count = 0;
  for (int t : targets) {
    if (t == ignore_index) continue;
    if (t < 0 || t >= v)
      op_error("cross_entropy", "target " + std::to_string(t) + " out of range [0," +
                                    std::to_string(v) + ")");
    ++count;
  }
  if (count == 0) op_error("cross_entropy", "all positions ignored");
  const T* px = logits.ptr();
  double acc = 0;
  for (int i = 0; i < n; ++i) {
    if (targets[static_cast<size_t>(i)] == ignore_index) continue;
    const T* row = px + static_cast<int64_t>(i) * v;
    T m = row[0];
    for (int j = 1; j < v; ++j) m = std::max(m, row[j]);
    double s = 0;
    for (int j = 0; j < v; ++j) s += std::exp(static_cast<double>(row[j] - m));
    double lse = static_cast<double>(m) + std::log(s);
    acc += lse - static_cast<double>(row[targets[static_cast<size_t>(i)]]);
  }
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc / count));
  if (want_tape<T>({&logits})) {
    out.ensure_grad();
    TapeT<T>::active()->record([logits, out, targets, ignore_index, count]() {
      int n = logits.dim(0), v = logits.dim(1);
      const T* px = logits.ptr();
      T* gx = logits.grad->data();
      T g = (*out.grad)[0] / static_cast<T>(count);
      for (int i = 0; i < n; ++i) {
        int t = targets[static_cast<size_t>(i)];
        if (t == ignore_index) continue;
        const T* row = px + static_cast<int64_t>(i) * v;
        T* grow = gx + static_cast<int64_t>(i) * v;
        T m = row[0];
        for (int j = 1; j < v; ++j) m = std::max(m, row[j]);
        double s = 0;
        for (int j = 0; j < v; ++j) s += std::exp(static_cast<double>(row[j] - m));
        for (int j = 0; j < v; ++j) {
          T p = static_cast<T>(std::exp(static_cast<double>(row[j] - m)) / s);
          grow[j] += g * (p - (j == t ? T(1) : T(0)));
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> mse(const TensorT<T>& a, const TensorT<T>& b) {
  check_defined("mse", a);
  check_defined("mse", b);
  if (a.shape != b.shape)
    op_error("mse", "shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  int64_t n = a.size();
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
    acc += d * d;
  }
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
  if (want_tape<T>({&a, &b})) {
    out.ensure_grad();
    TapeT<T>::active()->record([a, b, out]() {
      int64_t n = a.size();
      const T* pa = a.ptr();
      const T* pb = b.ptr();
      T g = (*out.grad)[0] * T(2) / static_cast<T>(n);
      if (a.has_grad()) {
        T* ga = a.grad->data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g * (pa[i] - pb[i]);
      }
      if (b.has_grad()) {
        T* gb = b.grad->data();
        for (int64_t i = 0; i < n; ++i) gb[i] -= g * (pa[i] - pb[i]);
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> cosine_sim(const TensorT<T>& a, const TensorT<T>& b) {
  check_defined("cosine_sim", a);
  check_defined("cosine_sim", b);
  if (a.size() != b.size())
    op_error("cosine_sim", "element count mismatch " + shape_str(a.shape) + " vs " +
                               shape_str(b.shape));
  const double eps = 1e-12;
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  int64_t n = a.size();
  double dot = 0, na = 0, nb = 0;
  for (int64_t i = 0; i < n; ++i) {
    dot += static_cast<double>(pa[i]) * static_cast<double>(pb[i]);
    na += static_cast<double>(pa[i]) * static_cast<double>(pa[i]);
    nb += static_cast<double>(pb[i]) * static_cast<double>(pb[i]);
  }
  double denom = std::sqrt((na + eps) * (nb + eps));
  double cosv = dot / denom;
  TensorT<T> out = TensorT<T>::scalar(static_cast<T>(cosv));
  if (want_tape<T>({&a, &b})) {
    out.ensure_grad();
    TapeT<T>::active()->record([a, b, out, dot, na, nb, denom, cosv]() {
      int64_t n = a.size();
      const T* pa = a.ptr();
      const T* pb = b.ptr();
      double g = static_cast<double>((*out.grad)[0]);
      if (a.has_grad()) {
        T* ga = a.grad->data();
        double c = dot * (nb + 1e-12) / (denom * denom * denom);
        for (int64_t i = 0; i < n; ++i)
          ga[i] += static_cast<T>(g * (static_cast<double>(pb[i]) / denom -
                                       c * static_cast<double>(pa[i])));
      }
      if (b.has_grad()) {
        T* gb = b.grad->data();
        double c = dot * (na + 1e-12) / (denom * denom * denom);
        for (int64_t i = 0; i < n; ++i)
          gb[i] += static_cast<T>(g * (static_cast<double>(pa[i]) / denom -
                                       c * static_cast<double>(pb[i])));
      }
    });
  }
  return out;
}

// ----------------------------------------------------------------- attention

template <typename T>
TensorT<T> causal_mask(int t) {
  TensorT<T> m = TensorT<T>::zeros({t, t});
  T* p = m.ptr();
  for (int i = 0; i < t; ++i)
    for (int j = i + 1; j < t; ++j) p[static_cast<int64_t>(i) * t + j] = T(-1e9);
  return m;
}

template <typename T>
TensorT<T> sdpa(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                bool causal) {
  check_defined("sdpa", q);
  check_defined("sdpa", k);
  check_defined("sdpa", v);
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3)
    op_error("sdpa", "expected (B,T,D) inputs");
  if (q.dim(0) != k.dim(0) || q.dim(0) != v.dim(0) || q.dim(2) != k.dim(2) ||
      k.dim(1) != v.dim(1))
    op_error("sdpa", "shape mismatch q " + shape_str(q.shape) + " k " + shape_str(k.shape) +
                         " v " + shape_str(v.shape));
  int B = q.dim(0), tq = q.dim(1), tk = k.dim(1), d = q.dim(2);
  if (causal && tq != tk) op_error("sdpa", "causal attention requires square scores");
  TensorT<T> kt = permute(k, {0, 2, 1});
  TensorT<T> scores = scale(bmm(q, kt), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
  if (causal) {
    TensorT<T> mask = TensorT<T>::zeros({B, tq, tk});
    T* p = mask.ptr();
    for (int bq = 0; bq < B; ++bq)
      for (int i = 0; i < tq; ++i)
        for (int j = i + 1; j < tk; ++j)
          p[(static_cast<int64_t>(bq) * tq + i) * tk + j] = T(-1e9);
    scores = add(scores, mask);
  }
  return bmm(softmax(scores), v);
}

template <typename T>
TensorT<T> sinusoidal_embedding(int step, int dim) {
  if (dim <= 0 || dim % 2 != 0) op_error("sinusoidal_embedding", "dim must be positive even");
  TensorT<T> out = TensorT<T>::zeros({dim});
  T* p = out.ptr();
  int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    p[2 * i] = static_cast<T>(std::sin(step * freq));
    p[2 * i + 1] = static_cast<T>(std::cos(step * freq));
  }
  return out;
}

double cosine_exact(const float* a, const float* b, int64_t n) {
  double dot = 0, na = 0, nb = 0;
  for (int64_t i = 0; i < n; ++i) {
    dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

// ---------------------------------------------------- explicit instantiation

#define AM_INSTANTIATE_OPS(T)                                                              \
  template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);                        \
  template TensorT<T> sub<T>(const TensorT<T>&, const TensorT<T>&);                        \
  template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&);                        \
  template TensorT<T> scale<T>(const TensorT<T>&, T);                                      \
  template TensorT<T> add_bias<T>(const TensorT<T>&, const TensorT<T>&);                   \
  template TensorT<T> gelu<T>(const TensorT<T>&);                                          \
  template TensorT<T> silu<T>(const TensorT<T>&);                                          \
  template TensorT<T> softmax<T>(const TensorT<T>&);                                       \
  template TensorT<T> l2_normalize<T>(const TensorT<T>&);                                  \
  template TensorT<T> layer_norm<T>(const TensorT<T>&, const TensorT<T>&,                  \
                                    const TensorT<T>&, T);                                 \
  template TensorT<T> matmul<T>(const TensorT<T>&, const TensorT<T>&);                     \
  template TensorT<T> bmm<T>(const TensorT<T>&, const TensorT<T>&);                        \
  template TensorT<T> reshape<T>(const TensorT<T>&, Shape);                                \
  template TensorT<T> permute<T>(const TensorT<T>&, const std::vector<int>&);              \
  template TensorT<T> conv2d<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,  \
                                int, Pad);                                                 \
  template TensorT<T> conv1d<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,  \
                                int, Pad);                                                 \
  template TensorT<T> tconv2d<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, \
                                 int);                                                     \
  template TensorT<T> resample_nearest2d<T>(const TensorT<T>&, int, int);                  \
  template TensorT<T> resample_nearest1d<T>(const TensorT<T>&, int);                       \
  template TensorT<T> gather_rows<T>(const TensorT<T>&, const std::vector<int>&);          \
  template TensorT<T> concat<T>(const std::vector<TensorT<T>>&, int);                      \
  template TensorT<T> sum_all<T>(const TensorT<T>&);                                       \
  template TensorT<T> mean_all<T>(const TensorT<T>&);                                      \
  template TensorT<T> sum_axis<T>(const TensorT<T>&, int);                                 \
  template TensorT<T> mean_axis<T>(const TensorT<T>&, int);                                \
  template TensorT<T> cross_entropy<T>(const TensorT<T>&, const std::vector<int>&, int);   \
  template TensorT<T> mse<T>(const TensorT<T>&, const TensorT<T>&);                        \
  template TensorT<T> cosine_sim<T>(const TensorT<T>&, const TensorT<T>&);                 \
  template TensorT<T> sdpa<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,     \
                              bool);                                                       \
  template TensorT<T> causal_mask<T>(int);                                                 \
  template TensorT<T> sinusoidal_embedding<T>(int, int);

AM_INSTANTIATE_OPS(float)
AM_INSTANTIATE_OPS(double)

#undef AM_INSTANTIATE_OPS

}  // namespace am::nn
