#pragma once

// Parameterized building blocks. Modules register their tensors in a
// ParamStore and keep pointers to the stored values (Param addresses are
// stable), so phase masks that swap grad buffers stay visible to every module.
// Construction order is fixed and all init draws come from one Rng, which
// makes model assembly reproducible.

#include <cmath>
#include <optional>
#include <string>

#include "anymodal/ops.hpp"
#include "anymodal/params.hpp"
#include "anymodal/rng.hpp"

namespace am::nn {

template <typename T>
TensorT<T>* make_param(ParamStoreT<T>& ps, const std::string& name, Shape shape) {
  return &ps.create(name, std::move(shape)).value;
}

template <typename T>
TensorT<T>* make_param_full(ParamStoreT<T>& ps, const std::string& name, Shape shape,
                            T fill) {
  TensorT<T>* t = make_param(ps, name, std::move(shape));
  for (int64_t i = 0; i < t->size(); ++i) t->ptr()[i] = fill;
  return t;
}

template <typename T>
TensorT<T>* make_param_normal(ParamStoreT<T>& ps, const std::string& name, Shape shape,
                              Rng& rng, double sd) {
  TensorT<T>* t = make_param(ps, name, std::move(shape));
  rng.fill_normal(t->ptr(), t->size(), sd);
  return t;
}

// Applies a rank-2 op to the flattened leading dims of x.
template <typename T, typename Fn>
TensorT<T> on_rows(const TensorT<T>& x, int cols_out, Fn&& fn) {
  if (x.rank() == 2) return fn(x);
  int last = x.shape.back();
  int64_t rows = x.size() / last;
  TensorT<T> flat = reshape(x, {static_cast<int>(rows), last});
  TensorT<T> y = fn(flat);
  Shape out = x.shape;
  out.back() = cols_out;
  return reshape(y, std::move(out));
}

template <typename T>
struct LinearT {
  TensorT<T>* w = nullptr;  // (in, out)
  TensorT<T>* b = nullptr;  // (out)
  int in = 0, out = 0;

  LinearT() = default;
  LinearT(ParamStoreT<T>& ps, const std::string& prefix, int in_, int out_, Rng& rng,
          bool zero_init = false)
      : in(in_), out(out_) {
    w = zero_init ? make_param<T>(ps, prefix + "/w", {in_, out_})
                  : make_param_normal<T>(ps, prefix + "/w", {in_, out_}, rng,
                                         1.0 / std::sqrt(static_cast<double>(in_)));
    b = make_param<T>(ps, prefix + "/b", {out_});
  }

  TensorT<T> forward(const TensorT<T>& x) const {
    return on_rows(x, out, [&](const TensorT<T>& f) { return add_bias(matmul(f, *w), *b); });
  }
};

// Linear layer whose weight can carry a low-rank adapter: y = xW + s·x·Aᵀ·Bᵀ.
// With B at zero the adapter is exactly inert regardless of A.
template <typename T>
struct LoraLinearT {
  TensorT<T>* w = nullptr;   // (in, out)
  TensorT<T>* b = nullptr;   // (out)
  TensorT<T>* la = nullptr;  // (r, in)
  TensorT<T>* lb = nullptr;  // (out, r)
  std::string la_name, lb_name;
  T lscale = T(1);
  int in = 0, out = 0;

  LoraLinearT() = default;
  LoraLinearT(ParamStoreT<T>& ps, const std::string& prefix, int in_, int out_, Rng& rng)
      : in(in_), out(out_) {
    w = make_param_normal<T>(ps, prefix + "/w", {in_, out_}, rng,
                             1.0 / std::sqrt(static_cast<double>(in_)));
    b = make_param<T>(ps, prefix + "/b", {out_});
  }

  void attach_lora(ParamStoreT<T>& ps, const std::string& prefix, int rank, Rng& rng,
                   T scale_val) {
    la_name = prefix + "/a";
    lb_name = prefix + "/b";
    la = make_param_normal<T>(ps, la_name, {rank, in}, rng,
                              1.0 / std::sqrt(static_cast<double>(in)));
    lb = make_param<T>(ps, lb_name, {out, rank});  // zero-init keeps the base exact
    lscale = scale_val;
  }

  bool has_lora() const { return la != nullptr; }

  TensorT<T> forward(const TensorT<T>& x) const {
    return on_rows(x, out, [&](const TensorT<T>& f) {
      TensorT<T> y = add_bias(matmul(f, *w), *b);
      if (la) {
        TensorT<T> delta = matmul(matmul(f, permute(*la, {1, 0})), permute(*lb, {1, 0}));
        y = add(y, scale(delta, lscale));
      }
      return y;
    });
  }

  // Folds the adapter into the base weight and removes it from the store.
  void merge_lora(ParamStoreT<T>& ps) {
    if (!la) return;
    NoGrad ng;
    TensorT<T> delta = matmul(permute(*la, {1, 0}), permute(*lb, {1, 0}));  // (in, out)
    for (int64_t i = 0; i < w->size(); ++i) w->ptr()[i] += lscale * delta.ptr()[i];
    ps.remove(la_name);
    ps.remove(lb_name);
    la = lb = nullptr;
  }
};

// (Tq, d) x (Tk, d) multi-head attention on a single sequence.
template <typename T>
TensorT<T> mha(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v, int heads,
               bool causal) {
  int tq = q.shape[0], d = q.shape[1], tk = k.shape[0];
  if (d % heads != 0) op_error("mha", "dim " + std::to_string(d) + " not divisible by heads");
  int dh = d / heads;
  auto split = [&](const TensorT<T>& x, int len) {
    return permute(reshape(x, {len, heads, dh}), {1, 0, 2});  // (H, len, dh)
  };
  TensorT<T> o = sdpa(split(q, tq), split(k, tk), split(v, tk), causal);
  return reshape(permute(o, {1, 0, 2}), {tq, d});
}

// Pre-norm transformer block (self-attention + MLP), LoRA-capable on all six
// weight matrices.
template <typename T>
struct AttnBlockT {
  TensorT<T>*ln1_g = nullptr, *ln1_b = nullptr, *ln2_g = nullptr, *ln2_b = nullptr;
  LoraLinearT<T> wq, wk, wv, wo, w1, w2;
  int heads = 1;

  AttnBlockT() = default;
  AttnBlockT(ParamStoreT<T>& ps, const std::string& prefix, int d, int heads_,
             int mlp_mult, Rng& rng)
      : heads(heads_) {
    ln1_g = make_param_full<T>(ps, prefix + "/ln1/g", {d}, T(1));
    ln1_b = make_param<T>(ps, prefix + "/ln1/b", {d});
    wq = LoraLinearT<T>(ps, prefix + "/wq", d, d, rng);
    wk = LoraLinearT<T>(ps, prefix + "/wk", d, d, rng);
    wv = LoraLinearT<T>(ps, prefix + "/wv", d, d, rng);
    wo = LoraLinearT<T>(ps, prefix + "/wo", d, d, rng);
    ln2_g = make_param_full<T>(ps, prefix + "/ln2/g", {d}, T(1));
    ln2_b = make_param<T>(ps, prefix + "/ln2/b", {d});
    w1 = LoraLinearT<T>(ps, prefix + "/w1", d, d * mlp_mult, rng);
    w2 = LoraLinearT<T>(ps, prefix + "/w2", d * mlp_mult, d, rng);
  }

  void attach_lora(ParamStoreT<T>& ps, const std::string& prefix, int rank, Rng& rng,
                   T scale_val) {
    wq.attach_lora(ps, prefix + "/wq", rank, rng, scale_val);
    wk.attach_lora(ps, prefix + "/wk", rank, rng, scale_val);
    wv.attach_lora(ps, prefix + "/wv", rank, rng, scale_val);
    wo.attach_lora(ps, prefix + "/wo", rank, rng, scale_val);
    w1.attach_lora(ps, prefix + "/w1", rank, rng, scale_val);
    w2.attach_lora(ps, prefix + "/w2", rank, rng, scale_val);
  }

  TensorT<T> forward(const TensorT<T>& x, bool causal) const {
    TensorT<T> h = layer_norm(x, *ln1_g, *ln1_b);
    TensorT<T> a = mha(wq.forward(h), wk.forward(h), wv.forward(h), heads, causal);
    TensorT<T> x2 = add(x, wo.forward(a));
    TensorT<T> h2 = layer_norm(x2, *ln2_g, *ln2_b);
    return add(x2, w2.forward(gelu(w1.forward(h2))));
  }
};

// Pre-norm cross-attention block: queries attend over a memory sequence.
template <typename T>
struct CrossBlockT {
  TensorT<T>*lnq_g = nullptr, *lnq_b = nullptr, *lnm_g = nullptr, *lnm_b = nullptr;
  TensorT<T>*ln2_g = nullptr, *ln2_b = nullptr;
  LinearT<T> wq, wk, wv, wo, w1, w2;
  int heads = 1;

  CrossBlockT() = default;
  CrossBlockT(ParamStoreT<T>& ps, const std::string& prefix, int d, int heads_,
              int mlp_mult, Rng& rng)
      : heads(heads_) {
    lnq_g = make_param_full<T>(ps, prefix + "/lnq/g", {d}, T(1));
    lnq_b = make_param<T>(ps, prefix + "/lnq/b", {d});
    lnm_g = make_param_full<T>(ps, prefix + "/lnm/g", {d}, T(1));
    lnm_b = make_param<T>(ps, prefix + "/lnm/b", {d});
    wq = LinearT<T>(ps, prefix + "/wq", d, d, rng);
    wk = LinearT<T>(ps, prefix + "/wk", d, d, rng);
    wv = LinearT<T>(ps, prefix + "/wv", d, d, rng);
    wo = LinearT<T>(ps, prefix + "/wo", d, d, rng);
    ln2_g = make_param_full<T>(ps, prefix + "/ln2/g", {d}, T(1));
    ln2_b = make_param<T>(ps, prefix + "/ln2/b", {d});
    w1 = LinearT<T>(ps, prefix + "/w1", d, d * mlp_mult, rng);
    w2 = LinearT<T>(ps, prefix + "/w2", d * mlp_mult, d, rng);
  }

  TensorT<T> forward(const TensorT<T>& q, const TensorT<T>& mem) const {
    TensorT<T> hq = layer_norm(q, *lnq_g, *lnq_b);
    TensorT<T> hm = layer_norm(mem, *lnm_g, *lnm_b);
    TensorT<T> a = mha(wq.forward(hq), wk.forward(hm), wv.forward(hm), heads, false);
    TensorT<T> q2 = add(q, wo.forward(a));
    TensorT<T> h2 = layer_norm(q2, *ln2_g, *ln2_b);
    return add(q2, w2.forward(gelu(w1.forward(h2))));
  }
};

template <typename T>
struct Conv2dT {
  TensorT<T>* w = nullptr;  // (OC, IC, K, K)
  TensorT<T>* b = nullptr;  // (OC)
  int stride = 1;
  Pad pad = Pad::Same;

  Conv2dT() = default;
  Conv2dT(ParamStoreT<T>& ps, const std::string& prefix, int ic, int oc, int k,
          int stride_, Pad pad_, Rng& rng, bool zero_init = false)
      : stride(stride_), pad(pad_) {
    w = zero_init ? make_param<T>(ps, prefix + "/w", {oc, ic, k, k})
                  : make_param_normal<T>(ps, prefix + "/w", {oc, ic, k, k}, rng,
                                         1.0 / std::sqrt(static_cast<double>(ic) * k * k));
    b = make_param<T>(ps, prefix + "/b", {oc});
  }

  TensorT<T> forward(const TensorT<T>& x) const { return conv2d(x, *w, *b, stride, pad); }
};

template <typename T>
struct Conv1dT {
  TensorT<T>* w = nullptr;  // (OC, IC, K)
  TensorT<T>* b = nullptr;
  int stride = 1;
  Pad pad = Pad::Same;

  Conv1dT() = default;
  Conv1dT(ParamStoreT<T>& ps, const std::string& prefix, int ic, int oc, int k,
          int stride_, Pad pad_, Rng& rng)
      : stride(stride_), pad(pad_) {
    w = make_param_normal<T>(ps, prefix + "/w", {oc, ic, k}, rng,
                             1.0 / std::sqrt(static_cast<double>(ic) * k));
    b = make_param<T>(ps, prefix + "/b", {oc});
  }

  TensorT<T> forward(const TensorT<T>& x) const { return conv1d(x, *w, *b, stride, pad); }
};

// x (N,C,H,W) plus a per-channel bias (C), e.g. time-step conditioning.
template <typename T>
TensorT<T> channel_bias_add(const TensorT<T>& x, const TensorT<T>& b) {
  if (x.rank() != 4) op_error("channel_bias_add", "expected rank-4, got " + shape_str(x.shape));
  int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  TensorT<T> t = reshape(permute(x, {0, 2, 3, 1}), {n * h * w, c});
  t = add_bias(t, b);
  return permute(reshape(t, {n, h, w, c}), {0, 3, 1, 2});
}

template <typename T>
TensorT<T> channel_bias_add1d(const TensorT<T>& x, const TensorT<T>& b) {
  if (x.rank() != 3) op_error("channel_bias_add1d", "expected rank-3, got " + shape_str(x.shape));
  int n = x.shape[0], c = x.shape[1], l = x.shape[2];
  TensorT<T> t = reshape(permute(x, {0, 2, 1}), {n * l, c});
  t = add_bias(t, b);
  return permute(reshape(t, {n, l, c}), {0, 2, 1});
}

// Prepends a batch axis and repeats x n times; backward sums over the copies.
template <typename T>
TensorT<T> broadcast_batch(const TensorT<T>& x, int n) {
  Shape s = x.shape;
  s.insert(s.begin(), 1);
  TensorT<T> r = reshape(x, std::move(s));
  if (n == 1) return r;
  std::vector<TensorT<T>> copies(static_cast<size_t>(n), r);
  return concat(copies, 0);
}

// Two 3x3 convolutions with a residual path; channel count preserved.
template <typename T>
struct ResBlock2dT {
  Conv2dT<T> c1, c2;

  ResBlock2dT() = default;
  ResBlock2dT(ParamStoreT<T>& ps, const std::string& prefix, int ch, Rng& rng) {
    c1 = Conv2dT<T>(ps, prefix + "/c1", ch, ch, 3, 1, Pad::Same, rng);
    c2 = Conv2dT<T>(ps, prefix + "/c2", ch, ch, 3, 1, Pad::Same, rng);
  }

  TensorT<T> forward(const TensorT<T>& x) const {
    return add(x, c2.forward(silu(c1.forward(silu(x)))));
  }
};

template <typename T>
struct ResBlock1dT {
  Conv1dT<T> c1, c2;

  ResBlock1dT() = default;
  ResBlock1dT(ParamStoreT<T>& ps, const std::string& prefix, int ch, Rng& rng) {
    c1 = Conv1dT<T>(ps, prefix + "/c1", ch, ch, 3, 1, Pad::Same, rng);
    c2 = Conv1dT<T>(ps, prefix + "/c2", ch, ch, 3, 1, Pad::Same, rng);
  }

  TensorT<T> forward(const TensorT<T>& x) const {
    return add(x, c2.forward(silu(c1.forward(silu(x)))));
  }
};

// Cross-attention from spatial tokens onto a conditioning matrix (M, d_cond).
// to_out starts at zero so an untrained layer is a residual no-op.
template <typename T>
struct SpatialXAttnT {
  TensorT<T>*ln_g = nullptr, *ln_b = nullptr;
  LinearT<T> to_q, to_k, to_v, to_out;

  SpatialXAttnT() = default;
  SpatialXAttnT(ParamStoreT<T>& ps, const std::string& prefix, int ch, int d_cond,
                Rng& rng) {
    ln_g = make_param_full<T>(ps, prefix + "/ln/g", {ch}, T(1));
    ln_b = make_param<T>(ps, prefix + "/ln/b", {ch});
    to_q = LinearT<T>(ps, prefix + "/q", ch, ch, rng);
    to_k = LinearT<T>(ps, prefix + "/k", d_cond, ch, rng);
    to_v = LinearT<T>(ps, prefix + "/v", d_cond, ch, rng);
    to_out = LinearT<T>(ps, prefix + "/out", ch, ch, rng, /*zero_init=*/true);
  }

  TensorT<T> forward(const TensorT<T>& x, const TensorT<T>& cond) const {
    int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    TensorT<T> tokens = reshape(permute(x, {0, 2, 3, 1}), {n, h * w, c});
    TensorT<T> q = to_q.forward(layer_norm(tokens, *ln_g, *ln_b));
    TensorT<T> k = broadcast_batch(to_k.forward(cond), n);
    TensorT<T> v = broadcast_batch(to_v.forward(cond), n);
    TensorT<T> a = to_out.forward(sdpa(q, k, v, false));
    TensorT<T> delta = permute(reshape(a, {n, h, w, c}), {0, 3, 1, 2});
    return add(x, delta);
  }
};

template <typename T>
struct SpatialXAttn1dT {
  TensorT<T>*ln_g = nullptr, *ln_b = nullptr;
  LinearT<T> to_q, to_k, to_v, to_out;

  SpatialXAttn1dT() = default;
  SpatialXAttn1dT(ParamStoreT<T>& ps, const std::string& prefix, int ch, int d_cond,
                  Rng& rng) {
    ln_g = make_param_full<T>(ps, prefix + "/ln/g", {ch}, T(1));
    ln_b = make_param<T>(ps, prefix + "/ln/b", {ch});
    to_q = LinearT<T>(ps, prefix + "/q", ch, ch, rng);
    to_k = LinearT<T>(ps, prefix + "/k", d_cond, ch, rng);
    to_v = LinearT<T>(ps, prefix + "/v", d_cond, ch, rng);
    to_out = LinearT<T>(ps, prefix + "/out", ch, ch, rng, /*zero_init=*/true);
  }

  TensorT<T> forward(const TensorT<T>& x, const TensorT<T>& cond) const {
    int n = x.shape[0], c = x.shape[1], l = x.shape[2];
    TensorT<T> tokens = permute(x, {0, 2, 1});  // (N, L, C)
    TensorT<T> q = to_q.forward(layer_norm(tokens, *ln_g, *ln_b));
    TensorT<T> k = broadcast_batch(to_k.forward(cond), n);
    TensorT<T> v = broadcast_batch(to_v.forward(cond), n);
    TensorT<T> a = to_out.forward(sdpa(q, k, v, false));
    return add(x, permute(a, {0, 2, 1}));
  }
};

// Temporal 1x1xk convolution across the frame axis of (F, C, H, W), applied
// independently per spatial location, with a residual path.
template <typename T>
struct TemporalMixT {
  Conv1dT<T> conv;

  TemporalMixT() = default;
  TemporalMixT(ParamStoreT<T>& ps, const std::string& prefix, int ch, Rng& rng) {
    conv = Conv1dT<T>(ps, prefix + "/conv", ch, ch, 3, 1, Pad::Same, rng);
  }

  TensorT<T> forward(const TensorT<T>& x) const {
    int f = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    TensorT<T> p = reshape(permute(x, {2, 3, 1, 0}), {h * w, c, f});
    p = conv.forward(p);
    p = permute(reshape(p, {h, w, c, f}), {3, 2, 0, 1});
    return add(x, p);
  }
};

}  // namespace am::nn
