#include "anymodal/diffusion.hpp"

#include <cmath>

namespace am::diff {

using namespace nn;

Schedule Schedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 2) op_error("schedule", "need at least 2 steps, got " + std::to_string(steps));
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start < beta_end))
    op_error("schedule", "variances must satisfy 0 < start < end < 1");
  Schedule s;
  s.steps = steps;
  double acc = 1.0;
  for (int t = 0; t < steps; ++t) {
    double b = beta_start + (beta_end - beta_start) * t / (steps - 1);
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    acc *= 1.0 - b;
    s.alpha_bar.push_back(acc);
  }
  for (int t = 1; t < steps; ++t) {
    if (!(s.beta[t] > s.beta[t - 1]))
      op_error("schedule", "variances not strictly increasing at step " + std::to_string(t));
    if (!(s.alpha_bar[t] < s.alpha_bar[t - 1]))
      op_error("schedule",
               "cumulative products not strictly decreasing at step " + std::to_string(t));
  }
  return s;
}

Tensor add_noise(const Tensor& x0, int t, const Tensor& noise, const Schedule& s) {
  if (t < 0 || t >= s.steps)
    op_error("add_noise", "step " + std::to_string(t) + " outside [0, " +
                              std::to_string(s.steps) + ")");
  if (x0.shape != noise.shape)
    op_error("add_noise", "sample " + shape_str(x0.shape) + " vs noise " +
                              shape_str(noise.shape));
  double ab = s.alpha_bar[static_cast<size_t>(t)];
  return add(scale(x0, static_cast<float>(std::sqrt(ab))),
             scale(noise, static_cast<float>(std::sqrt(1.0 - ab))));
}

bool step_conditioned(int t, int steps, double rate) {
  if (rate < 0.0 || rate > 1.0)
    op_error("step_conditioned", "conditioning rate " + std::to_string(rate) +
                                     " outside [0, 1]");
  return static_cast<double>(t) < static_cast<double>(steps) * rate;
}

UNet2d::UNet2d(ParamStore& ps, const std::string& prefix, int in_ch_,
               std::vector<int> stage_ch, int d_cond_, bool temporal_, Rng& rng)
    : in_ch(in_ch_), d_cond(d_cond_), temporal(temporal_), ch(std::move(stage_ch)) {
  if (ch.size() != 4) op_error("unet", "expected 4 stage widths, got " +
                                           std::to_string(ch.size()));
  stem = Conv2dT<float>(ps, prefix + "/stem", in_ch, ch[0], 3, 1, Pad::Same, rng);
  for (int s = 0; s < 4; ++s) {
    std::string sp = prefix + "/enc" + std::to_string(s);
    EncStage st;
    st.time = LinearT<float>(ps, sp + "/time", time_dim, ch[static_cast<size_t>(s)], rng);
    st.res = ResBlock2dT<float>(ps, sp + "/res", ch[static_cast<size_t>(s)], rng);
    st.attn = SpatialXAttnT<float>(ps, sp + "/attn", ch[static_cast<size_t>(s)], d_cond, rng);
    if (temporal) st.tmix = TemporalMixT<float>(ps, sp + "/tmix", ch[static_cast<size_t>(s)], rng);
    int oc = s < 3 ? ch[static_cast<size_t>(s) + 1] : ch[3];
    st.down = Conv2dT<float>(ps, sp + "/down", ch[static_cast<size_t>(s)], oc, 3, 2,
                             Pad::Same, rng);
    enc.push_back(std::move(st));
  }
  mid = ResBlock2dT<float>(ps, prefix + "/mid", ch[3], rng);
  for (int m = 3; m >= 0; --m) {
    std::string sp = prefix + "/dec" + std::to_string(m);
    int cin = (m == 3 ? ch[3] : ch[static_cast<size_t>(m) + 1]) + ch[static_cast<size_t>(m)];
    DecStage st;
    st.fuse = Conv2dT<float>(ps, sp + "/fuse", cin, ch[static_cast<size_t>(m)], 3, 1,
                             Pad::Same, rng);
    st.time = LinearT<float>(ps, sp + "/time", time_dim, ch[static_cast<size_t>(m)], rng);
    st.res = ResBlock2dT<float>(ps, sp + "/res", ch[static_cast<size_t>(m)], rng);
    st.attn = SpatialXAttnT<float>(ps, sp + "/attn", ch[static_cast<size_t>(m)], d_cond, rng);
    if (temporal) st.tmix = TemporalMixT<float>(ps, sp + "/tmix", ch[static_cast<size_t>(m)], rng);
    dec.push_back(std::move(st));
  }
  head = Conv2dT<float>(ps, prefix + "/head", ch[0], in_ch, 3, 1, Pad::Same, rng);
}

std::vector<Shape> UNet2d::control_shapes() const {
  std::vector<Shape> out;
  int r = base;
  for (int s = 0; s < 4; ++s, r /= 2) out.push_back({ch[static_cast<size_t>(s)], r, r});
  return out;
}

Tensor UNet2d::forward(const Tensor& z, int t, const Tensor& cond,
                       const std::vector<Tensor>* control) const {
  if (z.rank() != 4 || z.shape[1] != in_ch || z.shape[2] != base || z.shape[3] != base)
    op_error("unet", "expected (n, " + std::to_string(in_ch) + ", " + std::to_string(base) +
                         ", " + std::to_string(base) + "), got " + shape_str(z.shape));
  if (t < 0) op_error("unet", "negative step " + std::to_string(t));
  if (cond.rank() != 2 || cond.shape[1] != d_cond)
    op_error("unet", "conditioning must be (m, " + std::to_string(d_cond) + "), got " +
                         shape_str(cond.shape));
  std::vector<Shape> want = control_shapes();
  if (control && control->size() != want.size())
    op_error("unet", "expected " + std::to_string(want.size()) + " control signals, got " +
                         std::to_string(control->size()));

  int n = z.shape[0];
  Tensor te = reshape(sinusoidal_embedding<float>(t, time_dim), {1, time_dim});
  Tensor x = stem.forward(z);
  std::vector<Tensor> skips;
  for (int s = 0; s < 4; ++s) {
    const EncStage& st = enc[static_cast<size_t>(s)];
    int c = ch[static_cast<size_t>(s)];
    x = channel_bias_add(x, reshape(st.time.forward(te), {c}));
    x = st.res.forward(x);
    Tensor sig = control ? (*control)[static_cast<size_t>(s)]
                         : Tensor::zeros(want[static_cast<size_t>(s)]);
    if (sig.shape != want[static_cast<size_t>(s)])
      op_error("unet", "control signal " + std::to_string(s) + " is " +
                           shape_str(sig.shape) + ", expected " +
                           shape_str(want[static_cast<size_t>(s)]));
    x = add(x, broadcast_batch(sig, n));
    x = st.attn.forward(x, cond);
    if (temporal) x = st.tmix.forward(x);
    skips.push_back(x);
    x = st.down.forward(x);
  }
  x = mid.forward(x);
  for (int m = 3; m >= 0; --m) {
    const DecStage& st = dec[static_cast<size_t>(3 - m)];
    int r = base >> m;
    int c = ch[static_cast<size_t>(m)];
    x = resample_nearest2d(x, r, r);
    std::vector<Tensor> cat{x, skips[static_cast<size_t>(m)]};
    x = concat(cat, 1);
    x = st.fuse.forward(x);
    x = channel_bias_add(x, reshape(st.time.forward(te), {c}));
    x = st.res.forward(x);
    x = st.attn.forward(x, cond);
    if (temporal) x = st.tmix.forward(x);
  }
  return head.forward(x);
}

UNet1d::UNet1d(ParamStore& ps, const std::string& prefix, int in_ch_,
               std::vector<int> stage_ch, int d_cond_, Rng& rng)
    : in_ch(in_ch_), d_cond(d_cond_), ch(std::move(stage_ch)) {
  if (ch.size() != 4) op_error("unet", "expected 4 stage widths, got " +
                                           std::to_string(ch.size()));
  stem = Conv1dT<float>(ps, prefix + "/stem", in_ch, ch[0], 3, 1, Pad::Same, rng);
  for (int s = 0; s < 4; ++s) {
    std::string sp = prefix + "/enc" + std::to_string(s);
    EncStage st;
    st.time = LinearT<float>(ps, sp + "/time", time_dim, ch[static_cast<size_t>(s)], rng);
    st.res = ResBlock1dT<float>(ps, sp + "/res", ch[static_cast<size_t>(s)], rng);
    st.attn = SpatialXAttn1dT<float>(ps, sp + "/attn", ch[static_cast<size_t>(s)], d_cond, rng);
    int oc = s < 3 ? ch[static_cast<size_t>(s) + 1] : ch[3];
    st.down = Conv1dT<float>(ps, sp + "/down", ch[static_cast<size_t>(s)], oc, 3, 2,
                             Pad::Same, rng);
    enc.push_back(std::move(st));
  }
  mid = ResBlock1dT<float>(ps, prefix + "/mid", ch[3], rng);
  for (int m = 3; m >= 0; --m) {
    std::string sp = prefix + "/dec" + std::to_string(m);
    int cin = (m == 3 ? ch[3] : ch[static_cast<size_t>(m) + 1]) + ch[static_cast<size_t>(m)];
    DecStage st;
    st.fuse = Conv1dT<float>(ps, sp + "/fuse", cin, ch[static_cast<size_t>(m)], 3, 1,
                             Pad::Same, rng);
    st.time = LinearT<float>(ps, sp + "/time", time_dim, ch[static_cast<size_t>(m)], rng);
    st.res = ResBlock1dT<float>(ps, sp + "/res", ch[static_cast<size_t>(m)], rng);
    st.attn = SpatialXAttn1dT<float>(ps, sp + "/attn", ch[static_cast<size_t>(m)], d_cond, rng);
    dec.push_back(std::move(st));
  }
  head = Conv1dT<float>(ps, prefix + "/head", ch[0], in_ch, 3, 1, Pad::Same, rng);
}

Tensor UNet1d::forward(const Tensor& z, int t, const Tensor& cond) const {
  if (z.rank() != 3 || z.shape[1] != in_ch || z.shape[2] != base)
    op_error("unet", "expected (n, " + std::to_string(in_ch) + ", " + std::to_string(base) +
                         "), got " + shape_str(z.shape));
  if (t < 0) op_error("unet", "negative step " + std::to_string(t));
  if (cond.rank() != 2 || cond.shape[1] != d_cond)
    op_error("unet", "conditioning must be (m, " + std::to_string(d_cond) + "), got " +
                         shape_str(cond.shape));

  Tensor te = reshape(sinusoidal_embedding<float>(t, time_dim), {1, time_dim});
  Tensor x = stem.forward(z);
  std::vector<Tensor> skips;
  for (int s = 0; s < 4; ++s) {
    const EncStage& st = enc[static_cast<size_t>(s)];
    int c = ch[static_cast<size_t>(s)];
    x = channel_bias_add1d(x, reshape(st.time.forward(te), {c}));
    x = st.res.forward(x);
    x = st.attn.forward(x, cond);
    skips.push_back(x);
    x = st.down.forward(x);
  }
  x = mid.forward(x);
  for (int m = 3; m >= 0; --m) {
    const DecStage& st = dec[static_cast<size_t>(3 - m)];
    int len = base >> m;
    int c = ch[static_cast<size_t>(m)];
    x = resample_nearest1d(x, len);
    std::vector<Tensor> cat{x, skips[static_cast<size_t>(m)]};
    x = concat(cat, 1);
    x = st.fuse.forward(x);
    x = channel_bias_add1d(x, reshape(st.time.forward(te), {c}));
    x = st.res.forward(x);
    x = st.attn.forward(x, cond);
  }
  return head.forward(x);
}

ToyTextEncoder::ToyTextEncoder(ParamStore& ps, const std::string& prefix, int vocab_size,
                               int emb_, int n_tokens_, int d_cond_, Rng& rng)
    : emb(emb_), n_tokens(n_tokens_), d_cond(d_cond_) {
  tok = make_param_normal(ps, prefix + "/tok", {vocab_size, emb_}, rng, 0.05);
  l1 = LinearT<float>(ps, prefix + "/l1", emb_, 64, rng);
  l2 = LinearT<float>(ps, prefix + "/l2", 64, n_tokens_ * d_cond_, rng);
}

Tensor ToyTextEncoder::forward(const std::vector<int>& caption_ids) const {
  if (caption_ids.empty()) op_error("text_encoder", "empty caption");
  Tensor pooled = mean_axis(gather_rows(*tok, caption_ids), 0);
  Tensor h = l2.forward(gelu(l1.forward(reshape(pooled, {1, emb}))));
  return reshape(h, {n_tokens, d_cond});
}

Tensor decoder_loss(const UNet2d& unet, const Schedule& s, const Tensor& x0, int t,
                    const Tensor& noise, const Tensor& cond,
                    const std::vector<Tensor>* control) {
  return mse(unet.forward(add_noise(x0, t, noise, s), t, cond, control), noise);
}

Tensor decoder_loss(const UNet1d& unet, const Schedule& s, const Tensor& x0, int t,
                    const Tensor& noise, const Tensor& cond) {
  return mse(unet.forward(add_noise(x0, t, noise, s), t, cond), noise);
}

namespace {

Tensor gaussian(Shape shape, Rng& rng) {
  Tensor z = Tensor::zeros(std::move(shape));
  rng.fill_normal(z.ptr(), z.size(), 1.0);
  return z;
}

// One reverse step shared by both samplers: posterior mean plus, above t = 0,
// posterior noise.
Tensor reverse_step(const Tensor& z, const Tensor& eps, int t, const Schedule& s,
                    Rng& rng) {
  double b = s.beta[static_cast<size_t>(t)];
  double ab = s.alpha_bar[static_cast<size_t>(t)];
  double a = s.alpha[static_cast<size_t>(t)];
  float c_eps = static_cast<float>(b / std::sqrt(1.0 - ab));
  float c_mean = static_cast<float>(1.0 / std::sqrt(a));
  Tensor out = scale(sub(z, scale(eps, c_eps)), c_mean);
  if (t > 0) {
    double ab_prev = s.alpha_bar[static_cast<size_t>(t) - 1];
    double beta_tilde = b * (1.0 - ab_prev) / (1.0 - ab);
    out = add(out, scale(gaussian(out.shape, rng), static_cast<float>(std::sqrt(beta_tilde))));
  }
  return out;
}

}  // namespace

Tensor ddpm_sample(const UNet2d& unet, const Schedule& s, Shape zshape, const Tensor& cond,
                   uint64_t seed, const std::vector<Tensor>* control, double rate) {
  if (rate < 0.0 || rate > 1.0)
    op_error("ddpm_sample", "conditioning rate " + std::to_string(rate) + " outside [0, 1]");
  NoGrad ng;
  Rng rng(seed);
  Tensor z = gaussian(std::move(zshape), rng);
  for (int t = s.steps - 1; t >= 0; --t) {
    const std::vector<Tensor>* ctl =
        (control && step_conditioned(t, s.steps, rate)) ? control : nullptr;
    Tensor eps = unet.forward(z, t, cond, ctl);
    z = reverse_step(z, eps, t, s, rng);
  }
  return z;
}

Tensor ddpm_sample(const UNet1d& unet, const Schedule& s, Shape zshape, const Tensor& cond,
                   uint64_t seed) {
  NoGrad ng;
  Rng rng(seed);
  Tensor z = gaussian(std::move(zshape), rng);
  for (int t = s.steps - 1; t >= 0; --t) {
    Tensor eps = unet.forward(z, t, cond);
    z = reverse_step(z, eps, t, s, rng);
  }
  return z;
}

}  // namespace am::diff
