#include "anymodal/veh.hpp"

#include <cmath>

namespace am::veh {

using namespace nn;

namespace {

// Orthonormalizes the smaller side of a rows x cols matrix in place
// (modified Gram-Schmidt over normal draws).
void semi_orthogonal(float* w, int rows, int cols, Rng& rng) {
  bool by_rows = rows <= cols;
  int vecs = by_rows ? rows : cols;
  int dim = by_rows ? cols : rows;
  std::vector<std::vector<double>> basis(static_cast<size_t>(vecs),
                                         std::vector<double>(static_cast<size_t>(dim)));
  for (auto& v : basis) {
    for (auto& x : v) x = rng.normal();
    for (int k = 0; k < 8; ++k) {  // retry direction until independent
      for (const auto& u : basis) {
        if (&u == &v) break;
        double dot = 0;
        for (int i = 0; i < dim; ++i) dot += u[static_cast<size_t>(i)] * v[static_cast<size_t>(i)];
        for (int i = 0; i < dim; ++i) v[static_cast<size_t>(i)] -= dot * u[static_cast<size_t>(i)];
      }
      double n2 = 0;
      for (double x : v) n2 += x * x;
      if (n2 > 1e-8) {
        double inv = 1.0 / std::sqrt(n2);
        for (auto& x : v) x *= inv;
        break;
      }
      for (auto& x : v) x = rng.normal();
    }
  }
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      w[static_cast<int64_t>(r) * cols + c] =
          static_cast<float>(by_rows ? basis[static_cast<size_t>(r)][static_cast<size_t>(c)]
                                     : basis[static_cast<size_t>(c)][static_cast<size_t>(r)]);
}

}  // namespace

HighwayExtractor::HighwayExtractor(ParamStore& ps, const std::string& prefix,
                                   std::vector<int> stage_ch_, int out_ch_, Rng& rng)
    : out_ch(out_ch_), stage_ch(std::move(stage_ch_)) {
  if (stage_ch.size() != 4)
    op_error("highway", "expected 4 pyramid stages, got " + std::to_string(stage_ch.size()));
  for (int s = 0; s < 4; ++s) {
    nn::Conv2dT<float> p(ps, prefix + "/s" + std::to_string(s),
                         stage_ch[static_cast<size_t>(s)], out_ch, 1, 1, Pad::Same, rng,
                         /*zero_init=*/true);
    semi_orthogonal(p.w->ptr(), out_ch, stage_ch[static_cast<size_t>(s)], rng);
    proj.push_back(std::move(p));
  }
}

Tensor HighwayExtractor::forward(const enc::Pyramid& pyramid) const {
  if (pyramid.size() != 4)
    op_error("highway", "expected 4 pyramid stages, got " + std::to_string(pyramid.size()));
  Tensor sum;
  int r = size;
  for (int s = 0; s < 4; ++s, r /= 2) {
    const Tensor& f = pyramid[static_cast<size_t>(s)];
    nn::Shape want{stage_ch[static_cast<size_t>(s)], r, r};
    if (f.shape != want)
      op_error("highway", "stage " + std::to_string(s) + " is " + shape_str(f.shape) +
                              ", expected " + shape_str(want));
    Tensor up = resample_nearest2d(reshape(f, {1, want[0], r, r}), size, size);
    Tensor piece = proj[static_cast<size_t>(s)].forward(up);
    sum = s == 0 ? piece : add(sum, piece);
  }
  return reshape(sum, {out_ch, size, size});
}

VisualController::VisualController(ParamStoreT<float>& ps, const std::string& prefix,
                                   int in_ch_, std::vector<int> signal_ch, Rng& rng)
    : in_ch(in_ch_), widths(std::move(signal_ch)) {
  if (widths.size() != 4)
    op_error("controller", "expected 4 stage widths, got " + std::to_string(widths.size()));
  stem = Conv2dT<float>(ps, prefix + "/stem", in_ch, widths[0], 3, 1, Pad::Same, rng);
  for (int s = 0; s < 4; ++s) {
    std::string sp = prefix + "/s" + std::to_string(s);
    int c = widths[static_cast<size_t>(s)];
    Stage st;
    st.r1 = ResBlock2dT<float>(ps, sp + "/r1", c, rng);
    st.r2 = ResBlock2dT<float>(ps, sp + "/r2", c, rng);
    st.emit = Conv2dT<float>(ps, sp + "/emit", c, c, 3, 1, Pad::Same, rng,
                             /*zero_init=*/true);
    if (s < 3)
      st.down = Conv2dT<float>(ps, sp + "/down", c, widths[static_cast<size_t>(s) + 1], 3,
                               2, Pad::Same, rng);
    stages.push_back(std::move(st));
  }
}

std::vector<Tensor> VisualController::forward(const Tensor& e) const {
  if (e.shape != nn::Shape{in_ch, 16, 16})
    op_error("controller", "expected (" + std::to_string(in_ch) + ",16,16), got " +
                               shape_str(e.shape));
  Tensor x = stem.forward(reshape(e, {1, in_ch, 16, 16}));
  std::vector<Tensor> signals;
  int r = 16;
  for (int s = 0; s < 4; ++s, r /= 2) {
    const Stage& st = stages[static_cast<size_t>(s)];
    x = st.r2.forward(st.r1.forward(x));
    signals.push_back(reshape(st.emit.forward(x), {widths[static_cast<size_t>(s)], r, r}));
    if (s < 3) x = st.down.forward(x);
  }
  return signals;
}

Tensor gated_predict_noise(const diff::UNet2d& unet, const VisualController& ctrl,
                           const Tensor& z, int t, const Tensor& cond, const Tensor* e,
                           int total_steps, double rate) {
  if (e && diff::step_conditioned(t, total_steps, rate)) {
    std::vector<Tensor> signals = ctrl.forward(*e);
    return unet.forward(z, t, cond, &signals);
  }
  if (rate < 0.0 || rate > 1.0)
    op_error("gated_predict_noise",
             "conditioning rate " + std::to_string(rate) + " outside [0, 1]");
  return unet.forward(z, t, cond, nullptr);
}

Tensor gated_predict_noise(const diff::UNet1d& unet, const Tensor& z, int t,
                           const Tensor& cond, const Tensor* e) {
  if (e)
    op_error("gated_predict_noise", "audio decoder takes no visual highway input");
  return unet.forward(z, t, cond);
}

Tensor sample_with_highway(const diff::UNet2d& unet, const diff::Schedule& s,
                           nn::Shape zshape, const Tensor& cond, uint64_t seed,
                           const VisualController& ctrl, const Tensor& e, double rate) {
  NoGrad ng;
  std::vector<Tensor> signals = ctrl.forward(e);
  return diff::ddpm_sample(unet, s, std::move(zshape), cond, seed, &signals, rate);
}

}  // namespace am::veh
