#pragma once

// Visual embedding highway: collapses the visual encoder's stage pyramid into
// one H x W x C map, runs it through a 4-stage controller whose zero-initialized
// emit convolutions produce per-stage control signals, and gates their
// injection into the visual U-Nets by the conditioning rate.

#include <string>
#include <vector>

#include "anymodal/diffusion.hpp"
#include "anymodal/encoders.hpp"
#include "anymodal/layers.hpp"

namespace am::veh {

using nn::ParamStore;
using nn::Tensor;

// Per-stage 1x1 projections to a common channel count; stages are resampled
// to the base resolution and summed. Orthogonal-row init, trained alongside
// the controllers.
struct HighwayExtractor {
  int out_ch = 0, size = 16;
  std::vector<int> stage_ch;
  std::vector<nn::Conv2dT<float>> proj;

  HighwayExtractor() = default;
  HighwayExtractor(ParamStore& ps, const std::string& prefix, std::vector<int> stage_ch,
                   int out_ch, Rng& rng);

  Tensor forward(const enc::Pyramid& pyramid) const;  // -> (out_ch, size, size)
};

// 4 stages at resolutions 16/8/4/2: two residual blocks, then a
// zero-initialized emit convolution producing the stage's control signal at
// the paired U-Net stage's channel count. Freshly built controllers emit
// exact zeros everywhere.
struct VisualController {
  int in_ch = 0;
  std::vector<int> widths;  // internal = emitted channel counts

  nn::Conv2dT<float> stem;
  struct Stage {
    nn::ResBlock2dT<float> r1, r2;
    nn::Conv2dT<float> emit;
    nn::Conv2dT<float> down;  // unused at the last stage
  };
  std::vector<Stage> stages;

  VisualController() = default;
  VisualController(ParamStore& ps, const std::string& prefix, int in_ch,
                   std::vector<int> signal_ch, Rng& rng);

  std::vector<Tensor> forward(const Tensor& e) const;  // e (in_ch,16,16) -> 4 signals
};

// Rate-gated single-step prediction. The highway embedding conditions the
// step only when the gate opens; otherwise (and whenever e is null) the plain
// uncontrolled branch runs.
Tensor gated_predict_noise(const diff::UNet2d& unet, const VisualController& ctrl,
                           const Tensor& z, int t, const Tensor& cond, const Tensor* e,
                           int total_steps, double rate);
// Audio decoders take no highway input; a non-null e is rejected.
Tensor gated_predict_noise(const diff::UNet1d& unet, const Tensor& z, int t,
                           const Tensor& cond, const Tensor* e);

// Full ancestral sample with the controller's signals gated per step.
Tensor sample_with_highway(const diff::UNet2d& unet, const diff::Schedule& s,
                           nn::Shape zshape, const Tensor& cond, uint64_t seed,
                           const VisualController& ctrl, const Tensor& e, double rate);

}  // namespace am::veh
