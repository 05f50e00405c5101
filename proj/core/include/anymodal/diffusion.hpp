#pragma once

// Denoising diffusion decoders: noise schedule, per-modality toy U-Nets with
// cross-attention conditioning, the frozen caption encoders used as alignment
// targets, the epsilon-MSE training loss and the ancestral sampler with its
// conditioning-rate gate.

#include <optional>
#include <string>
#include <vector>

#include "anymodal/layers.hpp"
#include "anymodal/modality.hpp"

namespace am::diff {

using nn::ParamStore;
using nn::Tensor;

struct Schedule {
  int steps = 0;
  std::vector<double> beta, alpha, alpha_bar;

  // Per-step variances interpolated linearly; beta_end defaults high enough
  // that alpha_bar at the last step is near-pure noise even at 50 steps.
  static Schedule linear(int steps = 50, double beta_start = 1e-4, double beta_end = 0.2);
};

// z(t) = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise
Tensor add_noise(const Tensor& x0, int t, const Tensor& noise, const Schedule& s);

// Strict-inequality gate: step t runs conditioned iff t < steps * rate.
bool step_conditioned(int t, int steps, double rate);

// 4-stage encoder/decoder U-Net on (N, C, H, W) with H = W = 16. Stage
// resolutions 16/8/4/2, bottleneck at 1. Each stage injects a sinusoidal
// time bias, runs a residual block, adds the per-stage control signal
// (literal zeros when absent, so the uncontrolled path is the same code
// path), and cross-attends on the conditioning matrix. With temporal mixing
// the batch axis is the frame axis and stages blend across it.
struct UNet2d {
  int in_ch = 0, base = 16, time_dim = 32, d_cond = 64;
  bool temporal = false;
  std::vector<int> ch;  // 4 stage widths

  nn::Conv2dT<float> stem;
  struct EncStage {
    nn::LinearT<float> time;
    nn::ResBlock2dT<float> res;
    nn::SpatialXAttnT<float> attn;
    nn::TemporalMixT<float> tmix;
    nn::Conv2dT<float> down;
  };
  std::vector<EncStage> enc;
  nn::ResBlock2dT<float> mid;
  struct DecStage {
    nn::Conv2dT<float> fuse;
    nn::LinearT<float> time;
    nn::ResBlock2dT<float> res;
    nn::SpatialXAttnT<float> attn;
    nn::TemporalMixT<float> tmix;
  };
  std::vector<DecStage> dec;  // dec[m] mirrors enc[m]
  nn::Conv2dT<float> head;

  UNet2d() = default;
  UNet2d(ParamStore& ps, const std::string& prefix, int in_ch, std::vector<int> stage_ch,
         int d_cond, bool temporal, Rng& rng);

  // (ch[s], r_s, r_s) per stage; what a control source must emit.
  std::vector<nn::Shape> control_shapes() const;

  Tensor forward(const Tensor& z, int t, const Tensor& cond,
                 const std::vector<Tensor>* control) const;
};

// 1D analog on (N, C, L) with L = 256; stage lengths 256/128/64/32,
// bottleneck 16. Never takes control signals.
struct UNet1d {
  int in_ch = 0, base = 256, time_dim = 32, d_cond = 64;
  std::vector<int> ch;

  nn::Conv1dT<float> stem;
  struct EncStage {
    nn::LinearT<float> time;
    nn::ResBlock1dT<float> res;
    nn::SpatialXAttn1dT<float> attn;
    nn::Conv1dT<float> down;
  };
  std::vector<EncStage> enc;
  nn::ResBlock1dT<float> mid;
  struct DecStage {
    nn::Conv1dT<float> fuse;
    nn::LinearT<float> time;
    nn::ResBlock1dT<float> res;
    nn::SpatialXAttn1dT<float> attn;
  };
  std::vector<DecStage> dec;
  nn::Conv1dT<float> head;

  UNet1d() = default;
  UNet1d(ParamStore& ps, const std::string& prefix, int in_ch, std::vector<int> stage_ch,
         int d_cond, Rng& rng);

  Tensor forward(const Tensor& z, int t, const Tensor& cond) const;
};

// Caption tokens -> (n_tokens, d_cond) conditioning matrix. Trained jointly
// with its decoder, then frozen; serves as the alignment target for the
// output projections.
struct ToyTextEncoder {
  Tensor* tok = nullptr;  // (vocab, emb)
  nn::LinearT<float> l1, l2;
  int emb = 0, n_tokens = 0, d_cond = 0;

  ToyTextEncoder() = default;
  ToyTextEncoder(ParamStore& ps, const std::string& prefix, int vocab_size, int emb,
                 int n_tokens, int d_cond, Rng& rng);

  Tensor forward(const std::vector<int>& caption_ids) const;
};

// Epsilon-prediction MSE at a given step with a given noise draw.
Tensor decoder_loss(const UNet2d& unet, const Schedule& s, const Tensor& x0, int t,
                    const Tensor& noise, const Tensor& cond,
                    const std::vector<Tensor>* control);
Tensor decoder_loss(const UNet1d& unet, const Schedule& s, const Tensor& x0, int t,
                    const Tensor& noise, const Tensor& cond);

// Ancestral sampling from pure noise down to t = 0. Control signals are
// passed to the U-Net only at steps the rate gate conditions; everything
// else (noise draws included) is independent of the gate, so rate 0 is
// bitwise identical to sampling without a control source.
Tensor ddpm_sample(const UNet2d& unet, const Schedule& s, nn::Shape zshape,
                   const Tensor& cond, uint64_t seed, const std::vector<Tensor>* control,
                   double rate);
Tensor ddpm_sample(const UNet1d& unet, const Schedule& s, nn::Shape zshape,
                   const Tensor& cond, uint64_t seed);

}  // namespace am::diff
