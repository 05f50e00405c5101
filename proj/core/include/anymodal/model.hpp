#pragma once

// Whole-model assembly: joint encoders, the language model with its modality
// projections and LoRA adapters, per-modality diffusion decoders with their
// caption encoders, and the visual highway with its controllers. Components
// are built in one fixed order with per-component seeds split from the root
// seed, so a config pins every initial weight and the parameter registration
// order.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "anymodal/diffusion.hpp"
#include "anymodal/encoders.hpp"
#include "anymodal/llm.hpp"
#include "anymodal/veh.hpp"

namespace am::model {

using nn::ParamStore;
using nn::Tensor;

struct ModelConfig {
  uint64_t seed = 1;
  lm::LMConfig lm;
  int d_cond = 64;
  int lora_rank = 4;
  int diffusion_steps = 50;
  int veh_ch = 16;
  std::vector<int> enc_ch = {8, 16, 24, 32};
  std::vector<int> img_unet_ch = {16, 24, 32, 40};
  std::vector<int> vid_unet_ch = {12, 16, 24, 32};
  std::vector<int> aud_unet_ch = {8, 12, 16, 20};
};

struct AnyToAnyModel {
  ModelConfig cfg;
  lm::Vocabulary vocab;
  ParamStore params;

  enc::EncoderFamily encoders;
  lm::TransformerLM llm;
  lm::InputProjections proj_in;
  lm::OutputProjections proj_out;
  diff::ToyTextEncoder tenc_image, tenc_video, tenc_audio;
  diff::Schedule schedule;
  diff::UNet2d unet_image, unet_video;
  diff::UNet1d unet_audio;
  veh::HighwayExtractor highway;
  veh::VisualController ctrl_image, ctrl_video;

  explicit AnyToAnyModel(const ModelConfig& cfg);
  AnyToAnyModel(const AnyToAnyModel&) = delete;
  AnyToAnyModel& operator=(const AnyToAnyModel&) = delete;

  static std::unique_ptr<AnyToAnyModel> build(const ModelConfig& cfg) {
    return std::make_unique<AnyToAnyModel>(cfg);
  }

  const diff::ToyTextEncoder& tenc_for(Modality m) const;
  const veh::VisualController& ctrl_for(Modality m) const;  // image or video only

  // Joint embedding of a world sample, regenerated from the concept. Cached
  // once the encoders are frozen; gradients never flow through it.
  Tensor joint_embed(Modality m, int concept_idx) const;

  // Embedding callback for sequence assembly, backed by joint_embed.
  lm::EmbedFn embed_fn() const;

 private:
  mutable std::map<std::pair<int, int>, Tensor> embed_cache_;
};

}  // namespace am::model
