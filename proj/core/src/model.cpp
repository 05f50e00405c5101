#include "anymodal/model.hpp"

#include "anymodal/world.hpp"

namespace am::model {

using namespace nn;

namespace {

enc::EncoderFamily make_encoders(ParamStore& ps, const ModelConfig& cfg, int vocab_total) {
  enc::EncoderConfig ec;
  ec.vis_ch = cfg.enc_ch;
  ec.aud_ch = cfg.enc_ch;
  ec.text_vocab = vocab_total;
  Rng rng(seed_for(cfg.seed, "enc"));
  return enc::EncoderFamily(ps, ec, rng);
}

lm::TransformerLM make_llm(ParamStore& ps, const lm::Vocabulary& v, const ModelConfig& cfg) {
  Rng rng(seed_for(cfg.seed, "lm"));
  return lm::TransformerLM(ps, v, cfg.lm, rng);
}

lm::InputProjections make_proj_in(ParamStore& ps, const ModelConfig& cfg) {
  Rng rng(seed_for(cfg.seed, "proj_in"));
  return lm::InputProjections(ps, 64, cfg.lm.d_model, rng);
}

lm::OutputProjections make_proj_out(ParamStore& ps, const lm::Vocabulary& v,
                                    const ModelConfig& cfg) {
  Rng rng(seed_for(cfg.seed, "proj_out"));
  return lm::OutputProjections(ps, v, cfg.lm.d_model, cfg.lm.heads, cfg.d_cond, rng);
}

diff::ToyTextEncoder make_tenc(ParamStore& ps, const std::string& label, int vocab_total,
                               int n_tokens, const ModelConfig& cfg) {
  Rng rng(seed_for(cfg.seed, "tenc/" + label));
  return diff::ToyTextEncoder(ps, "tenc/" + label, vocab_total, 32, n_tokens, cfg.d_cond, rng);
}

diff::UNet2d make_unet2d(ParamStore& ps, const std::string& label, int in_ch,
                         const std::vector<int>& ch, bool temporal, const ModelConfig& cfg) {
  Rng rng(seed_for(cfg.seed, "dec/" + label));
  return diff::UNet2d(ps, "dec/" + label + "/unet", in_ch, ch, cfg.d_cond, temporal, rng);
}

diff::UNet1d make_unet1d(ParamStore& ps, const ModelConfig& cfg) {
  Rng rng(seed_for(cfg.seed, "dec/aud"));
  return diff::UNet1d(ps, "dec/aud/unet", 1, cfg.aud_unet_ch, cfg.d_cond, rng);
}

veh::HighwayExtractor make_highway(ParamStore& ps, const ModelConfig& cfg) {
  Rng rng(seed_for(cfg.seed, "veh/hw"));
  return veh::HighwayExtractor(ps, "veh/hw", cfg.enc_ch, cfg.veh_ch, rng);
}

veh::VisualController make_ctrl(ParamStore& ps, const std::string& label,
                                const std::vector<int>& signal_ch, const ModelConfig& cfg) {
  Rng rng(seed_for(cfg.seed, "veh/" + label));
  return veh::VisualController(ps, "veh/" + label, cfg.veh_ch, signal_ch, rng);
}

}  // namespace

AnyToAnyModel::AnyToAnyModel(const ModelConfig& cfg_)
    : cfg(cfg_),
      vocab(lm::Vocabulary::standard()),
      encoders(make_encoders(params, cfg, vocab.total)),
      llm(make_llm(params, vocab, cfg)),
      proj_in(make_proj_in(params, cfg)),
      proj_out(make_proj_out(params, vocab, cfg)),
      tenc_image(make_tenc(params, "img", vocab.total, vocab.n_img, cfg)),
      tenc_video(make_tenc(params, "vid", vocab.total, vocab.n_vid, cfg)),
      tenc_audio(make_tenc(params, "aud", vocab.total, vocab.n_aud, cfg)),
      schedule(diff::Schedule::linear(cfg.diffusion_steps)),
      unet_image(make_unet2d(params, "img", 3, cfg.img_unet_ch, false, cfg)),
      unet_video(make_unet2d(params, "vid", 3, cfg.vid_unet_ch, true, cfg)),
      unet_audio(make_unet1d(params, cfg)),
      highway(make_highway(params, cfg)),
      ctrl_image(make_ctrl(params, "img", cfg.img_unet_ch, cfg)),
      ctrl_video(make_ctrl(params, "vid", cfg.vid_unet_ch, cfg)) {
  Rng rng(seed_for(cfg.seed, "lora"));
  llm.attach_lora(params, cfg.lora_rank, rng, 1.0f);
}

const diff::ToyTextEncoder& AnyToAnyModel::tenc_for(Modality m) const {
  switch (m) {
    case Modality::image: return tenc_image;
    case Modality::video: return tenc_video;
    case Modality::audio: return tenc_audio;
    default: op_error("model", "no caption encoder for modality " + std::string(modality_name(m)));
  }
}

const veh::VisualController& AnyToAnyModel::ctrl_for(Modality m) const {
  switch (m) {
    case Modality::image: return ctrl_image;
    case Modality::video: return ctrl_video;
    default: op_error("model", "no controller for modality " + std::string(modality_name(m)));
  }
}

Tensor AnyToAnyModel::joint_embed(Modality m, int concept_idx) const {
  auto key = std::make_pair(static_cast<int>(m), concept_idx);
  if (encoders.frozen) {
    auto it = embed_cache_.find(key);
    if (it != embed_cache_.end()) return it->second;
  }
  NoGrad ng;
  world::Concept c = world::Concept::from_index(concept_idx);
  Tensor e;
  switch (m) {
    case Modality::image: e = encoders.encode_image(world::render_image(c)); break;
    case Modality::video: e = encoders.encode_video(world::render_video(c)); break;
    case Modality::audio: e = encoders.encode_audio(world::render_audio(c)); break;
    default: op_error("model", "text has no sample embedding");
  }
  if (encoders.frozen) embed_cache_[key] = e;
  return e;
}

lm::EmbedFn AnyToAnyModel::embed_fn() const {
  return [this](Modality m, int concept_idx) { return joint_embed(m, concept_idx); };
}

}  // namespace am::model
