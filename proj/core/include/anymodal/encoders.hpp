#pragma once

// Joint-embedding encoder family: image/video/audio/text towers mapping into
// one unit-norm space, the visual layer pyramid consumed by the highway
// extractor, and the cross-modal alignment score.

#include <string>
#include <vector>

#include "anymodal/layers.hpp"
#include "anymodal/modality.hpp"

namespace am::enc {

using nn::ParamStore;
using nn::Tensor;

struct EncoderConfig {
  int d_joint = 64;
  std::vector<int> vis_ch = {8, 16, 24, 32};  // stage widths, taps at 16/8/4/2
  std::vector<int> aud_ch = {8, 16, 24, 32};  // stage lengths 256/128/64/32
  int text_emb = 32;
  int text_vocab = 0;  // set from the vocabulary at build
};

// Per-stage visual feature maps (ch_s, 16/2^s, 16/2^s); for video the
// temporal mean over frames.
using Pyramid = std::vector<Tensor>;

struct EncoderFamily {
  EncoderConfig cfg;
  struct VisStage {
    nn::Conv2dT<float> conv;  // stride-1, widens
    nn::Conv2dT<float> down;  // stride-2, keeps width
  };
  std::vector<VisStage> vis;
  nn::LinearT<float> vis_head;
  struct AudStage {
    nn::Conv1dT<float> conv;
    nn::Conv1dT<float> down;
  };
  std::vector<AudStage> aud;
  nn::LinearT<float> aud_head;
  Tensor* txt_tok = nullptr;  // (vocab, emb)
  nn::LinearT<float> txt_head;
  bool frozen = false;

  EncoderFamily() = default;
  EncoderFamily(ParamStore& ps, EncoderConfig cfg, Rng& rng);

  // All encode paths return a unit-norm (d_joint) vector.
  Tensor encode_image(const Tensor& img, Pyramid* pyramid = nullptr) const;  // (3,16,16)
  Tensor encode_video(const Tensor& vid, Pyramid* pyramid = nullptr) const;  // (8,3,16,16)
  Tensor encode_audio(const Tensor& wav) const;                              // (256)
  Tensor encode_text(const std::vector<int>& token_ids) const;
  Tensor encode(Modality m, const Tensor& x) const;  // text -> rejected (needs ids)
};

// 100 * max(0, cosine) between the two samples' joint embeddings; exact for
// identical samples of one modality.
double x2a_score(const EncoderFamily& f, const Tensor& pred, Modality m_pred,
                 const Tensor& gt, Modality m_gt);

// Symmetric InfoNCE over one batch against the image anchor: image-text,
// image-audio, image-video, both retrieval directions each. Embedding rows
// are (batch, d_joint), aligned by concept.
Tensor info_nce(const Tensor& img_emb, const Tensor& txt_emb, const Tensor& aud_emb,
                const Tensor& vid_emb, float temperature);

}  // namespace am::enc
