#include "anymodal/encoders.hpp"

#include <cmath>

#include "anymodal/world.hpp"

namespace am::enc {

using namespace nn;

EncoderFamily::EncoderFamily(ParamStore& ps, EncoderConfig cfg_, Rng& rng)
    : cfg(std::move(cfg_)) {
  if (cfg.vis_ch.size() != 4 || cfg.aud_ch.size() != 4)
    op_error("encoder", "towers need 4 stage widths");
  if (cfg.text_vocab <= 0) op_error("encoder", "text vocabulary size not set");

  int ic = 3;
  for (int s = 0; s < 4; ++s) {
    std::string sp = "enc/vis/s" + std::to_string(s);
    int oc = cfg.vis_ch[static_cast<size_t>(s)];
    VisStage st;
    st.conv = Conv2dT<float>(ps, sp + "/conv", ic, oc, 3, 1, Pad::Same, rng);
    st.down = Conv2dT<float>(ps, sp + "/down", oc, oc, 3, 2, Pad::Same, rng);
    vis.push_back(std::move(st));
    ic = oc;
  }
  vis_head = LinearT<float>(ps, "enc/vis/head", cfg.vis_ch[3], cfg.d_joint, rng);

  ic = 1;
  for (int s = 0; s < 4; ++s) {
    std::string sp = "enc/aud/s" + std::to_string(s);
    int oc = cfg.aud_ch[static_cast<size_t>(s)];
    AudStage st;
    st.conv = Conv1dT<float>(ps, sp + "/conv", ic, oc, 3, 1, Pad::Same, rng);
    st.down = Conv1dT<float>(ps, sp + "/down", oc, oc, 3, 2, Pad::Same, rng);
    aud.push_back(std::move(st));
    ic = oc;
  }
  aud_head = LinearT<float>(ps, "enc/aud/head", cfg.aud_ch[3] * 16, cfg.d_joint, rng);

  txt_tok = make_param_normal(ps, "enc/txt/tok", {cfg.text_vocab, cfg.text_emb}, rng, 0.05);
  txt_head = LinearT<float>(ps, "enc/txt/head", cfg.text_emb, cfg.d_joint, rng);
}

namespace {

// Shared visual tower body: x (n,3,16,16) -> per-frame rows (n, d_joint)
// before normalization; optionally collects the stage taps.
Tensor vis_tower(const EncoderFamily& f, const Tensor& x, std::vector<Tensor>* taps) {
  Tensor h = x;
  for (int s = 0; s < 4; ++s) {
    const EncoderFamily::VisStage& st = f.vis[static_cast<size_t>(s)];
    h = silu(st.conv.forward(h));
    if (taps) taps->push_back(h);
    h = silu(st.down.forward(h));
  }
  int n = h.shape[0];
  return f.vis_head.forward(reshape(h, {n, f.cfg.vis_ch[3]}));  // (n,c,1,1) flattened
}

Tensor squeeze_batch(const Tensor& t) {
  nn::Shape s(t.shape.begin() + 1, t.shape.end());
  return reshape(t, std::move(s));
}

}  // namespace

Tensor EncoderFamily::encode_image(const Tensor& img, Pyramid* pyramid) const {
  if (img.shape != nn::Shape{3, 16, 16})
    op_error("encode_image", "expected (3,16,16), got " + shape_str(img.shape));
  std::vector<Tensor> taps;
  Tensor rows = vis_tower(*this, reshape(img, {1, 3, 16, 16}), pyramid ? &taps : nullptr);
  if (pyramid) {
    pyramid->clear();
    for (const Tensor& t : taps) pyramid->push_back(squeeze_batch(t));
  }
  return l2_normalize(reshape(rows, {cfg.d_joint}));
}

Tensor EncoderFamily::encode_video(const Tensor& vid, Pyramid* pyramid) const {
  if (vid.shape != nn::Shape{8, 3, 16, 16})
    op_error("encode_video", "expected (8,3,16,16), got " + shape_str(vid.shape));
  std::vector<Tensor> taps;
  Tensor rows = vis_tower(*this, vid, pyramid ? &taps : nullptr);  // frames as batch
  if (pyramid) {
    pyramid->clear();
    for (const Tensor& t : taps) pyramid->push_back(mean_axis(t, 0));  // temporal mean
  }
  return l2_normalize(mean_axis(rows, 0));
}

Tensor EncoderFamily::encode_audio(const Tensor& wav) const {
  if (wav.shape != nn::Shape{world::kAudioLen})
    op_error("encode_audio", "expected (" + std::to_string(world::kAudioLen) + "), got " +
                                 shape_str(wav.shape));
  Tensor h = reshape(wav, {1, 1, wav.shape[0]});
  for (int s = 0; s < 4; ++s) {
    const AudStage& st = aud[static_cast<size_t>(s)];
    h = silu(st.conv.forward(h));
    h = silu(st.down.forward(h));
  }
  Tensor rows = aud_head.forward(reshape(h, {1, cfg.aud_ch[3] * 16}));
  return l2_normalize(reshape(rows, {cfg.d_joint}));
}

Tensor EncoderFamily::encode_text(const std::vector<int>& token_ids) const {
  if (token_ids.empty()) op_error("encode_text", "empty token list");
  Tensor pooled = mean_axis(gather_rows(*txt_tok, token_ids), 0);
  Tensor row = txt_head.forward(reshape(pooled, {1, cfg.text_emb}));
  return l2_normalize(reshape(row, {cfg.d_joint}));
}

Tensor EncoderFamily::encode(Modality m, const Tensor& x) const {
  switch (m) {
    case Modality::image: return encode_image(x);
    case Modality::video: return encode_video(x);
    case Modality::audio: return encode_audio(x);
    default: op_error("encode", "text samples encode via token ids");
  }
}

double x2a_score(const EncoderFamily& f, const Tensor& pred, Modality m_pred,
                 const Tensor& gt, Modality m_gt) {
  NoGrad ng;
  Tensor a = f.encode(m_pred, pred);
  Tensor b = f.encode(m_gt, gt);
  double c = cosine_exact(a.ptr(), b.ptr(), a.size());
  return 100.0 * std::max(0.0, c);
}

Tensor info_nce(const Tensor& img_emb, const Tensor& txt_emb, const Tensor& aud_emb,
                const Tensor& vid_emb, float temperature) {
  if (img_emb.rank() != 2) op_error("info_nce", "embeddings must be (batch, d)");
  int b = img_emb.shape[0];
  if (b < 2) op_error("info_nce", "batch size " + std::to_string(b) + " below 2");
  if (temperature <= 0.0f) op_error("info_nce", "temperature must be positive");
  std::vector<int> diag(static_cast<size_t>(b));
  for (int i = 0; i < b; ++i) diag[static_cast<size_t>(i)] = i;

  float inv_t = 1.0f / temperature;
  std::vector<Tensor> terms;
  for (const Tensor* other : {&txt_emb, &aud_emb, &vid_emb}) {
    if (other->shape != img_emb.shape)
      op_error("info_nce", "embedding blocks disagree: " + shape_str(img_emb.shape) +
                               " vs " + shape_str(other->shape));
    Tensor logits = scale(matmul(img_emb, permute(*other, {1, 0})), inv_t);
    terms.push_back(cross_entropy(logits, diag));
    terms.push_back(cross_entropy(permute(logits, {1, 0}), diag));
  }
  Tensor total = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return scale(total, 1.0f / static_cast<float>(terms.size()));
}

}  // namespace am::enc
