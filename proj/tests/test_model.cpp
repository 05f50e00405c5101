#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <set>

#include "anymodal/model.hpp"
#include "anymodal/world.hpp"
#include "doctest.h"

using namespace am;
using nn::Tensor;

namespace {

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.ptr(), b.ptr(), sizeof(float) * static_cast<size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("assembly is deterministic per seed and covers every component") {
  model::ModelConfig cfg;
  cfg.seed = 5;
  auto m1 = model::AnyToAnyModel::build(cfg);
  auto m2 = model::AnyToAnyModel::build(cfg);

  auto p1 = m1->params.all();
  auto p2 = m2->params.all();
  REQUIRE(p1.size() == p2.size());
  for (size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i]->name == p2[i]->name);
    CHECK(same_bits(p1[i]->value, p2[i]->value));
  }

  cfg.seed = 6;
  auto m3 = model::AnyToAnyModel::build(cfg);
  int diffs = 0;
  auto p3 = m3->params.all();
  for (size_t i = 0; i < p1.size(); ++i) diffs += !same_bits(p1[i]->value, p3[i]->value);
  CHECK(diffs > 0);

  std::vector<std::string> prefixes = {"enc/",      "lm/",      "lora/",   "proj_in/",
                                       "proj_out/", "tenc/",    "dec/img/", "dec/vid/",
                                       "dec/aud/",  "veh/hw/",  "veh/img/", "veh/vid/"};
  for (const auto& pre : prefixes) {
    int hits = 0;
    for (auto* p : p1) hits += p->name.rfind(pre, 0) == 0;
    CHECK_MESSAGE(hits > 0, "no parameters under ", pre);
  }
}

TEST_CASE("decoders, controllers and highway agree on widths") {
  model::ModelConfig cfg;
  auto m = model::AnyToAnyModel::build(cfg);

  CHECK(m->unet_image.ch == cfg.img_unet_ch);
  CHECK(m->unet_video.ch == cfg.vid_unet_ch);
  CHECK(m->unet_video.temporal);
  CHECK_FALSE(m->unet_image.temporal);
  CHECK(m->unet_audio.ch == cfg.aud_unet_ch);
  CHECK(m->ctrl_image.widths == cfg.img_unet_ch);
  CHECK(m->ctrl_video.widths == cfg.vid_unet_ch);
  CHECK(m->ctrl_image.in_ch == cfg.veh_ch);
  CHECK(m->highway.out_ch == cfg.veh_ch);
  CHECK(m->highway.stage_ch == cfg.enc_ch);
  CHECK(m->schedule.steps == 50);

  // controller output plugs straight into its paired denoiser
  std::vector<nn::Shape> want = m->unet_image.control_shapes();
  Tensor e = Tensor::zeros({cfg.veh_ch, 16, 16});
  std::vector<Tensor> sig = m->ctrl_image.forward(e);
  REQUIRE(sig.size() == want.size());
  for (size_t s = 0; s < sig.size(); ++s) CHECK(sig[s].shape == want[s]);

  CHECK(m->tenc_image.n_tokens == m->vocab.n_img);
  CHECK(m->tenc_video.n_tokens == m->vocab.n_vid);
  CHECK(m->tenc_audio.n_tokens == m->vocab.n_aud);
  CHECK(&m->tenc_for(Modality::video) == &m->tenc_video);
  CHECK(&m->ctrl_for(Modality::image) == &m->ctrl_image);
  CHECK_THROWS(m->tenc_for(Modality::text));
  CHECK_THROWS(m->ctrl_for(Modality::audio));
}

TEST_CASE("vocabulary covers captions and instructions in 256 slots") {
  auto m = model::AnyToAnyModel::build(model::ModelConfig{});
  CHECK(static_cast<int>(m->vocab.words.size()) <= m->vocab.text_slots);
  CHECK_NOTHROW(m->vocab.word_id("please"));
  CHECK_NOTHROW(m->vocab.word_id("semantics"));
  CHECK_NOTHROW(m->vocab.word_id("circle"));
  CHECK_NOTHROW(m->vocab.encode(world::caption_words(world::Concept::from_index(0), 0)));
}

TEST_CASE("joint embeddings match the encoders and cache only once frozen") {
  auto m = model::AnyToAnyModel::build(model::ModelConfig{});
  world::Concept c = world::Concept::from_index(321);

  Tensor direct = [&] {
    nn::NoGrad ng;
    return m->encoders.encode_image(world::render_image(c));
  }();
  Tensor via = m->joint_embed(Modality::image, 321);
  CHECK(same_bits(direct, via));

  // thawed: fresh tensor per call
  Tensor once = m->joint_embed(Modality::video, 321);
  Tensor twice = m->joint_embed(Modality::video, 321);
  CHECK(once.ptr() != twice.ptr());
  CHECK(same_bits(once, twice));

  // frozen: the cached buffer comes back
  m->encoders.frozen = true;
  Tensor ca = m->joint_embed(Modality::video, 321);
  Tensor cb = m->joint_embed(Modality::video, 321);
  CHECK(ca.ptr() == cb.ptr());
  CHECK(same_bits(ca, once));

  CHECK_THROWS(m->joint_embed(Modality::text, 0));
}

TEST_CASE("assembled conversations run through the language model") {
  auto m = model::AnyToAnyModel::build(model::ModelConfig{});
  data::Conversation conv = data::build_x2x(data::X2XType::vid2img, 40, 1, m->vocab);
  nn::NoGrad ng;
  lm::AssembledSequence seq =
      lm::assemble_sequence(conv, m->vocab, m->llm, m->proj_in, m->embed_fn());
  REQUIRE(seq.embeds.rank() == 2);
  CHECK(seq.embeds.shape[1] == m->cfg.lm.d_model);
  CHECK(seq.embeds.shape[0] == static_cast<int>(seq.tags.size()));

  lm::LMOut out = m->llm.forward(seq.embeds);
  CHECK(out.hidden.shape == seq.embeds.shape);
  CHECK(out.logits.shape == nn::Shape{seq.embeds.shape[0], m->vocab.total});

  // generation run of the image target appears in the assistant turn
  int gen_positions = 0;
  for (const auto& tag : seq.tags)
    gen_positions += !tag.is_chunk && tag.token_id >= m->vocab.img_first &&
                     tag.token_id < m->vocab.img_first + m->vocab.n_img;
  CHECK(gen_positions == m->vocab.n_img);

  // interleaved stream variant
  data::InterleavedSequence inter = data::build_interleaved(data::sample_clip(2, 3), 3, 0, m->vocab);
  lm::AssembledSequence stream =
      lm::assemble_stream(inter.items, m->vocab, m->llm, m->proj_in, m->embed_fn());
  CHECK(stream.embeds.shape[1] == m->cfg.lm.d_model);
  int chunks = 0;
  for (const auto& tag : stream.tags) chunks += tag.is_chunk;
  CHECK(chunks == 9);  // three samples per chunk, three chunks
}
