#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <sstream>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "anymodal/checkpoint.hpp"
#include "anymodal/train.hpp"
#include "anymodal/world.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace am;
namespace fs = std::filesystem;

namespace {

model::ModelConfig tiny_cfg(uint64_t seed) {
  model::ModelConfig c;
  c.seed = seed;
  c.lm = lm::LMConfig{64, 2, 2, 256, 2};
  c.d_cond = 16;
  c.veh_ch = 8;
  c.img_unet_ch = {8, 10, 12, 14};
  c.vid_unet_ch = {6, 8, 10, 12};
  c.aud_unet_ch = {6, 8, 10, 12};
  return c;
}

std::string tmp_dir(const std::string& tag) {
  std::string d = "/tmp/anymodal_train_" + tag + "_" + std::to_string(::getpid());
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::vector<int> pool_range(int lo, int hi) {
  std::vector<int> p;
  for (int i = lo; i < hi; ++i) p.push_back(i);
  return p;
}

// Differing parameter names between two checkpoints, optimizer state dropped.
std::vector<std::string> param_diff(const std::string& a, const std::string& b) {
  std::vector<std::string> out;
  for (const auto& n : ckpt::diff(a, b))
    if (n.rfind("opt/", 0) != 0) out.push_back(n);
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

double paired_minus_unpaired_gap(const model::AnyToAnyModel& m, const std::vector<int>& concepts) {
  nn::NoGrad ng;
  double paired = 0.0, unpaired = 0.0;
  int np = 0, nu = 0;
  std::vector<nn::Tensor> img, txt;
  for (int c : concepts) {
    world::Concept cc = world::Concept::from_index(c);
    img.push_back(m.encoders.encode_image(world::render_image(cc)));
    txt.push_back(m.encoders.encode_text(m.vocab.encode(world::caption_words(cc, 0))));
  }
  for (size_t i = 0; i < img.size(); ++i)
    for (size_t j = 0; j < txt.size(); ++j) {
      double d = 0.0;
      for (int64_t x = 0; x < img[i].size(); ++x)
        d += static_cast<double>(img[i].ptr()[x]) * txt[j].ptr()[x];
      if (i == j) {
        paired += d;
        np++;
      } else {
        unpaired += d;
        nu++;
      }
    }
  return paired / np - unpaired / nu;
}

}  // namespace

TEST_CASE("trainable masks select exactly the phase parameter sets") {
  auto m = model::AnyToAnyModel::build(tiny_cfg(5));

  auto names_for = [&](const std::string& phase) {
    auto pred = train::trainable_mask(phase);
    std::set<std::string> sel;
    for (const auto* p : m->params.all())
      if (pred(p->name)) sel.insert(p->name);
    return sel;
  };

  auto p1 = names_for("1");
  CHECK(!p1.empty());
  CHECK(p1.count("lm/tok_embed") == 1);
  for (const auto& n : p1) {
    bool ok = n.rfind("proj_in/", 0) == 0 || n.rfind("proj_out/", 0) == 0 || n == "lm/tok_embed";
    CHECK_MESSAGE(ok, n);
  }

  auto p2 = names_for("2");
  auto p3a = names_for("3a");
  CHECK(p2 == p3a);
  CHECK(p2.size() > p1.size());
  for (const auto& n : p1) CHECK(p2.count(n) == 1);
  bool has_lora = false;
  for (const auto& n : p2) has_lora |= n.rfind("lora/", 0) == 0;
  CHECK(has_lora);

  auto p3b = names_for("3b");
  CHECK(!p3b.empty());
  for (const auto& n : p3b) {
    bool ok = n.rfind("dec/img/unet", 0) == 0 || n.rfind("dec/vid/unet", 0) == 0 ||
              n.rfind("veh/", 0) == 0;
    CHECK_MESSAGE(ok, n);
  }
  bool has_hw = false, has_ctrl = false, has_aud = false;
  for (const auto& n : p3b) {
    has_hw |= n.rfind("veh/hw/", 0) == 0;
    has_ctrl |= n.rfind("veh/img/", 0) == 0;
    has_aud |= n.rfind("dec/aud/", 0) == 0;
  }
  CHECK(has_hw);
  CHECK(has_ctrl);
  CHECK(!has_aud);
  for (const auto& phase : {"1", "2", "3a"}) {
    auto pred = train::trainable_mask(phase);
    CHECK(!pred("enc/vis0/conv/w"));
    CHECK(!pred("lm/blk0/attn/q/w"));
    CHECK(!pred("dec/img/unet/stem/w"));
    CHECK(!pred("tenc/img/tok"));
  }
  CHECK(!train::trainable_mask("3b")("proj_out/image/head/w"));
  CHECK_THROWS_WITH_AS(train::trainable_mask("4"), doctest::Contains("unknown phase"),
                       std::invalid_argument);
  CHECK(train::mask_patterns("1").size() == 3);
  CHECK(train::mask_patterns("2").size() == 4);
}

TEST_CASE("default phase configs pin the toy recipe") {
  auto p1 = train::default_phase("1");
  CHECK(p1.lr == doctest::Approx(3e-4f));
  CHECK(p1.steps == 2000);
  CHECK(p1.batch == 8);
  CHECK(p1.warmup == 50);
  auto p2 = train::default_phase("2");
  CHECK(p2.lr == doctest::Approx(1e-4f));
  CHECK(p2.steps == 1000);
  auto p3a = train::default_phase("3a");
  CHECK(p3a.lr == doctest::Approx(1e-4f));
  CHECK(p3a.steps == 3000);
  auto p3b = train::default_phase("3b");
  CHECK(p3b.lr == doctest::Approx(1e-5f));
  CHECK(p3b.steps == 2000);
  CHECK_THROWS_AS(train::default_phase("0"), std::invalid_argument);
}

TEST_CASE("every phase smoke run changes only its masked parameters") {
  auto m = model::AnyToAnyModel::build(tiny_cfg(7));
  m->encoders.frozen = true;
  std::string root = tmp_dir("masks");

  auto p1_corpus = data::build_phase1_corpus(16, 21, m->vocab, pool_range(0, 40));
  std::vector<data::InterleavedSequence> streams;
  for (int i = 0; i < 6; ++i)
    streams.push_back(data::build_interleaved(data::sample_clip(100 + i, 3), 3, i, m->vocab));
  std::vector<data::Conversation> x2x;
  for (int i = 0; i < 6; ++i)
    x2x.push_back(data::build_x2x(data::all_x2x()[i], 10 + i, i, m->vocab));

  struct Run {
    std::string phase;
    train::RunReport rep;
  };
  std::vector<Run> runs;
  {
    auto cfg = train::default_phase("1");
    cfg.steps = 5;
    cfg.batch = 2;
    cfg.seed = 31;
    runs.push_back({"1", train::run_phase1(*m, p1_corpus, cfg, root + "/p1")});
  }
  {
    auto cfg = train::default_phase("2");
    cfg.steps = 5;
    cfg.batch = 2;
    cfg.seed = 32;
    runs.push_back({"2", train::run_phase2(*m, streams, cfg, root + "/p2")});
  }
  {
    auto cfg = train::default_phase("3a");
    cfg.steps = 5;
    cfg.batch = 2;
    cfg.seed = 33;
    runs.push_back({"3a", train::run_phase3a(*m, x2x, p1_corpus, cfg, root + "/p3a")});
  }
  {
    auto cfg = train::default_phase("3b");
    cfg.steps = 5;
    cfg.batch = 2;
    cfg.seed = 34;
    cfg.lr = 1e-4f;
    cfg.variant = "veh-imgvid";
    runs.push_back({"3b", train::run_phase3b(*m, x2x, cfg, root + "/p3b")});
  }
  for (const auto& r : runs) {
    auto changed = param_diff(r.rep.init_checkpoint, r.rep.final_checkpoint);
    CHECK(!changed.empty());
    auto pred = train::trainable_mask(r.phase);
    for (const auto& n : changed) CHECK_MESSAGE(pred(n), (r.phase + " touched " + n));
    CHECK(r.rep.steps_run == 5);
  }

  // Phase 1 must move all three projection groups and the embedding.
  auto p1_changed = param_diff(runs[0].rep.init_checkpoint, runs[0].rep.final_checkpoint);
  std::set<std::string> prefixes;
  for (const auto& n : p1_changed) prefixes.insert(n.substr(0, n.find('/')));
  CHECK(prefixes.count("proj_in") == 1);
  CHECK(prefixes.count("proj_out") == 1);
  CHECK(prefixes.count("lm") == 1);
}

TEST_CASE("phase run artifacts: config snapshot, loss csv, lineage manifest") {
  auto m = model::AnyToAnyModel::build(tiny_cfg(9));
  m->encoders.frozen = true;
  std::string root = tmp_dir("artifacts");
  std::vector<data::InterleavedSequence> streams;
  for (int i = 0; i < 4; ++i)
    streams.push_back(data::build_interleaved(data::sample_clip(300 + i, 3), 3, i, m->vocab));

  auto cfg = train::default_phase("2");
  cfg.steps = 4;
  cfg.batch = 2;
  cfg.seed = 77;
  cfg.log_every = 2;
  auto rep = train::run_phase2(*m, streams, cfg, root + "/run", "parent.amck");

  std::string snap = slurp(root + "/run/config.txt");
  CHECK(snap.find("train.phase=2") != std::string::npos);
  CHECK(snap.find("train.seed=77") != std::string::npos);

  std::string csv = slurp(root + "/run/loss.csv");
  CHECK(csv.rfind("step,component,value\n", 0) == 0);
  CHECK(csv.find("stream_ce") != std::string::npos);

  auto lineage = nlohmann::json::parse(slurp(root + "/run/lineage.json"));
  CHECK(lineage["phase"] == "phase-2");
  CHECK(lineage["parent"] == "parent.amck");
  CHECK(lineage["seed"] == 77);
  CHECK(lineage["steps"] == 4);

  REQUIRE(!rep.rows.empty());
  CHECK(rep.rows.front().step == 2);
  CHECK(rep.rows.back().step == 4);
  CHECK(rep.first.at("stream_ce") == doctest::Approx(rep.rows.front().value));
  CHECK(rep.last.at("stream_ce") == doctest::Approx(rep.rows.back().value));
  CHECK(fs::exists(rep.init_checkpoint));
  CHECK(fs::exists(rep.final_checkpoint));
  CHECK(ckpt::read_meta(rep.final_checkpoint).at("step") == "4");
}

TEST_CASE("resuming a phase reproduces the uninterrupted run bitwise") {
  std::string root = tmp_dir("resume");
  std::vector<data::InterleavedSequence> streams;
  {
    auto probe = model::AnyToAnyModel::build(tiny_cfg(11));
    for (int i = 0; i < 5; ++i)
      streams.push_back(data::build_interleaved(data::sample_clip(500 + i, 3), 3, i, probe->vocab));
  }
  auto cfg = train::default_phase("2");
  cfg.batch = 2;
  cfg.seed = 88;
  cfg.lr = 1e-3f;

  auto ma = model::AnyToAnyModel::build(tiny_cfg(11));
  ma->encoders.frozen = true;
  cfg.steps = 8;
  auto full = train::run_phase2(*ma, streams, cfg, root + "/full");

  auto mb = model::AnyToAnyModel::build(tiny_cfg(11));
  mb->encoders.frozen = true;
  cfg.steps = 4;
  auto half = train::run_phase2(*mb, streams, cfg, root + "/half");

  auto mc = model::AnyToAnyModel::build(tiny_cfg(11));
  mc->encoders.frozen = true;
  cfg.steps = 8;
  auto rest = train::run_phase2(*mc, streams, cfg, root + "/rest", "", half.final_checkpoint);
  CHECK(rest.steps_run == 4);

  auto d = ckpt::diff(full.final_checkpoint, rest.final_checkpoint);
  CHECK_MESSAGE(d.empty(), (d.empty() ? std::string() : d[0]));

  auto lineage = nlohmann::json::parse(slurp(root + "/rest/lineage.json"));
  CHECK(lineage["resumed_from"] == half.final_checkpoint);

  // Mismatched phase or overlong checkpoints are rejected.
  auto bad = train::default_phase("1");
  bad.steps = 8;
  CHECK_THROWS_WITH_AS(
      train::run_phase1(*mc, data::build_phase1_corpus(4, 1, mc->vocab, pool_range(0, 8)), bad,
                        root + "/bad", "", half.final_checkpoint),
      doctest::Contains("not a phase-1 state"), std::invalid_argument);
  cfg.steps = 4;
  CHECK_THROWS_WITH_AS(train::run_phase2(*mc, streams, cfg, root + "/bad2", "", full.final_checkpoint),
                       doctest::Contains("not before"), std::invalid_argument);
}

TEST_CASE("contrastive pretraining drops the loss and widens the paired-cosine gap") {
  auto m = model::AnyToAnyModel::build(tiny_cfg(13));
  std::string root = tmp_dir("encpre");
  auto held_out = std::vector<int>{901, 935, 1003, 1100, 1204, 77, 250, 660};

  double gap_before = paired_minus_unpaired_gap(*m, held_out);

  train::PretrainConfig cfg;
  cfg.steps = 30;
  cfg.batch = 6;
  cfg.lr = 3e-3f;
  cfg.seed = 41;
  cfg.log_every = 1;
  auto rep = train::pretrain_encoders(*m, pool_range(0, 256), cfg, root + "/enc");

  CHECK(m->encoders.frozen);
  CHECK(rep.last.at("info_nce") < rep.first.at("info_nce"));
  // ln(batch) at random init, within 20%.
  CHECK(rep.rows.front().value == doctest::Approx(std::log(6.0)).epsilon(0.2));
  double gap_after = paired_minus_unpaired_gap(*m, held_out);
  CHECK(gap_after > gap_before);

  auto changed = param_diff(rep.init_checkpoint, rep.final_checkpoint);
  CHECK(!changed.empty());
  for (const auto& n : changed) CHECK(n.rfind("enc/", 0) == 0);

  // Determinism: a sibling model trained with the same seed lands on the
  // same bytes.
  auto m2 = model::AnyToAnyModel::build(tiny_cfg(13));
  auto rep2 = train::pretrain_encoders(*m2, pool_range(0, 256), cfg, root + "/enc2");
  CHECK(ckpt::diff(rep.final_checkpoint, rep2.final_checkpoint).empty());

  cfg.batch = 1;
  CHECK_THROWS_WITH_AS(train::pretrain_encoders(*m2, pool_range(0, 8), cfg, root + "/enc3"),
                       doctest::Contains(">= 2"), std::invalid_argument);
  cfg.batch = 4;
  CHECK_THROWS_WITH_AS(train::pretrain_encoders(*m2, {}, cfg, root + "/enc4"),
                       doctest::Contains("empty concept pool"), std::invalid_argument);
}

TEST_CASE("retrieval scoring respects what each modality can express") {
  auto m = model::AnyToAnyModel::build(tiny_cfg(15));
  auto concepts = pool_range(0, 16);
  // Untrained encoders: scores are defined and bounded.
  double r = train::retrieval_top1(*m, concepts, Modality::image, Modality::text, 3);
  CHECK(r >= 0.0);
  CHECK(r <= 1.0);
  CHECK(train::retrieval_top1(*m, concepts, Modality::image, Modality::text, 3) ==
        doctest::Approx(r));
  CHECK_THROWS_WITH_AS(train::retrieval_top1(*m, {1}, Modality::image, Modality::text, 3),
                       doctest::Contains("at least 2"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(train::retrieval_top1(*m, concepts, Modality::image, Modality::image, 3),
                       doctest::Contains("differ"), std::invalid_argument);
}

TEST_CASE("decoder pretraining learns its modality and touches nothing else") {
  auto m = model::AnyToAnyModel::build(tiny_cfg(17));
  std::string root = tmp_dir("decpre");
  train::PretrainConfig cfg;
  cfg.steps = 40;
  cfg.batch = 4;
  cfg.lr = 1e-3f;
  cfg.seed = 43;
  auto rep = train::pretrain_decoder(*m, Modality::audio, pool_range(0, 64), cfg, root + "/aud");

  CHECK(rep.last.at("diff_mse_audio") < rep.first.at("diff_mse_audio"));
  auto changed = param_diff(rep.init_checkpoint, rep.final_checkpoint);
  CHECK(!changed.empty());
  bool tenc_moved = false;
  for (const auto& n : changed) {
    bool ok = n.rfind("dec/aud/", 0) == 0 || n.rfind("tenc/aud", 0) == 0;
    CHECK_MESSAGE(ok, n);
    tenc_moved |= n.rfind("tenc/aud", 0) == 0;
  }
  CHECK(tenc_moved);

  CHECK_THROWS_WITH_AS(train::pretrain_decoder(*m, Modality::text, pool_range(0, 4), cfg, root + "/t"),
                       doctest::Contains("no decoder"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(train::pretrain_decoder(*m, Modality::audio, {}, cfg, root + "/e"),
                       doctest::Contains("empty concept pool"), std::invalid_argument);
}

TEST_CASE("phase 1 aligns span embeddings and starts captioning near uniform") {
  auto m = model::AnyToAnyModel::build(tiny_cfg(19));
  m->encoders.frozen = true;
  std::string root = tmp_dir("p1");
  auto corpus = data::build_phase1_corpus(36, 61, m->vocab, pool_range(0, 48));

  auto cfg = train::default_phase("1");
  cfg.steps = 120;
  cfg.batch = 4;
  cfg.seed = 71;
  cfg.lr = 2e-3f;
  cfg.warmup = 10;
  cfg.log_every = 5;
  auto rep = train::run_phase1(*m, corpus, cfg, root + "/run");

  CHECK(rep.first.at("caption_ce") ==
        doctest::Approx(std::log(static_cast<double>(m->vocab.total))).epsilon(0.2));
  for (const char* comp : {"embed_mse_image", "embed_mse_video", "embed_mse_audio"}) {
    REQUIRE(rep.first.count(comp) == 1);
    CHECK_MESSAGE(rep.last.at(comp) < 0.5 * rep.first.at(comp), comp);
  }
  CHECK(rep.last.at("caption_ce") < rep.first.at("caption_ce"));
  CHECK_THROWS_WITH_AS(train::run_phase1(*m, {}, cfg, root + "/e"),
                       doctest::Contains("empty phase-1 corpus"), std::invalid_argument);
  auto wrong = train::default_phase("2");
  CHECK_THROWS_WITH_AS(train::run_phase1(*m, corpus, wrong, root + "/w"),
                       doctest::Contains("expected 1"), std::invalid_argument);
}

TEST_CASE("phase 2 lowers held-out interleaved cross entropy") {
  auto m = model::AnyToAnyModel::build(tiny_cfg(23));
  m->encoders.frozen = true;
  std::string root = tmp_dir("p2");
  std::vector<data::InterleavedSequence> tr, ho;
  for (int i = 0; i < 10; ++i)
    tr.push_back(data::build_interleaved(data::sample_clip(700 + i, 3), 3, i, m->vocab));
  for (int i = 0; i < 3; ++i)
    ho.push_back(data::build_interleaved(data::sample_clip(900 + i, 3), 3, i, m->vocab));

  double before = train::mean_text_ce(*m, ho);
  auto cfg = train::default_phase("2");
  cfg.steps = 60;
  cfg.batch = 4;
  cfg.seed = 73;
  cfg.lr = 2e-3f;
  auto rep = train::run_phase2(*m, tr, cfg, root + "/run");
  double after = train::mean_text_ce(*m, ho);

  CHECK(after < before);
  CHECK(rep.last.at("stream_ce") < rep.first.at("stream_ce"));
}

TEST_CASE("phase 3a teaches generation tokens and counts assistant-less data") {
  auto m = model::AnyToAnyModel::build(tiny_cfg(29));
  m->encoders.frozen = true;
  std::string root = tmp_dir("p3a");

  std::vector<data::Conversation> x2x, held;
  for (int i = 0; i < 4; ++i)
    for (auto t : data::all_x2x()) x2x.push_back(data::build_x2x(t, 20 + i, i, m->vocab));
  for (int i = 0; i < 2; ++i)
    for (auto t : data::all_x2x()) held.push_back(data::build_x2x(t, 200 + i, i, m->vocab));
  auto sft = data::build_phase1_corpus(8, 67, m->vocab, pool_range(0, 32));

  double acc_before = train::gen_token_accuracy(*m, held);
  auto cfg = train::default_phase("3a");
  cfg.steps = 150;
  cfg.batch = 4;
  cfg.seed = 79;
  cfg.lr = 2e-3f;
  auto rep = train::run_phase3a(*m, x2x, sft, cfg, root + "/run");
  double acc_after = train::gen_token_accuracy(*m, held);

  CHECK(acc_after > acc_before);
  CHECK(acc_after > 0.5);
  CHECK(rep.last.at("embed_mse") < rep.first.at("embed_mse"));
  CHECK(rep.last.at("sft_ce") < rep.first.at("sft_ce"));
  CHECK(rep.counters.count("skipped_no_assistant") == 0);

  // A user-only conversation is skipped and counted, not trained on.
  data::Conversation userless;
  userless.turns.push_back(x2x[0].turns[0]);
  userless.type = "broken";
  auto cfg2 = cfg;
  cfg2.steps = 4;
  cfg2.batch = 2;
  std::vector<data::Conversation> mixed{x2x[0], userless};
  auto rep2 = train::run_phase3a(*m, mixed, {}, cfg2, root + "/skip");
  CHECK(rep2.counters.at("skipped_no_assistant") > 0);
}

TEST_CASE("phase 3b respects its variant and counts control-less samples") {
  std::string root = tmp_dir("p3b");

  auto run_variant = [&](const std::string& variant, const std::vector<data::Conversation>& convs,
                         const std::string& tag) {
    auto m = model::AnyToAnyModel::build(tiny_cfg(31));
    m->encoders.frozen = true;
    auto cfg = train::default_phase("3b");
    cfg.steps = 5;
    cfg.batch = 2;
    cfg.seed = 83;
    cfg.lr = 1e-4f;
    cfg.variant = variant;
    return train::run_phase3b(*m, convs, cfg, root + "/" + tag);
  };

  std::vector<data::Conversation> probe;
  {
    auto m = model::AnyToAnyModel::build(tiny_cfg(31));
    for (int i = 0; i < 3; ++i) {
      probe.push_back(data::build_x2x(data::X2XType::vid2img, 40 + i, i, m->vocab));
      probe.push_back(data::build_x2x(data::X2XType::img2vid, 50 + i, i, m->vocab));
    }
    probe.push_back(data::build_x2x(data::X2XType::vid2aud, 60, 0, m->vocab));
  }

  auto rep_ta = run_variant("ta", probe, "ta");
  CHECK(rep_ta.counters.at("skipped_nonvisual_target") == 1);
  auto ta_changed = param_diff(rep_ta.init_checkpoint, rep_ta.final_checkpoint);
  CHECK(!ta_changed.empty());
  for (const auto& n : ta_changed) {
    CHECK(n.rfind("veh/", 0) != 0);
    bool unet = n.rfind("dec/img/unet", 0) == 0 || n.rfind("dec/vid/unet", 0) == 0;
    CHECK_MESSAGE(unet, n);
  }

  auto rep_img = run_variant("veh-img", probe, "img");
  auto img_changed = param_diff(rep_img.init_checkpoint, rep_img.final_checkpoint);
  bool img_ctrl = false, vid_ctrl = false, hw = false;
  for (const auto& n : img_changed) {
    img_ctrl |= n.rfind("veh/img/", 0) == 0;
    vid_ctrl |= n.rfind("veh/vid/", 0) == 0;
    hw |= n.rfind("veh/hw/", 0) == 0;
  }
  CHECK(img_ctrl);
  CHECK(hw);
  CHECK(!vid_ctrl);

  auto rep_both = run_variant("veh-imgvid", probe, "both");
  auto both_changed = param_diff(rep_both.init_checkpoint, rep_both.final_checkpoint);
  bool both_vid_ctrl = false;
  for (const auto& n : both_changed) both_vid_ctrl |= n.rfind("veh/vid/", 0) == 0;
  CHECK(both_vid_ctrl);

  // Audio-input video generation has no visual highway source: the sample
  // falls back to the text-conditioned loss and is counted.
  std::vector<data::Conversation> audio_only;
  {
    auto m = model::AnyToAnyModel::build(tiny_cfg(31));
    audio_only.push_back(data::build_x2x(data::X2XType::aud2vid, 70, 0, m->vocab));
    audio_only.push_back(data::build_x2x(data::X2XType::aud2vid, 71, 1, m->vocab));
  }
  auto rep_aud = run_variant("veh-imgvid", audio_only, "aud");
  CHECK(rep_aud.counters.at("textual_only") == 10);

  {
    auto m = model::AnyToAnyModel::build(tiny_cfg(31));
    auto cfg = train::default_phase("3b");
    cfg.variant = "veh-all";
    CHECK_THROWS_WITH_AS(train::run_phase3b(*m, probe, cfg, root + "/bad"),
                         doctest::Contains("unknown variant"), std::invalid_argument);
    std::vector<data::Conversation> nonvis{probe.back()};
    cfg.variant = "ta";
    CHECK_THROWS_WITH_AS(train::run_phase3b(*m, nonvis, cfg, root + "/nv"),
                         doctest::Contains("visual target"), std::invalid_argument);
  }
}
