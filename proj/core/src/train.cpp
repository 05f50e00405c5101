#include "anymodal/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>

#include "anymodal/checkpoint.hpp"
#include "anymodal/world.hpp"
#include "json.hpp"

namespace am::train {

using namespace nn;
namespace fs = std::filesystem;

namespace {

// Decoder-facing sample layouts: batched image, frame-batched video and a
// one-channel waveform row.
Tensor decoder_sample(Modality m, int concept_idx) {
  world::Concept c = world::Concept::from_index(concept_idx);
  switch (m) {
    case Modality::image: return reshape(world::render_image(c), Shape{1, 3, 16, 16});
    case Modality::video: return world::render_video(c);
    case Modality::audio: return reshape(world::render_audio(c), Shape{1, 1, 256});
    default: break;
  }
  op_error("train", "text has no rendered sample");
  return {};
}

std::vector<int> caption_ids(const lm::Vocabulary& v, int concept_idx, uint64_t tseed) {
  return v.encode(world::caption_words(world::Concept::from_index(concept_idx), tseed));
}

std::vector<int> draw_distinct(Rng& rng, const std::vector<int>& pool, int n) {
  if (n > static_cast<int>(pool.size()))
    op_error("train", "batch of " + std::to_string(n) + " distinct concepts from a pool of " +
                          std::to_string(pool.size()));
  std::set<int> seen;
  std::vector<int> out;
  while (static_cast<int>(out.size()) < n) {
    int c = pool[rng.uniform_int(0, static_cast<int>(pool.size()) - 1)];
    if (seen.insert(c).second) out.push_back(c);
  }
  return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  std::vector<Tensor> r;
  r.reserve(rows.size());
  for (const auto& t : rows) r.push_back(reshape(t, Shape{1, static_cast<int>(t.size())}));
  return concat(r, 0);
}

// Accumulates per-step component values, flushes windowed means to the CSV
// and keeps the earliest/latest flushed mean per component for reports.
class LossLog {
 public:
  LossLog(std::string path, int every, bool append)
      : path_(std::move(path)), every_(std::max(1, every)) {
    if (!append || !fs::exists(path_)) {
      std::ofstream f(path_, std::ios::trunc);
      f << "step,component,value\n";
    }
  }

  void add(int step, const std::string& comp, double v) {
    if (!std::isfinite(v))
      op_error("train", "non-finite " + comp + " at step " + std::to_string(step));
    auto& w = window_[comp];
    w.first += v;
    w.second += 1;
  }

  void maybe_flush(int step, bool force) {
    if (!force && step % every_ != 0) return;
    if (window_.empty()) return;
    std::ofstream f(path_, std::ios::app);
    for (const auto& [comp, acc] : window_) {
      double mean = acc.first / static_cast<double>(acc.second);
      f << step << ',' << comp << ',' << std::setprecision(10) << mean << '\n';
      rows_.push_back({step, comp, mean});
      if (!first_.count(comp)) first_[comp] = mean;
      last_[comp] = mean;
    }
    window_.clear();
  }

  const std::vector<LossRow>& rows() const { return rows_; }
  const std::map<std::string, double>& first() const { return first_; }
  const std::map<std::string, double>& last() const { return last_; }

 private:
  std::string path_;
  int every_;
  std::map<std::string, std::pair<double, int>> window_;
  std::vector<LossRow> rows_;
  std::map<std::string, double> first_, last_;
};

void write_kv(const std::string& path,
              const std::vector<std::pair<std::string, std::string>>& kv) {
  std::ofstream f(path, std::ios::trunc);
  for (const auto& [k, v] : kv) f << k << '=' << v << '\n';
}

void write_lineage(const std::string& dir, const std::string& phase, const std::string& parent,
                   uint64_t seed, int steps, const std::string& variant,
                   const std::string& resumed_from) {
  nlohmann::json j{{"phase", phase}, {"parent", parent}, {"seed", seed}, {"steps", steps}};
  if (!variant.empty()) j["variant"] = variant;
  if (!resumed_from.empty()) j["resumed_from"] = resumed_from;
  std::ofstream f(dir + "/lineage.json", std::ios::trunc);
  f << j.dump(2) << '\n';
}

std::map<std::string, std::string> run_meta(const std::string& phase, int step, uint64_t seed,
                                            const std::string& variant) {
  std::map<std::string, std::string> m{
      {"phase", phase}, {"step", std::to_string(step)}, {"seed", std::to_string(seed)}};
  if (!variant.empty()) m["variant"] = variant;
  return m;
}

// One parameter-masked optimization loop. The sample callback computes the
// loss components for one batch element (empty = skipped sample); all
// randomness comes from the per-step rng so resuming at any checkpointed
// step replays the identical remainder.
using SampleFn =
    std::function<std::vector<std::pair<std::string, Tensor>>(int step, int j, Rng& srng)>;

RunReport run_masked(model::AnyToAnyModel& m, const PhaseConfig& cfg, const std::string& run_dir,
                     const std::string& parent, const std::string& resume, const SampleFn& sample,
                     std::map<std::string, int>& counters) {
  if (cfg.steps <= 0) op_error("train", "steps must be positive");
  if (cfg.batch <= 0) op_error("train", "batch must be positive");
  if (!(cfg.lr > 0.0f) || !std::isfinite(cfg.lr)) op_error("train", "learning rate must be positive");
  auto mask = trainable_mask(cfg.phase);
  std::string variant = cfg.phase == "3b" ? cfg.variant : "";
  if (cfg.phase == "3b" && variant != "ta" && variant != "veh-img" && variant != "veh-imgvid")
    op_error("train", "unknown variant " + variant);

  fs::create_directories(run_dir);
  m.params.set_trainable(mask);
  Adam opt(m.params, {.lr = cfg.lr});

  RunReport rep;
  rep.run_dir = run_dir;
  rep.init_checkpoint = run_dir + "/ckpt_init.amck";
  int start = 0;
  std::string resumed;
  if (!resume.empty()) {
    auto res = ckpt::load(resume, m.params, ckpt::LoadMode::Exact);
    auto ph = res.meta.find("phase");
    if (ph == res.meta.end() || ph->second != cfg.phase)
      op_error("train", "checkpoint " + resume + " is not a phase-" + cfg.phase + " state");
    auto st = res.meta.find("step");
    if (st == res.meta.end()) op_error("train", "checkpoint " + resume + " lacks a step record");
    start = std::stoi(st->second);
    if (start >= cfg.steps)
      op_error("train", "checkpoint step " + st->second + " is not before the configured " +
                            std::to_string(cfg.steps));
    opt.restore(res.extra);
    resumed = resume;
  } else {
    ckpt::save(rep.init_checkpoint, m.params, run_meta(cfg.phase, 0, cfg.seed, variant));
  }
  write_kv(run_dir + "/config.txt",
           {{"train.phase", cfg.phase},
            {"train.lr", std::to_string(cfg.lr)},
            {"train.steps", std::to_string(cfg.steps)},
            {"train.batch", std::to_string(cfg.batch)},
            {"train.seed", std::to_string(cfg.seed)},
            {"train.warmup", std::to_string(cfg.warmup)},
            {"train.variant", cfg.phase == "3b" ? variant : std::string("-")}});
  write_lineage(run_dir, "phase-" + cfg.phase, parent, cfg.seed, cfg.steps, variant, resumed);

  LossLog log(run_dir + "/loss.csv", cfg.log_every, start > 0);

  for (int step = start + 1; step <= cfg.steps; ++step) {
    Rng srng(seed_for(cfg.seed, "phase" + cfg.phase + "/step/" + std::to_string(step)));
    Tape tape;
    std::map<std::string, std::vector<Tensor>> comps;
    for (int j = 0; j < cfg.batch; ++j) {
      auto ls = sample(step, j, srng);
      for (auto& [name, t] : ls) comps[name].push_back(t);
    }
    rep.steps_run++;
    if (comps.empty()) continue;
    Tensor total;
    for (const auto& [name, ts] : comps) {
      Tensor s = ts[0];
      for (size_t i = 1; i < ts.size(); ++i) s = add(s, ts[i]);
      Tensor mean = scale(s, 1.0f / static_cast<float>(ts.size()));
      log.add(step, name, static_cast<double>((*mean.data)[0]));
      total = total.defined() ? add(total, mean) : mean;
    }
    tape.backward(total);
    float ls = cfg.warmup > 0 ? std::min(1.0f, static_cast<float>(step) / static_cast<float>(cfg.warmup))
                              : 1.0f;
    opt.step(ls);
    m.params.zero_grads();
    log.maybe_flush(step, false);
    if (cfg.ckpt_every > 0 && step % cfg.ckpt_every == 0 && step < cfg.steps)
      ckpt::save(run_dir + "/ckpt_step_" + std::to_string(step) + ".amck", m.params,
                 run_meta(cfg.phase, step, cfg.seed, variant), opt.state());
  }
  log.maybe_flush(cfg.steps, true);
  rep.final_checkpoint = run_dir + "/ckpt_final.amck";
  ckpt::save(rep.final_checkpoint, m.params, run_meta(cfg.phase, cfg.steps, cfg.seed, variant),
             opt.state());
  rep.rows = log.rows();
  rep.first = log.first();
  rep.last = log.last();
  rep.counters = counters;
  return rep;
}

// Next-token targets over an assembled sequence: row i is trained iff the
// position i+1 tag passes the predicate; everything else is ignored.
std::vector<int> shifted_targets(const std::vector<lm::PosTag>& tags,
                                 const std::function<bool(const lm::PosTag&)>& want) {
  std::vector<int> t(tags.size(), -1);
  for (size_t i = 0; i + 1 < tags.size(); ++i) {
    const auto& nx = tags[i + 1];
    if (!nx.is_chunk && nx.token_id >= 0 && want(nx)) t[i] = nx.token_id;
  }
  return t;
}

bool has_text_targets(const std::vector<int>& t) {
  return std::any_of(t.begin(), t.end(), [](int x) { return x >= 0; });
}

const data::Turn* find_turn(const data::Conversation& conv, data::Turn::Role role) {
  for (const auto& t : conv.turns)
    if (t.role == role) return &t;
  return nullptr;
}

}  // namespace

std::vector<std::string> mask_patterns(const std::string& phase) {
  std::vector<std::string> base = {"proj_in/", "proj_out/", "lm/tok_embed"};
  if (phase == "1") return base;
  if (phase == "2" || phase == "3a") {
    base.push_back("lora/");
    return base;
  }
  if (phase == "3b") return {"dec/img/unet", "dec/vid/unet", "veh/"};
  op_error("train", "unknown phase " + phase);
  return {};
}

std::function<bool(const std::string&)> trainable_mask(const std::string& phase) {
  auto pats = mask_patterns(phase);
  return [pats](const std::string& name) {
    for (const auto& p : pats)
      if (name.rfind(p, 0) == 0) return true;
    return false;
  };
}

PhaseConfig default_phase(const std::string& phase) {
  PhaseConfig c;
  c.phase = phase;
  if (phase == "1") {
    c.lr = 3e-4f;
    c.steps = 2000;
    c.batch = 8;
    c.warmup = 50;
  } else if (phase == "2") {
    c.lr = 1e-4f;
    c.steps = 1000;
    c.batch = 4;
  } else if (phase == "3a") {
    c.lr = 1e-4f;
    c.steps = 3000;
    c.batch = 8;
  } else if (phase == "3b") {
    c.lr = 1e-5f;
    c.steps = 2000;
    c.batch = 4;
  } else {
    op_error("train", "unknown phase " + phase);
  }
  return c;
}

RunReport pretrain_encoders(model::AnyToAnyModel& m, const std::vector<int>& concept_pool,
                            const PretrainConfig& cfg, const std::string& run_dir) {
  if (concept_pool.empty()) op_error("pretrain_encoders", "empty concept pool");
  if (cfg.batch < 2) op_error("pretrain_encoders", "contrastive batch must be >= 2, got " +
                                                       std::to_string(cfg.batch));
  if (cfg.steps <= 0) op_error("pretrain_encoders", "steps must be positive");
  if (!(cfg.temperature > 0.0f)) op_error("pretrain_encoders", "temperature must be positive");

  fs::create_directories(run_dir);
  m.params.set_trainable([](const std::string& n) { return n.rfind("enc/", 0) == 0; });
  Adam opt(m.params, {.lr = cfg.lr});
  std::string init = run_dir + "/ckpt_init.amck";
  ckpt::save(init, m.params, run_meta("pretrain-encoders", 0, cfg.seed, ""));
  write_kv(run_dir + "/config.txt", {{"pretrain.stage", "encoders"},
                                     {"pretrain.lr", std::to_string(cfg.lr)},
                                     {"pretrain.steps", std::to_string(cfg.steps)},
                                     {"pretrain.batch", std::to_string(cfg.batch)},
                                     {"pretrain.seed", std::to_string(cfg.seed)},
                                     {"pretrain.temperature", std::to_string(cfg.temperature)}});
  write_lineage(run_dir, "pretrain-encoders", "", cfg.seed, cfg.steps, "", "");

  LossLog log(run_dir + "/loss.csv", cfg.log_every, false);
  for (int step = 1; step <= cfg.steps; ++step) {
    Rng srng(seed_for(cfg.seed, "enc-pre/step/" + std::to_string(step)));
    auto concepts = draw_distinct(srng, concept_pool, cfg.batch);
    Tape tape;
    std::vector<Tensor> img, txt, aud, vid;
    for (int c : concepts) {
      world::Concept cc = world::Concept::from_index(c);
      img.push_back(m.encoders.encode_image(world::render_image(cc)));
      vid.push_back(m.encoders.encode_video(world::render_video(cc)));
      aud.push_back(m.encoders.encode_audio(world::render_audio(cc)));
      txt.push_back(m.encoders.encode_text(caption_ids(m.vocab, c, srng.raw()())));
    }
    Tensor loss = enc::info_nce(stack_rows(img), stack_rows(txt), stack_rows(aud),
                                stack_rows(vid), cfg.temperature);
    log.add(step, "info_nce", static_cast<double>((*loss.data)[0]));
    tape.backward(loss);
    opt.step();
    m.params.zero_grads();
    log.maybe_flush(step, false);
  }
  log.maybe_flush(cfg.steps, true);

  m.encoders.frozen = true;
  RunReport rep;
  rep.run_dir = run_dir;
  rep.init_checkpoint = init;
  rep.final_checkpoint = run_dir + "/ckpt_final.amck";
  ckpt::save(rep.final_checkpoint, m.params,
             run_meta("pretrain-encoders", cfg.steps, cfg.seed, ""), opt.state());
  rep.rows = log.rows();
  rep.first = log.first();
  rep.last = log.last();
  rep.steps_run = cfg.steps;
  return rep;
}

double retrieval_top1(const model::AnyToAnyModel& m, const std::vector<int>& concepts,
                      Modality query, Modality key, uint64_t seed) {
  if (concepts.size() < 2) op_error("retrieval_top1", "need at least 2 concepts");
  if (query == key) op_error("retrieval_top1", "modalities must differ");
  NoGrad ng;
  Rng rng(seed_for(seed, "retrieval"));
  auto embed = [&](Modality mm, int c) -> Tensor {
    if (mm == Modality::text) return m.encoders.encode_text(caption_ids(m.vocab, c, rng.raw()()));
    world::Concept cc = world::Concept::from_index(c);
    switch (mm) {
      case Modality::image: return m.encoders.encode_image(world::render_image(cc));
      case Modality::video: return m.encoders.encode_video(world::render_video(cc));
      default: return m.encoders.encode_audio(world::render_audio(cc));
    }
  };
  int n = static_cast<int>(concepts.size());
  std::vector<Tensor> q(n), k(n);
  for (int i = 0; i < n; ++i) {
    q[i] = embed(query, concepts[i]);
    k[i] = embed(key, concepts[i]);
  }
  // Audio carries the tone only, so any audio-involved pair is scored on the
  // tone; every other pair distinguishes the full concept.
  bool tone_only = query == Modality::audio || key == Modality::audio;
  auto matches = [&](int ci, int cj) {
    if (ci == cj) return true;
    if (!tone_only) return false;
    return world::Concept::from_index(ci).tone == world::Concept::from_index(cj).tone;
  };
  auto run_dir = [&](const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    int correct = 0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_dot = -2.0;
      for (int j = 0; j < n; ++j) {
        double d = 0.0;
        const float *pa = a[i].ptr(), *pb = b[j].ptr();
        for (int64_t x = 0; x < a[i].size(); ++x) d += static_cast<double>(pa[x]) * pb[x];
        if (d > best_dot) {
          best_dot = d;
          best = j;
        }
      }
      if (matches(concepts[i], concepts[best])) correct++;
    }
    return correct;
  };
  return static_cast<double>(run_dir(q, k) + run_dir(k, q)) / (2.0 * n);
}

RunReport pretrain_decoder(model::AnyToAnyModel& m, Modality target,
                           const std::vector<int>& concept_pool, const PretrainConfig& cfg,
                           const std::string& run_dir) {
  if (target == Modality::text) op_error("pretrain_decoder", "text has no decoder");
  if (concept_pool.empty()) op_error("pretrain_decoder", "empty concept pool");
  if (cfg.steps <= 0) op_error("pretrain_decoder", "steps must be positive");
  if (cfg.batch <= 0) op_error("pretrain_decoder", "batch must be positive");

  std::string label = target == Modality::image ? "img" : target == Modality::video ? "vid" : "aud";
  fs::create_directories(run_dir);
  m.params.set_trainable([&](const std::string& n) {
    return n.rfind("dec/" + label + "/", 0) == 0 || n.rfind("tenc/" + label, 0) == 0;
  });
  Adam opt(m.params, {.lr = cfg.lr});
  std::string init = run_dir + "/ckpt_init.amck";
  ckpt::save(init, m.params, run_meta("pretrain-decoders", 0, cfg.seed, label));
  write_kv(run_dir + "/config.txt", {{"pretrain.stage", "decoder-" + label},
                                     {"pretrain.lr", std::to_string(cfg.lr)},
                                     {"pretrain.steps", std::to_string(cfg.steps)},
                                     {"pretrain.batch", std::to_string(cfg.batch)},
                                     {"pretrain.seed", std::to_string(cfg.seed)}});
  write_lineage(run_dir, "pretrain-decoders/" + label, "", cfg.seed, cfg.steps, "", "");

  const std::string comp = "diff_mse_" + std::string(modality_name(target));
  LossLog log(run_dir + "/loss.csv", cfg.log_every, false);
  for (int step = 1; step <= cfg.steps; ++step) {
    Rng srng(seed_for(cfg.seed, "dec-pre-" + label + "/step/" + std::to_string(step)));
    Tape tape;
    Tensor total;
    for (int j = 0; j < cfg.batch; ++j) {
      int c = concept_pool[srng.uniform_int(0, static_cast<int>(concept_pool.size()) - 1)];
      Tensor cond = m.tenc_for(target).forward(caption_ids(m.vocab, c, srng.raw()()));
      int t = srng.uniform_int(0, m.schedule.steps - 1);
      Tensor x0 = decoder_sample(target, c);
      Tensor noise = Tensor::zeros(x0.shape);
      srng.fill_normal(noise.ptr(), noise.size(), 1.0f);
      Tensor loss = target == Modality::audio
                        ? diff::decoder_loss(m.unet_audio, m.schedule, x0, t, noise, cond)
                        : diff::decoder_loss(target == Modality::image ? m.unet_image : m.unet_video,
                                             m.schedule, x0, t, noise, cond, nullptr);
      total = total.defined() ? add(total, loss) : loss;
    }
    Tensor mean = scale(total, 1.0f / static_cast<float>(cfg.batch));
    log.add(step, comp, static_cast<double>((*mean.data)[0]));
    tape.backward(mean);
    opt.step();
    m.params.zero_grads();
    log.maybe_flush(step, false);
  }
  log.maybe_flush(cfg.steps, true);

  RunReport rep;
  rep.run_dir = run_dir;
  rep.init_checkpoint = init;
  rep.final_checkpoint = run_dir + "/ckpt_final.amck";
  ckpt::save(rep.final_checkpoint, m.params,
             run_meta("pretrain-decoders", cfg.steps, cfg.seed, label), opt.state());
  rep.rows = log.rows();
  rep.first = log.first();
  rep.last = log.last();
  rep.steps_run = cfg.steps;
  return rep;
}

RunReport pretrain_decoders(model::AnyToAnyModel& m, const std::vector<int>& concept_pool,
                            const PretrainConfig& cfg, const std::string& run_dir) {
  fs::create_directories(run_dir);
  RunReport all;
  all.run_dir = run_dir;
  for (Modality t : {Modality::image, Modality::video, Modality::audio}) {
    std::string label = t == Modality::image ? "img" : t == Modality::video ? "vid" : "aud";
    RunReport r = pretrain_decoder(m, t, concept_pool, cfg, run_dir + "/" + label);
    if (all.init_checkpoint.empty()) all.init_checkpoint = r.init_checkpoint;
    all.rows.insert(all.rows.end(), r.rows.begin(), r.rows.end());
    all.first.insert(r.first.begin(), r.first.end());
    for (const auto& [k, v] : r.last) all.last[k] = v;
    all.steps_run += r.steps_run;
  }
  all.final_checkpoint = run_dir + "/ckpt_final.amck";
  ckpt::save(all.final_checkpoint, m.params, run_meta("pretrain-decoders", all.steps_run, cfg.seed, ""));
  write_lineage(run_dir, "pretrain-decoders", "", cfg.seed, cfg.steps, "", "");
  return all;
}

RunReport run_phase1(model::AnyToAnyModel& m, const std::vector<data::Conversation>& corpus,
                     const PhaseConfig& cfg, const std::string& run_dir,
                     const std::string& parent, const std::string& resume) {
  if (cfg.phase != "1") op_error("train", "phase config is " + cfg.phase + ", expected 1");
  if (corpus.empty()) op_error("train", "empty phase-1 corpus");

  // Classify once: captioning conversations train CE, generation ones train
  // the span-embedding MSE against the caption encoder of the user caption.
  struct Entry {
    bool captioning = false;
    Modality target = Modality::text;
    std::vector<int> caption;
  };
  std::vector<Entry> entries(corpus.size());
  for (size_t i = 0; i < corpus.size(); ++i) {
    const data::Turn* at = find_turn(corpus[i], data::Turn::Role::assistant);
    const data::Turn* ut = find_turn(corpus[i], data::Turn::Role::user);
    if (!at || at->items.empty() || !ut)
      op_error("train", "phase-1 conversation " + std::to_string(i) + " lacks turns");
    entries[i].captioning = at->items[0].kind == Modality::text;
    if (!entries[i].captioning) {
      entries[i].target = at->items[0].kind;
      for (const auto& it : ut->items)
        if (it.kind == Modality::text) entries[i].caption = it.tokens;
      if (entries[i].caption.empty())
        op_error("train", "generation conversation " + std::to_string(i) + " has no caption");
    }
  }

  std::map<std::string, int> counters;
  auto embed = m.embed_fn();
  SampleFn sample = [&](int, int, Rng& srng) {
    std::vector<std::pair<std::string, Tensor>> out;
    int idx = srng.uniform_int(0, static_cast<int>(corpus.size()) - 1);
    const auto& conv = corpus[idx];
    const auto& e = entries[idx];
    auto asmb = lm::assemble_sequence(conv, m.vocab, m.llm, m.proj_in, embed);
    auto lmout = m.llm.forward(asmb.embeds);
    if (e.captioning) {
      auto targets = shifted_targets(asmb.tags, [](const lm::PosTag& t) {
        return t.role == data::Turn::Role::assistant && t.turn_idx >= 0;
      });
      if (!has_text_targets(targets)) {
        counters["skipped_no_targets"]++;
        return out;
      }
      out.emplace_back("caption_ce", cross_entropy(lmout.logits, targets));
    } else {
      auto spans = lm::extract_generation_spans(m.vocab, asmb.token_ids(), lmout.hidden);
      if (spans.empty()) {
        counters["skipped_no_span"]++;
        return out;
      }
      Tensor target;
      {
        NoGrad ng;
        target = m.tenc_for(e.target).forward(e.caption);
      }
      Tensor pred = lm::project_controller(spans[0], m.proj_out.of(e.target));
      out.emplace_back("embed_mse_" + std::string(modality_name(e.target)), mse(pred, target));
    }
    return out;
  };
  return run_masked(m, cfg, run_dir, parent, resume, sample, counters);
}

RunReport run_phase2(model::AnyToAnyModel& m,
                     const std::vector<data::InterleavedSequence>& corpus,
                     const PhaseConfig& cfg, const std::string& run_dir,
                     const std::string& parent, const std::string& resume) {
  if (cfg.phase != "2") op_error("train", "phase config is " + cfg.phase + ", expected 2");
  if (corpus.empty()) op_error("train", "empty interleaved corpus");
  std::map<std::string, int> counters;
  auto embed = m.embed_fn();
  SampleFn sample = [&](int, int, Rng& srng) {
    std::vector<std::pair<std::string, Tensor>> out;
    const auto& seq = corpus[srng.uniform_int(0, static_cast<int>(corpus.size()) - 1)];
    auto asmb = lm::assemble_stream(seq.items, m.vocab, m.llm, m.proj_in, embed);
    auto lmout = m.llm.forward(asmb.embeds);
    auto targets = shifted_targets(
        asmb.tags, [&](const lm::PosTag& t) { return m.vocab.is_text(t.token_id); });
    if (!has_text_targets(targets)) {
      counters["skipped_no_targets"]++;
      return out;
    }
    out.emplace_back("stream_ce", cross_entropy(lmout.logits, targets));
    return out;
  };
  return run_masked(m, cfg, run_dir, parent, resume, sample, counters);
}

RunReport run_phase3a(model::AnyToAnyModel& m, const std::vector<data::Conversation>& x2x,
                      const std::vector<data::Conversation>& sft, const PhaseConfig& cfg,
                      const std::string& run_dir, const std::string& parent,
                      const std::string& resume) {
  if (cfg.phase != "3a") op_error("train", "phase config is " + cfg.phase + ", expected 3a");
  if (x2x.empty()) op_error("train", "empty instruction corpus");

  std::vector<int> sizes{static_cast<int>(x2x.size())};
  std::vector<double> weights{1.0};
  if (!sft.empty()) {
    sizes.push_back(static_cast<int>(sft.size()));
    weights.push_back(1.0);
  }
  int64_t epoch_len = 0;
  for (int s : sizes) epoch_len += s;

  struct BlendCache {
    int64_t epoch = -1;
    std::vector<std::pair<int, int>> order;
  } blend;

  std::map<std::string, int> counters;
  auto embed = m.embed_fn();
  SampleFn sample = [&](int step, int j, Rng&) {
    std::vector<std::pair<std::string, Tensor>> out;
    int64_t g = static_cast<int64_t>(step - 1) * cfg.batch + j;
    int64_t epoch = g / epoch_len;
    if (blend.epoch != epoch) {
      blend.order = data::blend_epoch(sizes, weights, seed_for(cfg.seed, "blend"),
                                      static_cast<int>(epoch));
      blend.epoch = epoch;
    }
    auto [src, idx] = blend.order[static_cast<size_t>(g % epoch_len)];
    const auto& conv = src == 0 ? x2x[idx] : sft[idx];
    const data::Turn* at = find_turn(conv, data::Turn::Role::assistant);
    if (!at || at->items.empty()) {
      counters["skipped_no_assistant"]++;
      return out;
    }
    auto asmb = lm::assemble_sequence(conv, m.vocab, m.llm, m.proj_in, embed);
    auto lmout = m.llm.forward(asmb.embeds);
    auto targets = shifted_targets(asmb.tags, [](const lm::PosTag& t) {
      return t.role == data::Turn::Role::assistant;
    });
    if (has_text_targets(targets)) out.emplace_back("sft_ce", cross_entropy(lmout.logits, targets));
    auto spans = lm::extract_generation_spans(m.vocab, asmb.token_ids(), lmout.hidden);
    for (const auto& sp : spans) {
      if (conv.concepts.empty()) break;
      Tensor target;
      {
        NoGrad ng;
        target = m.tenc_for(sp.modality).forward(caption_ids(m.vocab, conv.concepts[0], 0));
      }
      Tensor pred = lm::project_controller(sp, m.proj_out.of(sp.modality));
      out.emplace_back("embed_mse", mse(pred, target));
    }
    return out;
  };
  return run_masked(m, cfg, run_dir, parent, resume, sample, counters);
}

RunReport run_phase3b(model::AnyToAnyModel& m, const std::vector<data::Conversation>& x2x,
                      const PhaseConfig& cfg, const std::string& run_dir,
                      const std::string& parent, const std::string& resume) {
  if (cfg.phase != "3b") op_error("train", "phase config is " + cfg.phase + ", expected 3b");

  std::map<std::string, int> counters;
  std::vector<int> usable;
  for (size_t i = 0; i < x2x.size(); ++i) {
    const data::Turn* at = find_turn(x2x[i], data::Turn::Role::assistant);
    if (!at || at->items.empty()) {
      counters["skipped_no_assistant"]++;
      continue;
    }
    Modality t = at->items[0].kind;
    if (t == Modality::image || t == Modality::video)
      usable.push_back(static_cast<int>(i));
    else
      counters["skipped_nonvisual_target"]++;
  }
  if (usable.empty()) op_error("train", "no conversations with a visual target");

  // Frozen-pipeline context per conversation: the span conditioning from the
  // LM and the encoder pyramid of the most recent visual input. Both are
  // constants for this phase, so they are computed once and cached.
  struct Ctx {
    Modality target = Modality::image;
    int target_concept = -1;
    Tensor cond;
    bool has_vis = false;
    enc::Pyramid pyr;
  };
  std::map<int, Ctx> cache;
  auto embed = m.embed_fn();
  auto context_for = [&](int idx) -> const Ctx& {
    auto it = cache.find(idx);
    if (it != cache.end()) return it->second;
    NoGrad ng;
    const auto& conv = x2x[static_cast<size_t>(idx)];
    Ctx ctx;
    const data::Turn* at = find_turn(conv, data::Turn::Role::assistant);
    ctx.target = at->items[0].kind;
    ctx.target_concept = at->items[0].concept_idx;
    auto asmb = lm::assemble_sequence(conv, m.vocab, m.llm, m.proj_in, embed);
    auto lmout = m.llm.forward(asmb.embeds);
    auto spans = lm::extract_generation_spans(m.vocab, asmb.token_ids(), lmout.hidden);
    if (spans.empty()) op_error("train", "assembled conversation lost its generation span");
    ctx.cond = lm::project_controller(spans.back(), m.proj_out.of(ctx.target));
    const data::Turn* ut = find_turn(conv, data::Turn::Role::user);
    if (ut) {
      for (const auto& item : ut->items) {
        if (item.kind == Modality::image) {
          m.encoders.encode_image(world::render_image(world::Concept::from_index(item.concept_idx)), &ctx.pyr);
          ctx.has_vis = true;
        } else if (item.kind == Modality::video) {
          m.encoders.encode_video(world::render_video(world::Concept::from_index(item.concept_idx)), &ctx.pyr);
          ctx.has_vis = true;
        }
      }
    }
    return cache.emplace(idx, std::move(ctx)).first->second;
  };

  SampleFn sample = [&](int, int, Rng& srng) {
    std::vector<std::pair<std::string, Tensor>> out;
    int idx = usable[srng.uniform_int(0, static_cast<int>(usable.size()) - 1)];
    const Ctx& ctx = context_for(idx);
    bool want_control = (cfg.variant == "veh-img" && ctx.target == Modality::image) ||
                        (cfg.variant == "veh-imgvid" &&
                         (ctx.target == Modality::image || ctx.target == Modality::video));
    int t = srng.uniform_int(0, m.schedule.steps - 1);
    Tensor x0 = decoder_sample(ctx.target, ctx.target_concept);
    Tensor noise = Tensor::zeros(x0.shape);
    srng.fill_normal(noise.ptr(), noise.size(), 1.0f);
    const diff::UNet2d& unet = ctx.target == Modality::image ? m.unet_image : m.unet_video;
    Tensor loss;
    if (want_control && ctx.has_vis) {
      Tensor e = m.highway.forward(ctx.pyr);
      std::vector<Tensor> sigs = m.ctrl_for(ctx.target).forward(e);
      loss = diff::decoder_loss(unet, m.schedule, x0, t, noise, ctx.cond, &sigs);
    } else {
      if (want_control && !ctx.has_vis) counters["textual_only"]++;
      loss = diff::decoder_loss(unet, m.schedule, x0, t, noise, ctx.cond, nullptr);
    }
    out.emplace_back("diff_mse_" + std::string(modality_name(ctx.target)), loss);
    return out;
  };
  return run_masked(m, cfg, run_dir, parent, resume, sample, counters);
}

double mean_text_ce(const model::AnyToAnyModel& m,
                    const std::vector<data::InterleavedSequence>& seqs) {
  if (seqs.empty()) op_error("mean_text_ce", "no sequences");
  NoGrad ng;
  auto embed = m.embed_fn();
  double sum = 0.0;
  int64_t count = 0;
  for (const auto& seq : seqs) {
    auto asmb = lm::assemble_stream(seq.items, m.vocab, m.llm, m.proj_in, embed);
    auto lmout = m.llm.forward(asmb.embeds);
    auto targets = shifted_targets(
        asmb.tags, [&](const lm::PosTag& t) { return m.vocab.is_text(t.token_id); });
    int64_t n = std::count_if(targets.begin(), targets.end(), [](int t) { return t >= 0; });
    if (n == 0) continue;
    Tensor ce = cross_entropy(lmout.logits, targets);
    sum += static_cast<double>((*ce.data)[0]) * static_cast<double>(n);
    count += n;
  }
  if (count == 0) op_error("mean_text_ce", "no text positions");
  return sum / static_cast<double>(count);
}

double gen_token_accuracy(const model::AnyToAnyModel& m,
                          const std::vector<data::Conversation>& convs) {
  if (convs.empty()) op_error("gen_token_accuracy", "no conversations");
  NoGrad ng;
  auto embed = m.embed_fn();
  int64_t correct = 0, total = 0;
  int vocab = m.vocab.total;
  for (const auto& conv : convs) {
    auto asmb = lm::assemble_sequence(conv, m.vocab, m.llm, m.proj_in, embed);
    auto lmout = m.llm.forward(asmb.embeds);
    const float* lp = lmout.logits.ptr();
    for (size_t i = 0; i + 1 < asmb.tags.size(); ++i) {
      const auto& nx = asmb.tags[i + 1];
      if (nx.is_chunk || nx.token_id < 0 || !m.vocab.is_gen(nx.token_id)) continue;
      const float* row = lp + static_cast<int64_t>(i) * vocab;
      int best = 0;
      for (int v = 1; v < vocab; ++v)
        if (row[v] > row[best]) best = v;
      if (best == nx.token_id) correct++;
      total++;
    }
  }
  if (total == 0) op_error("gen_token_accuracy", "no generation tokens");
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace am::train
