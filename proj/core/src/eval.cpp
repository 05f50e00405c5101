#include "anymodal/eval.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "anymodal/world.hpp"
#include "json.hpp"

namespace am::eval {

using namespace nn;

namespace {

int variant_rank(const std::string& name) {
  if (name == "ta") return 0;
  if (name == "veh-img") return 1;
  if (name == "veh-imgvid") return 2;
  op_error("eval", "unknown variant '" + name + "'");
}

void check_variant(const VariantSpec& v) {
  variant_rank(v.name);
  if (!(v.alpha >= 0.0 && v.alpha <= 1.0))
    op_error("eval", "conditioning rate " + std::to_string(v.alpha) + " outside [0, 1]");
}

const data::Turn* find_turn(const data::Conversation& conv, data::Turn::Role role) {
  for (const auto& t : conv.turns)
    if (t.role == role) return &t;
  return nullptr;
}

// Prompt: the user items plus the opening of the assistant turn, with the
// trailing end-of-sequence row dropped so decoding continues the reply.
lm::AssembledSequence prompt_from_items(const model::AnyToAnyModel& m,
                                        const std::vector<data::ContentItem>& items) {
  if (items.empty()) op_error("eval", "prompt needs at least one user item");
  data::Conversation conv;
  conv.turns.push_back({data::Turn::Role::user, items});
  conv.turns.push_back({data::Turn::Role::assistant, {}});
  lm::AssembledSequence a = lm::assemble_sequence(conv, m.vocab, m.llm, m.proj_in, m.embed_fn());
  int last = a.embeds.shape[0] - 1;
  std::vector<int> keep(last);
  std::iota(keep.begin(), keep.end(), 0);
  lm::AssembledSequence p;
  p.embeds = gather_rows(a.embeds, keep);
  p.tags.assign(a.tags.begin(), a.tags.end() - 1);
  return p;
}

Tensor world_sample(Modality m, int concept_idx) {
  world::Concept c = world::Concept::from_index(concept_idx);
  switch (m) {
    case Modality::image: return world::render_image(c);
    case Modality::video: return world::render_video(c);
    case Modality::audio: return world::render_audio(c);
    default: op_error("eval", "text has no rendered sample");
  }
}

// Pyramid of the most recent visual item, the highway's source.
bool visual_pyramid(const model::AnyToAnyModel& m, const std::vector<data::ContentItem>& items,
                    enc::Pyramid* out) {
  for (auto it = items.rbegin(); it != items.rend(); ++it) {
    if (it->kind == Modality::image) {
      m.encoders.encode_image(world::render_image(world::Concept::from_index(it->concept_idx)),
                              out);
      return true;
    }
    if (it->kind == Modality::video) {
      m.encoders.encode_video(world::render_video(world::Concept::from_index(it->concept_idx)),
                              out);
      return true;
    }
  }
  return false;
}

SampleResult eval_one(const model::AnyToAnyModel& m, const VariantSpec& variant,
                      const data::Conversation& conv, data::X2XType t, int index,
                      const EvalOptions& opts, const Synthesizer& synth) {
  Modality target = data::x2x_target(t);
  SampleResult sr;
  sr.type = data::x2x_name(t);
  sr.index = index;

  const data::Turn* user = find_turn(conv, data::Turn::Role::user);
  const data::Turn* assistant = find_turn(conv, data::Turn::Role::assistant);
  if (!user || !assistant)
    op_error("run_benchmark", sr.type + " conversation lacks a user or assistant turn");
  const data::ContentItem* gt = nullptr;
  for (const auto& item : assistant->items)
    if (item.kind == target) {
      gt = &item;
      break;
    }
  if (!gt) op_error("run_benchmark", sr.type + " conversation lacks its ground-truth item");
  sr.concept_idx = gt->concept_idx;

  lm::AssembledSequence prompt = prompt_from_items(m, user->items);
  lm::GenerateResult gen = lm::generate(m.llm, prompt, lm::SamplerSpec{0.0f, 0}, opts.max_new_tokens);
  const lm::GenerationSpan* span = nullptr;
  if (!gen.span_error)
    for (const auto& s : gen.spans)
      if (s.modality == target) {
        span = &s;
        break;
      }
  if (!span) {
    sr.span_ok = false;
    sr.score = 0.0;
    return sr;
  }

  SynthesisRequest req;
  req.target = target;
  req.cond = lm::project_controller(*span, m.proj_out.of(target));
  enc::Pyramid pyr;
  bool want = variant.controls(target);
  bool has_pyr = want && visual_pyramid(m, user->items, &pyr);
  req.use_control = want && has_pyr;
  if (req.use_control) req.pyramid = &pyr;
  req.alpha = variant.alpha;
  req.seed = seed_for(opts.seed, "sample/" + sr.type + "/" + std::to_string(index));
  req.concept_idx = sr.concept_idx;

  Tensor pred = synth(m, req);
  sr.score = enc::x2a_score(m.encoders, pred, target, world_sample(target, sr.concept_idx), target);
  return sr;
}

}  // namespace

bool VariantSpec::controls(Modality target) const {
  int r = variant_rank(name);
  if (target == Modality::image) return r >= 1;
  if (target == Modality::video) return r >= 2;
  return false;
}

VariantSpec variant_from_name(const std::string& name, double alpha) {
  VariantSpec v{name, alpha};
  check_variant(v);
  return v;
}

Synthesizer diffusion_synthesizer() {
  return [](const model::AnyToAnyModel& m, const SynthesisRequest& r) -> Tensor {
    std::vector<Tensor> sigs;
    const std::vector<Tensor>* ctrl = nullptr;
    double rate = 0.0;
    if (r.use_control) {
      if (!r.pyramid) op_error("synthesize", "control requested without a pyramid");
      sigs = m.ctrl_for(r.target).forward(m.highway.forward(*r.pyramid));
      ctrl = &sigs;
      rate = r.alpha;
    }
    switch (r.target) {
      case Modality::image: {
        Tensor x = diff::ddpm_sample(m.unet_image, m.schedule, Shape{1, 3, 16, 16}, r.cond,
                                     r.seed, ctrl, rate);
        return reshape(x, Shape{3, 16, 16});
      }
      case Modality::video:
        return diff::ddpm_sample(m.unet_video, m.schedule, Shape{8, 3, 16, 16}, r.cond, r.seed,
                                 ctrl, rate);
      case Modality::audio: {
        Tensor x = diff::ddpm_sample(m.unet_audio, m.schedule, Shape{1, 1, 256}, r.cond, r.seed);
        return reshape(x, Shape{256});
      }
      default: op_error("synthesize", "no decoder for text");
    }
  };
}

const TypeStats* BenchmarkReport::stats_for(const std::string& type) const {
  for (const auto& st : per_type)
    if (st.type == type) return &st;
  return nullptr;
}

double BenchmarkReport::mean_for(const std::string& type) const {
  const TypeStats* st = stats_for(type);
  if (!st) op_error("report", "no " + type + " rows in the " + variant + " report");
  return st->mean;
}

BenchmarkReport run_benchmark(const model::AnyToAnyModel& m, const VariantSpec& variant,
                              const std::vector<data::Conversation>& eval_set,
                              const data::DatasetManifest& manifest, const EvalOptions& opts) {
  NoGrad ng;
  check_variant(variant);
  if (opts.max_new_tokens <= 0) op_error("run_benchmark", "max_new_tokens must be positive");

  std::map<std::string, std::vector<int>> slots;
  for (int i = 0; i < (int)eval_set.size(); ++i) {
    data::x2x_from_name(eval_set[i].type);
    slots[eval_set[i].type].push_back(i);
  }
  for (const auto& [type, n] : manifest.eval_counts) {
    auto it = slots.find(type);
    int have = it == slots.end() ? 0 : (int)it->second.size();
    if (have != n)
      op_error("run_benchmark", "eval set does not match its manifest: " + type + " has " +
                                    std::to_string(have) + " conversations, manifest records " +
                                    std::to_string(n));
  }
  for (const auto& [type, ids] : slots)
    if (!manifest.eval_counts.count(type))
      op_error("run_benchmark",
               "eval set does not match its manifest: " + type + " absent from the manifest");

  std::vector<data::X2XType> wanted = opts.types;
  if (wanted.empty()) {
    for (data::X2XType t : data::all_x2x())
      if (slots.count(data::x2x_name(t))) wanted.push_back(t);
  } else {
    for (data::X2XType t : wanted)
      if (!slots.count(data::x2x_name(t)))
        op_error("run_benchmark",
                 std::string("no ") + data::x2x_name(t) + " conversations in the eval set");
  }

  Synthesizer synth = opts.synth ? opts.synth : diffusion_synthesizer();
  BenchmarkReport rep;
  rep.variant = variant.name;
  rep.alpha = variant.alpha;
  for (data::X2XType t : wanted) {
    const std::vector<int>& ids = slots[data::x2x_name(t)];
    TypeStats st;
    st.type = data::x2x_name(t);
    for (int j = 0; j < (int)ids.size(); ++j) {
      SampleResult sr = eval_one(m, variant, eval_set[ids[j]], t, j, opts, synth);
      st.scores.push_back(sr.score);
      st.n++;
      if (!sr.span_ok) st.fail_count++;
      rep.samples.push_back(sr);
    }
    double sum = 0.0;
    for (double s : st.scores) sum += s;
    st.mean = st.n ? sum / st.n : 0.0;
    rep.per_type.push_back(std::move(st));
  }
  return rep;
}

void write_report_csv(const BenchmarkReport& r, const std::string& path) {
  std::ofstream f(path);
  if (!f) op_error("write_report_csv", "cannot open " + path);
  f << "variant,type,n,mean,fail_count\n" << std::setprecision(10);
  for (const auto& st : r.per_type)
    f << r.variant << ',' << st.type << ',' << st.n << ',' << st.mean << ',' << st.fail_count
      << '\n';
}

void write_sample_records(const BenchmarkReport& r, const std::string& path) {
  std::ofstream f(path);
  if (!f) op_error("write_sample_records", "cannot open " + path);
  for (const auto& s : r.samples) {
    nlohmann::json j{{"variant", r.variant}, {"type", s.type},   {"index", s.index},
                     {"concept", s.concept_idx}, {"score", s.score}, {"span_ok", s.span_ok}};
    f << j.dump() << '\n';
  }
}

std::string comparison_table(const std::vector<BenchmarkReport>& reports) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "type";
  for (const auto& r : reports) os << std::right << std::setw(12) << r.variant;
  os << '\n';
  os << std::fixed << std::setprecision(2);
  for (data::X2XType t : data::all_x2x()) {
    const char* name = data::x2x_name(t);
    bool present = false;
    for (const auto& r : reports) present = present || r.stats_for(name) != nullptr;
    if (!present) continue;
    os << std::left << std::setw(12) << name;
    for (const auto& r : reports) {
      const TypeStats* st = r.stats_for(name);
      if (st)
        os << std::right << std::setw(12) << st->mean;
      else
        os << std::right << std::setw(12) << "-";
    }
    os << '\n';
  }
  os << std::left << std::setw(12) << "span-fails";
  for (const auto& r : reports) {
    int fails = 0;
    for (const auto& st : r.per_type) fails += st.fail_count;
    os << std::right << std::setw(12) << fails;
  }
  os << '\n';
  return os.str();
}

AblationResult ablation_suite(const AblationEntry& ta, const AblationEntry& veh_img,
                              const AblationEntry& veh_imgvid,
                              const std::vector<data::Conversation>& eval_set,
                              const data::DatasetManifest& manifest, const EvalOptions& opts) {
  const AblationEntry* entries[3] = {&ta, &veh_img, &veh_imgvid};
  const char* names[3] = {"ta", "veh-img", "veh-imgvid"};
  for (int i = 0; i < 3; ++i) {
    if (!entries[i]->model)
      op_error("ablation_suite", std::string(names[i]) + " entry has no model");
    if (entries[i]->parent.empty())
      op_error("ablation_suite", std::string(names[i]) + " entry lacks a lineage record");
  }
  if (veh_img.parent != ta.parent || veh_imgvid.parent != ta.parent)
    op_error("ablation_suite", "variants do not share a lineage: ta from '" + ta.parent +
                                   "', veh-img from '" + veh_img.parent + "', veh-imgvid from '" +
                                   veh_imgvid.parent + "'");

  AblationResult r;
  r.ta = run_benchmark(*ta.model, variant_from_name("ta", 1.0), eval_set, manifest, opts);
  r.veh_img =
      run_benchmark(*veh_img.model, variant_from_name("veh-img", veh_img.alpha), eval_set,
                    manifest, opts);
  r.veh_imgvid =
      run_benchmark(*veh_imgvid.model, variant_from_name("veh-imgvid", veh_imgvid.alpha),
                    eval_set, manifest, opts);

  auto direction = [&r](const char* type, const BenchmarkReport& hi, const BenchmarkReport& lo) {
    if (!hi.stats_for(type) || !lo.stats_for(type)) return;
    DirectionCheck d;
    d.type = type;
    d.better = hi.variant;
    d.worse = lo.variant;
    d.delta = hi.mean_for(type) - lo.mean_for(type);
    d.consistent = d.delta > 0.0;
    r.directions.push_back(d);
  };
  direction("VID2IMG", r.veh_img, r.ta);
  direction("VID2VID", r.veh_imgvid, r.veh_img);
  direction("IMG2VID", r.veh_imgvid, r.veh_img);

  std::ostringstream os;
  os << comparison_table({r.ta, r.veh_img, r.veh_imgvid});
  os << "\ndirection checks:\n" << std::fixed << std::setprecision(2);
  for (const auto& d : r.directions)
    os << "  " << d.type << ": " << d.better << " - " << d.worse << " = "
       << (d.delta >= 0 ? "+" : "") << d.delta << (d.consistent ? "  (consistent)" : "  (inverted)")
       << '\n';
  r.table = os.str();
  return r;
}

std::vector<SweepRow> conditioning_sweep(const model::AnyToAnyModel& m,
                                         const std::vector<double>& alphas,
                                         const std::vector<data::Conversation>& eval_set,
                                         const data::DatasetManifest& manifest,
                                         const EvalOptions& opts) {
  std::vector<double> grid =
      alphas.empty() ? std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0} : alphas;
  for (double a : grid)
    if (!(a >= 0.0 && a <= 1.0))
      op_error("conditioning_sweep", "rate " + std::to_string(a) + " outside [0, 1]");
  std::vector<SweepRow> rows;
  for (double a : grid) {
    BenchmarkReport rep = run_benchmark(m, variant_from_name("veh-imgvid", a), eval_set, manifest,
                                        opts);
    for (const auto& st : rep.per_type) rows.push_back({a, st.type, st.mean});
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) op_error("write_sweep_csv", "cannot open " + path);
  f << "alpha,type,mean\n" << std::setprecision(10);
  for (const auto& row : rows) f << row.alpha << ',' << row.type << ',' << row.mean << '\n';
}

GenerationOutcome generate_from_items(const model::AnyToAnyModel& m,
                                      const std::vector<data::ContentItem>& items,
                                      const VariantSpec& variant, uint64_t seed,
                                      int max_new_tokens) {
  NoGrad ng;
  check_variant(variant);
  lm::AssembledSequence prompt = prompt_from_items(m, items);
  GenerationOutcome out;
  out.decode = lm::generate(m.llm, prompt, lm::SamplerSpec{0.0f, seed}, max_new_tokens);
  std::ostringstream ts;
  for (size_t i = 0; i < out.decode.tokens.size(); ++i)
    ts << (i ? " " : "") << m.vocab.token_name(out.decode.tokens[i]);
  out.transcript = ts.str();
  if (out.decode.span_error || out.decode.spans.empty()) return out;

  const lm::GenerationSpan& span = out.decode.spans.front();
  SynthesisRequest req;
  req.target = span.modality;
  req.cond = lm::project_controller(span, m.proj_out.of(span.modality));
  enc::Pyramid pyr;
  bool want = variant.controls(span.modality);
  req.use_control = want && visual_pyramid(m, items, &pyr);
  if (req.use_control) req.pyramid = &pyr;
  req.alpha = variant.alpha;
  req.seed = seed_for(seed, "generate/sample");
  out.sample = diffusion_synthesizer()(m, req);
  out.target = span.modality;
  out.has_sample = true;
  return out;
}

}  // namespace am::eval
