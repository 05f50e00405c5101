#pragma once

// Benchmark harness. Each eval conversation is answered by the model: the
// user turn becomes a prompt, the assistant reply is greedy-decoded, the
// emitted generation span is projected to a conditioning embedding and a
// sample is synthesized from it, then scored against the ground-truth
// rendering in the shared joint space. Variants differ only in which decoder
// targets receive highway control during sampling.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "anymodal/data.hpp"
#include "anymodal/encoders.hpp"
#include "anymodal/llm.hpp"
#include "anymodal/model.hpp"

namespace am::eval {

using nn::Tensor;

// ta: text-aligned conditioning only. veh-img adds highway control for image
// targets, veh-imgvid for image and video targets. alpha is the conditioning
// rate handed to the sampler; ta ignores it.
struct VariantSpec {
  std::string name = "ta";
  double alpha = 1.0;

  bool controls(Modality target) const;
};

VariantSpec variant_from_name(const std::string& name, double alpha = 1.0);

// Everything a synthesizer needs to produce one sample. pyramid is the
// encoder pyramid of the most recent visual item in the user turn, null when
// the inputs carry none. concept_idx names the ground-truth concept so test
// stubs can cheat; real synthesizers must not look at it.
struct SynthesisRequest {
  Modality target = Modality::image;
  Tensor cond;  // (N_m, d_cond)
  const enc::Pyramid* pyramid = nullptr;
  bool use_control = false;
  double alpha = 1.0;
  uint64_t seed = 0;
  int concept_idx = -1;
};

// Returns a world-shaped sample: image (3,16,16), video (8,3,16,16),
// audio (256).
using Synthesizer = std::function<Tensor(const model::AnyToAnyModel&, const SynthesisRequest&)>;

// The real path: ancestral sampling through the target's U-Net, control
// signals gated at the request's rate when use_control is set.
Synthesizer diffusion_synthesizer();

struct SampleResult {
  std::string type;  // "VID2IMG" etc.
  int index = 0;     // position within the type's eval slice
  int concept_idx = -1;
  double score = 0.0;
  bool span_ok = true;
};

struct TypeStats {
  std::string type;
  int n = 0;
  double mean = 0.0;
  int fail_count = 0;          // decodes without a usable span, scored 0
  std::vector<double> scores;  // per sample, eval order
};

struct BenchmarkReport {
  std::string variant;
  double alpha = 1.0;
  std::vector<TypeStats> per_type;
  std::vector<SampleResult> samples;

  const TypeStats* stats_for(const std::string& type) const;
  double mean_for(const std::string& type) const;  // absent type -> error
};

struct EvalOptions {
  uint64_t seed = 1;
  int max_new_tokens = 16;
  std::vector<data::X2XType> types;  // empty: every type in the set
  Synthesizer synth;                 // empty: diffusion_synthesizer()
};

// Scores the eval set after checking its per-type counts against the
// manifest. Sampling seeds depend only on opts.seed and the sample's slot,
// so score differences between variants on one set are paired.
BenchmarkReport run_benchmark(const model::AnyToAnyModel& m, const VariantSpec& variant,
                              const std::vector<data::Conversation>& eval_set,
                              const data::DatasetManifest& manifest,
                              const EvalOptions& opts = {});

void write_report_csv(const BenchmarkReport& r, const std::string& path);
// Line-delimited JSON, one record per sample.
void write_sample_records(const BenchmarkReport& r, const std::string& path);
std::string comparison_table(const std::vector<BenchmarkReport>& reports);

// One variant's model in the three-way comparison. parent names the shared
// upstream checkpoint the variant was trained from; the suite refuses to
// compare models with different ancestry.
struct AblationEntry {
  const model::AnyToAnyModel* model = nullptr;
  std::string parent;
  double alpha = 1.0;
};

struct DirectionCheck {
  std::string type;
  std::string better, worse;  // variant names
  double delta = 0.0;         // better mean - worse mean
  bool consistent = false;    // delta > 0
};

struct AblationResult {
  BenchmarkReport ta, veh_img, veh_imgvid;
  std::vector<DirectionCheck> directions;
  std::string table;
};

// Runs all three variants on one eval set and checks the expected orderings:
// image control should lift image targets over ta, adding video control
// should lift video targets further.
AblationResult ablation_suite(const AblationEntry& ta, const AblationEntry& veh_img,
                              const AblationEntry& veh_imgvid,
                              const std::vector<data::Conversation>& eval_set,
                              const data::DatasetManifest& manifest,
                              const EvalOptions& opts = {});

struct SweepRow {
  double alpha = 0.0;
  std::string type;
  double mean = 0.0;
};

// Reruns generation at each conditioning rate with full highway control and
// reports per-type means. Rates must lie in [0, 1]; an empty list selects
// {0, 0.25, 0.5, 0.75, 1}. At rate 0 the sampler never applies control, so
// the row reproduces the ta scores bit for bit.
std::vector<SweepRow> conditioning_sweep(const model::AnyToAnyModel& m,
                                         const std::vector<double>& alphas,
                                         const std::vector<data::Conversation>& eval_set,
                                         const data::DatasetManifest& manifest,
                                         const EvalOptions& opts = {});
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);

// Free-form generation outside the benchmark: prompt from user items, decode,
// synthesize the first emitted span if any.
struct GenerationOutcome {
  lm::GenerateResult decode;
  std::string transcript;  // decoded token names, space separated
  bool has_sample = false;
  Modality target = Modality::image;
  Tensor sample;  // world-shaped
};

GenerationOutcome generate_from_items(const model::AnyToAnyModel& m,
                                      const std::vector<data::ContentItem>& items,
                                      const VariantSpec& variant, uint64_t seed,
                                      int max_new_tokens = 16);

}  // namespace am::eval
