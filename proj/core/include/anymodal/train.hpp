#pragma once

// Optimization stages: contrastive encoder pretraining, per-modality decoder
// pretraining, projection alignment (phase 1), interleaved tuning (phase 2),
// instruction tuning (phase 3a) and decoder/controller tuning (phase 3b).
// Every run writes a loss CSV, a config snapshot, a lineage manifest and
// checkpoints into its run directory, and draws all randomness from the
// config seed so an interrupted run can resume bit-exactly.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "anymodal/data.hpp"
#include "anymodal/model.hpp"

namespace am::train {

using nn::Tensor;

// Parameter-name predicate for a phase. Phase 1 trains the input/output
// projections and the vocabulary embedding; phases 2 and 3a add the LoRA
// factors; phase 3b trains the visual U-Nets, the highway projections and
// the controllers. Everything else stays frozen. Unknown ids are rejected.
std::function<bool(const std::string&)> trainable_mask(const std::string& phase);

// Human-readable prefix list behind trainable_mask, for config snapshots.
std::vector<std::string> mask_patterns(const std::string& phase);

struct PhaseConfig {
  std::string phase;  // "1", "2", "3a", "3b"
  float lr = 1e-4f;
  int steps = 100;
  int batch = 4;
  uint64_t seed = 1;
  int warmup = 0;      // linear warm-up steps; 0 disables
  int log_every = 25;  // CSV flush interval (steps)
  int ckpt_every = 0;  // periodic checkpoint interval; 0 = final only
  std::string variant = "ta";  // phase 3b: which decoders receive control
};

// Toy defaults per phase (lr 3e-4/1e-4/1e-4/1e-5, steps 2000/1000/3000/2000).
PhaseConfig default_phase(const std::string& phase);

struct LossRow {
  int step = 0;
  std::string component;
  double value = 0.0;
};

struct RunReport {
  std::string run_dir;
  std::string init_checkpoint;   // state before the first executed step
  std::string final_checkpoint;  // state after the last step
  std::vector<LossRow> rows;     // windowed means, mirrors loss.csv
  std::map<std::string, double> first;  // earliest logged mean per component
  std::map<std::string, double> last;   // latest logged mean per component
  std::map<std::string, int> counters;  // skip/fallback counts
  int steps_run = 0;
};

struct PretrainConfig {
  int steps = 200;
  int batch = 8;
  float lr = 3e-4f;
  uint64_t seed = 1;
  int log_every = 25;
  float temperature = 0.07f;  // contrastive pretraining only
};

// Symmetric InfoNCE over concept batches across all four modalities; trains
// the encoder towers only and sets the family's frozen flag afterwards.
// Batch sizes under 2 and empty pools are rejected.
RunReport pretrain_encoders(model::AnyToAnyModel& m, const std::vector<int>& concept_pool,
                            const PretrainConfig& cfg, const std::string& run_dir);

// Bidirectional top-1 retrieval accuracy between two modalities over one
// batch of concepts. A retrieval counts when the retrieved concept matches
// the query on every factor both modalities can express (audio carries only
// the tone, so audio pairs compare tones).
double retrieval_top1(const model::AnyToAnyModel& m, const std::vector<int>& concepts,
                      Modality query, Modality key, uint64_t seed);

// Caption-conditioned denoising for one target modality; trains that
// modality's U-Net jointly with its caption encoder. The caption encoder is
// frozen afterwards by every later phase mask.
RunReport pretrain_decoder(model::AnyToAnyModel& m, Modality target,
                           const std::vector<int>& concept_pool, const PretrainConfig& cfg,
                           const std::string& run_dir);

// All three decoders in modality order under one run directory.
RunReport pretrain_decoders(model::AnyToAnyModel& m, const std::vector<int>& concept_pool,
                            const PretrainConfig& cfg, const std::string& run_dir);

// Phase 1: captioning conversations optimize next-token CE on the assistant
// text; generation conversations optimize MSE between the projected span
// embedding and the frozen caption-encoder embedding of the user's caption.
RunReport run_phase1(model::AnyToAnyModel& m, const std::vector<data::Conversation>& corpus,
                     const PhaseConfig& cfg, const std::string& run_dir,
                     const std::string& parent = "", const std::string& resume = "");

// Phase 2: next-token CE over interleaved streams, text-word positions only.
RunReport run_phase2(model::AnyToAnyModel& m,
                     const std::vector<data::InterleavedSequence>& corpus,
                     const PhaseConfig& cfg, const std::string& run_dir,
                     const std::string& parent = "", const std::string& resume = "");

// Phase 3a: blended instruction + captioning stream; CE on assistant-turn
// tokens (generation tokens included) plus span-embedding MSE against the
// frozen caption encoder of the target concept.
RunReport run_phase3a(model::AnyToAnyModel& m, const std::vector<data::Conversation>& x2x,
                      const std::vector<data::Conversation>& sft, const PhaseConfig& cfg,
                      const std::string& run_dir, const std::string& parent = "",
                      const std::string& resume = "");

// Phase 3b: denoising MSE on visual targets with conditioning taken from the
// frozen LM pipeline and, per variant, control signals from the highway of
// the most recent visual input. Samples without a visual input fall back to
// the text-conditioned loss and are counted.
RunReport run_phase3b(model::AnyToAnyModel& m, const std::vector<data::Conversation>& x2x,
                      const PhaseConfig& cfg, const std::string& run_dir,
                      const std::string& parent = "", const std::string& resume = "");

// Mean next-token CE over text-word positions of interleaved streams,
// without gradients. Used for held-out perplexity checks.
double mean_text_ce(const model::AnyToAnyModel& m,
                    const std::vector<data::InterleavedSequence>& seqs);

// Teacher-forced argmax accuracy on generation-token positions.
double gen_token_accuracy(const model::AnyToAnyModel& m,
                          const std::vector<data::Conversation>& convs);

}  // namespace am::train
