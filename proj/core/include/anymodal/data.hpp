#pragma once

// Conversation structures shared by the sequence assembler, the dataset
// builders and the training loops. Modality items reference world concepts;
// the pixel/waveform payloads are regenerated on demand from the concept,
// which keeps serialized conversations small and bit-reproducible.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "anymodal/modality.hpp"

namespace am::lm {
struct Vocabulary;
}

namespace am::data {

struct ContentItem {
  Modality kind = Modality::text;
  std::vector<int> tokens;  // text items: vocabulary ids
  int concept_idx = -1;     // non-text items: world concept index

  static ContentItem text(std::vector<int> ids) {
    ContentItem it;
    it.tokens = std::move(ids);
    return it;
  }
  static ContentItem sample(Modality m, int concept_idx) {
    ContentItem it;
    it.kind = m;
    it.concept_idx = concept_idx;
    return it;
  }
};

struct Turn {
  enum class Role { user, assistant };
  Role role = Role::user;
  std::vector<ContentItem> items;
};

struct Conversation {
  std::vector<Turn> turns;
  std::string type;           // e.g. "VID2IMG", "caption", "textgen", "interleaved"
  std::vector<int> concepts;  // source concept indices, in order of appearance
};

// The six cross-modality conversation kinds.
enum class X2XType { vid2img, vid2vid, img2vid, vid2aud, aud2vid, imgaud2vid };
inline constexpr int kX2XCount = 6;

const std::array<X2XType, kX2XCount>& all_x2x();
const char* x2x_name(X2XType t);                 // "VID2IMG" etc.
X2XType x2x_from_name(const std::string& name);  // unknown -> rejected
std::vector<Modality> x2x_inputs(X2XType t);     // one entry, two for imgaud2vid
Modality x2x_target(X2XType t);

// Instruction phrasings, >= 4 per type, as vocabulary words. One variant per
// target kind is the fixed benchmark sentence "please generate <a/an> <kind>
// similar to the semantics in the input ."
int instruction_template_count(X2XType t);
std::vector<std::string> instruction_words(X2XType t, uint64_t template_seed);
std::vector<std::string> instruction_vocabulary();  // sorted, deduplicated

// User turn: input sample item(s), then the templated instruction. Assistant
// turn: the target modality item of the same concept.
Conversation build_x2x(X2XType t, int concept_idx, uint64_t template_seed,
                       const lm::Vocabulary& v);

// One clip chunked into n steps: shape and color persist, motion and tone
// drift. Items come out chunk-major as {image, audio, video, text}.
struct InterleavedSequence {
  std::vector<ContentItem> items;
  std::vector<int> chunk_concepts;
};

std::vector<int> sample_clip(uint64_t seed, int n);
InterleavedSequence build_interleaved(const std::vector<int>& clip_concepts, int n,
                                      uint64_t template_seed, const lm::Vocabulary& v);

// Captioning ("caption") and generation ("textgen") pairs round-robined over
// the three sample modalities, balanced within one conversation.
std::vector<Conversation> build_phase1_corpus(int count, uint64_t seed,
                                              const lm::Vocabulary& v,
                                              const std::vector<int>& concept_pool);

// Concept-disjoint pools; eval gets eval_count concepts of the full grid.
struct SplitPools {
  std::vector<int> train, eval;
};
SplitPools split_concepts(uint64_t seed, int eval_count);

// The per-type conversation corpus over disjoint pools.
struct X2XDataset {
  std::vector<Conversation> train, eval;  // grouped by type, types in enum order
  SplitPools pools;
  uint64_t seed = 0;
};
X2XDataset build_x2x_dataset(int train_per_type, int eval_per_type, uint64_t seed,
                             const lm::Vocabulary& v);

// One epoch of weighted sampling without replacement across sources; entries
// are (source index, item index). Same seed, same order.
std::vector<std::pair<int, int>> blend_epoch(const std::vector<int>& source_sizes,
                                             const std::vector<double>& weights,
                                             uint64_t seed, int epoch);

// Line-delimited serialization and the dataset manifest.
void save_conversations(const std::string& path, const std::vector<Conversation>& convs);
std::vector<Conversation> load_conversations(const std::string& path);
void save_interleaved(const std::string& path, const std::vector<InterleavedSequence>& seqs);
std::vector<InterleavedSequence> load_interleaved(const std::string& path);

struct DatasetManifest {
  uint64_t split_seed = 0;
  int templates_version = 1;
  std::map<std::string, int> train_counts, eval_counts;  // per X2X type
  int phase1_count = 0;
  int interleaved_count = 0;
};
void save_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& path);

}  // namespace am::data
