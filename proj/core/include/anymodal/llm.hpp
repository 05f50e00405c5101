#pragma once

// Vocabulary with modality generation tokens, the decoder-only transformer,
// input/output projections, sequence assembly and the generation-span state
// machine.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "anymodal/data.hpp"
#include "anymodal/layers.hpp"
#include "anymodal/modality.hpp"

namespace am::lm {

using nn::ParamStore;
using nn::Tensor;

// Id layout: [0, text_slots) text words, then the specials, then one
// contiguous run of generation tokens per modality.
struct Vocabulary {
  int text_slots = 0;
  std::vector<std::string> words;  // word i <-> id i; words.size() <= text_slots
  int bos = -1, eos = -1, user = -1, assistant = -1;
  int img_beg = -1, img_end = -1, vid_beg = -1, vid_end = -1, aud_beg = -1, aud_end = -1;
  int img_first = -1, vid_first = -1, aud_first = -1;
  int n_img = 0, n_vid = 0, n_aud = 0;
  int total = 0;

  // Caption-grammar words in 256 text slots, 4/8/4 generation tokens.
  static Vocabulary standard();
  // Arbitrary word list and generation-token counts (small vocabularies for
  // exhaustive span testing).
  static Vocabulary custom(std::vector<std::string> word_list, int text_slots, int n_img,
                           int n_vid, int n_aud);

  int size() const { return total; }
  int word_id(const std::string& w) const;  // unknown word -> error
  std::vector<int> encode(const std::vector<std::string>& ws) const;
  std::string token_name(int id) const;

  int begin_marker(Modality m) const;
  int end_marker(Modality m) const;
  int gen_first(Modality m) const;
  int gen_count(Modality m) const;
  bool is_gen(int id) const;
  Modality gen_modality(int id) const;
  int gen_index(int id) const;
  bool is_text(int id) const { return id >= 0 && id < text_slots; }
};

struct GenerationSpan {
  Modality modality = Modality::image;
  int start = 0, end = 0;  // [start, end) token positions
  Tensor hidden;           // (gen_count, d_model) when extracted with hidden states
};

// Non-throwing scanner core: walks the stream once; every maximal run of
// generation tokens must decompose into complete in-order sets. Returns false
// on a violation; when err is non-null it gets a message naming the first bad
// position. Kept exception-free so exhaustive enumeration stays fast.
bool scan_generation_spans(const Vocabulary& v, const std::vector<int>& tokens,
                           std::vector<GenerationSpan>* out, std::string* err);

std::vector<GenerationSpan> extract_generation_spans(const Vocabulary& v,
                                                     const std::vector<int>& tokens);
std::vector<GenerationSpan> extract_generation_spans(const Vocabulary& v,
                                                     const std::vector<int>& tokens,
                                                     const Tensor& hidden);

// Independent re-formulation used to cross-check the scanner: enumerate every
// position holding a modality's first generation token, keep the complete
// in-order candidates, and demand they tile all generation tokens exactly.
std::optional<std::vector<GenerationSpan>> brute_force_spans(const Vocabulary& v,
                                                             const std::vector<int>& tokens);

struct LMConfig {
  int d_model = 128;
  int layers = 4;
  int heads = 4;
  int ctx = 512;
  int mlp_mult = 4;
};

struct LMOut {
  Tensor hidden;  // (L, d_model)
  Tensor logits;  // (L, vocab)
};

// Decoder-only transformer with a tied embedding/output head.
struct TransformerLM {
  const Vocabulary* vocab = nullptr;
  LMConfig cfg;
  Tensor* tok_embed = nullptr;  // (V, d)
  Tensor* pos_embed = nullptr;  // (ctx, d)
  std::vector<nn::AttnBlockT<float>> blocks;
  Tensor *lnf_g = nullptr, *lnf_b = nullptr;

  TransformerLM() = default;
  TransformerLM(ParamStore& ps, const Vocabulary& v, LMConfig cfg, Rng& rng);

  void attach_lora(ParamStore& ps, int rank, Rng& rng, float scale_val);

  Tensor embed_tokens(const std::vector<int>& ids) const;
  LMOut forward(const Tensor& embeds) const;  // embeds (L, d); L <= ctx
};

// Where each assembled position came from.
struct PosTag {
  int token_id = -1;  // -1 for projected modality chunks
  bool is_chunk = false;
  Modality chunk_kind = Modality::text;
  int turn_idx = -1;  // -1 for BOS/EOS framing
  data::Turn::Role role = data::Turn::Role::user;
};

struct AssembledSequence {
  Tensor embeds;  // (L, d_model), before position embeddings
  std::vector<PosTag> tags;
  std::vector<int> token_ids() const {
    std::vector<int> ids;
    ids.reserve(tags.size());
    for (const auto& t : tags) ids.push_back(t.token_id);
    return ids;
  }
};

struct InputProjections {
  nn::LinearT<float> image, video, audio;

  InputProjections() = default;
  InputProjections(ParamStore& ps, int d_joint, int d_model, Rng& rng);
  const nn::LinearT<float>& of(Modality m) const;
};

// N_m learned queries cross-attending over the span hiddens, two blocks, then
// a head down to the conditioning width.
struct OutputProjection {
  Modality modality = Modality::image;
  Tensor* queries = nullptr;  // (N_m, d_model)
  nn::CrossBlockT<float> b1, b2;
  nn::LinearT<float> head;  // d_model -> d_cond
  int n_tokens = 0;

  OutputProjection() = default;
  OutputProjection(ParamStore& ps, const std::string& prefix, Modality m, int n_tokens,
                   int d_model, int heads, int d_cond, Rng& rng);

  Tensor forward(const Tensor& span_hidden) const;  // (N_m, d_cond)
};

struct OutputProjections {
  OutputProjection image, video, audio;

  OutputProjections() = default;
  OutputProjections(ParamStore& ps, const Vocabulary& v, int d_model, int heads,
                    int d_cond, Rng& rng);
  const OutputProjection& of(Modality m) const;
};

// (N_m, d_cond) controller embedding from a span's hidden vectors; the span
// modality must match the projection's.
Tensor project_controller(const GenerationSpan& span, const OutputProjection& proj);

// Joint-embedding provider for non-text content items, usually the frozen
// encoder family; injectable for tests.
using EmbedFn = std::function<Tensor(Modality, int concept_idx)>;  // -> (d_joint)

// Text tokens embed through the vocabulary table; user-turn modality items
// contribute begin marker, one projected vector, end marker; assistant-turn
// modality items contribute their modality's full generation-token run.
AssembledSequence assemble_sequence(const data::Conversation& conv, const Vocabulary& v,
                                    const TransformerLM& lm, const InputProjections& pin,
                                    const EmbedFn& embed);

// Role-free variant for interleaved item streams: BOS, the items in order
// (samples as begin marker / projected chunk / end marker), EOS.
AssembledSequence assemble_stream(const std::vector<data::ContentItem>& items,
                                  const Vocabulary& v, const TransformerLM& lm,
                                  const InputProjections& pin, const EmbedFn& embed);

struct SamplerSpec {
  float temperature = 0.0f;  // 0 = greedy
  uint64_t seed = 0;
};

struct GenerateResult {
  std::vector<int> tokens;  // generated ids, EOS included when produced
  std::vector<GenerationSpan> spans;
  bool span_error = false;  // stream held a malformed generation run
  std::string span_error_msg;
};

// Autoregressive decode from an assembled prompt; spans are extracted from
// the generated suffix with hiddens from one full forward pass.
GenerateResult generate(const TransformerLM& lm, const AssembledSequence& prompt,
                        const SamplerSpec& sampler, int max_new_tokens);

}  // namespace am::lm
