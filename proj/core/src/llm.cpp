#include "anymodal/llm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "anymodal/world.hpp"

namespace am::lm {

using namespace nn;

namespace {

Vocabulary layout(std::vector<std::string> word_list, int text_slots, int n_img, int n_vid,
                  int n_aud) {
  if (n_img < 1 || n_vid < 1 || n_aud < 1)
    op_error("vocabulary", "generation-token counts must be positive");
  if (static_cast<int>(word_list.size()) > text_slots)
    op_error("vocabulary", std::to_string(word_list.size()) + " words exceed " +
                               std::to_string(text_slots) + " text slots");
  for (size_t i = 0; i < word_list.size(); ++i)
    for (size_t j = i + 1; j < word_list.size(); ++j)
      if (word_list[i] == word_list[j])
        op_error("vocabulary", "duplicate word '" + word_list[i] + "'");

  Vocabulary v;
  v.text_slots = text_slots;
  v.words = std::move(word_list);
  v.n_img = n_img;
  v.n_vid = n_vid;
  v.n_aud = n_aud;
  int next = text_slots;
  v.bos = next++;
  v.eos = next++;
  v.user = next++;
  v.assistant = next++;
  v.img_beg = next++;
  v.img_end = next++;
  v.vid_beg = next++;
  v.vid_end = next++;
  v.aud_beg = next++;
  v.aud_end = next++;
  v.img_first = next;
  next += n_img;
  v.vid_first = next;
  next += n_vid;
  v.aud_first = next;
  next += n_aud;
  v.total = next;
  return v;
}

}  // namespace

Vocabulary Vocabulary::standard() {
  std::vector<std::string> words = world::caption_vocabulary();
  for (const auto& w : data::instruction_vocabulary()) words.push_back(w);
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  return layout(std::move(words), 256, 4, 8, 4);
}

Vocabulary Vocabulary::custom(std::vector<std::string> word_list, int text_slots, int n_img,
                              int n_vid, int n_aud) {
  return layout(std::move(word_list), text_slots, n_img, n_vid, n_aud);
}

int Vocabulary::word_id(const std::string& w) const {
  for (size_t i = 0; i < words.size(); ++i)
    if (words[i] == w) return static_cast<int>(i);
  op_error("vocabulary", "unknown word '" + w + "'");
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& ws) const {
  std::vector<int> ids;
  ids.reserve(ws.size());
  for (const auto& w : ws) ids.push_back(word_id(w));
  return ids;
}

std::string Vocabulary::token_name(int id) const {
  if (id < 0 || id >= total)
    op_error("vocabulary", "token id " + std::to_string(id) + " outside [0, " +
                               std::to_string(total) + ")");
  if (id < text_slots) {
    if (id < static_cast<int>(words.size())) return words[id];
    return "txt" + std::to_string(id);
  }
  if (id == bos) return "<bos>";
  if (id == eos) return "<eos>";
  if (id == user) return "<user>";
  if (id == assistant) return "<assistant>";
  if (id == img_beg) return "<img>";
  if (id == img_end) return "</img>";
  if (id == vid_beg) return "<vid>";
  if (id == vid_end) return "</vid>";
  if (id == aud_beg) return "<aud>";
  if (id == aud_end) return "</aud>";
  if (id >= img_first && id < img_first + n_img)
    return "[IMG_" + std::to_string(id - img_first) + "]";
  if (id >= vid_first && id < vid_first + n_vid)
    return "[VID_" + std::to_string(id - vid_first) + "]";
  return "[AUD_" + std::to_string(id - aud_first) + "]";
}

int Vocabulary::begin_marker(Modality m) const {
  switch (m) {
    case Modality::image: return img_beg;
    case Modality::video: return vid_beg;
    case Modality::audio: return aud_beg;
    default: op_error("vocabulary", "no content marker for modality text");
  }
}

int Vocabulary::end_marker(Modality m) const {
  switch (m) {
    case Modality::image: return img_end;
    case Modality::video: return vid_end;
    case Modality::audio: return aud_end;
    default: op_error("vocabulary", "no content marker for modality text");
  }
}

int Vocabulary::gen_first(Modality m) const {
  switch (m) {
    case Modality::image: return img_first;
    case Modality::video: return vid_first;
    case Modality::audio: return aud_first;
    default: op_error("vocabulary", "no generation tokens for modality text");
  }
}

int Vocabulary::gen_count(Modality m) const {
  switch (m) {
    case Modality::image: return n_img;
    case Modality::video: return n_vid;
    case Modality::audio: return n_aud;
    default: op_error("vocabulary", "no generation tokens for modality text");
  }
}

bool Vocabulary::is_gen(int id) const { return id >= img_first && id < total; }

Modality Vocabulary::gen_modality(int id) const {
  if (!is_gen(id))
    op_error("vocabulary", "token id " + std::to_string(id) + " is not a generation token");
  if (id < vid_first) return Modality::image;
  if (id < aud_first) return Modality::video;
  return Modality::audio;
}

int Vocabulary::gen_index(int id) const { return id - gen_first(gen_modality(id)); }

bool scan_generation_spans(const Vocabulary& v, const std::vector<int>& tokens,
                           std::vector<GenerationSpan>* out, std::string* err) {
  const int n = static_cast<int>(tokens.size());
  int i = 0;
  while (i < n) {
    if (!v.is_gen(tokens[i])) {
      ++i;
      continue;
    }
    Modality m = v.gen_modality(tokens[i]);
    int first = v.gen_first(m);
    int cnt = v.gen_count(m);
    int start = i;
    for (int j = 0; j < cnt; ++j, ++i) {
      if (i >= n || tokens[i] != first + j) {
        if (err) {
          if (i >= n || !v.is_gen(tokens[i]))
            *err = "incomplete " + std::string(modality_name(m)) +
                   " generation run at position " + std::to_string(i) + ": expected " +
                   v.token_name(first + j);
          else
            *err = "out-of-order generation token at position " + std::to_string(i) +
                   ": expected " + v.token_name(first + j) + ", got " +
                   v.token_name(tokens[i]);
        }
        return false;
      }
    }
    if (out) out->push_back(GenerationSpan{m, start, i, Tensor{}});
  }
  return true;
}

std::vector<GenerationSpan> extract_generation_spans(const Vocabulary& v,
                                                     const std::vector<int>& tokens) {
  std::vector<GenerationSpan> spans;
  std::string err;
  if (!scan_generation_spans(v, tokens, &spans, &err))
    op_error("extract_generation_spans", err);
  return spans;
}

std::vector<GenerationSpan> extract_generation_spans(const Vocabulary& v,
                                                     const std::vector<int>& tokens,
                                                     const Tensor& hidden) {
  if (hidden.rank() != 2 || hidden.shape[0] != static_cast<int>(tokens.size()))
    op_error("extract_generation_spans",
             "hidden " + shape_str(hidden.shape) + " does not align with " +
                 std::to_string(tokens.size()) + " tokens");
  std::vector<GenerationSpan> spans = extract_generation_spans(v, tokens);
  for (auto& s : spans) {
    std::vector<int> rows(static_cast<size_t>(s.end - s.start));
    std::iota(rows.begin(), rows.end(), s.start);
    s.hidden = gather_rows(hidden, rows);
  }
  return spans;
}

std::optional<std::vector<GenerationSpan>> brute_force_spans(const Vocabulary& v,
                                                             const std::vector<int>& tokens) {
  // Candidate = any position where a modality's complete in-order token set
  // sits verbatim. Candidates can never overlap (a set's first token cannot
  // occur inside another set), so a valid parse exists iff the candidates
  // cover every generation token.
  const int n = static_cast<int>(tokens.size());
  std::vector<GenerationSpan> spans;
  std::vector<char> covered(static_cast<size_t>(n), 0);
  for (int p = 0; p < n; ++p) {
    if (!v.is_gen(tokens[p])) continue;
    Modality m = v.gen_modality(tokens[p]);
    if (v.gen_index(tokens[p]) != 0) continue;
    int first = v.gen_first(m);
    int cnt = v.gen_count(m);
    if (p + cnt > n) continue;
    bool match = true;
    for (int j = 1; j < cnt; ++j)
      if (tokens[p + j] != first + j) {
        match = false;
        break;
      }
    if (!match) continue;
    spans.push_back(GenerationSpan{m, p, p + cnt, Tensor{}});
    for (int j = 0; j < cnt; ++j) covered[static_cast<size_t>(p + j)] = 1;
  }
  for (int p = 0; p < n; ++p)
    if (v.is_gen(tokens[p]) && !covered[static_cast<size_t>(p)]) return std::nullopt;
  return spans;
}

TransformerLM::TransformerLM(ParamStore& ps, const Vocabulary& v, LMConfig cfg_, Rng& rng)
    : vocab(&v), cfg(cfg_) {
  tok_embed = nn::make_param_normal(ps, "lm/tok_embed", {v.total, cfg.d_model}, rng, 0.02);
  pos_embed = nn::make_param_normal(ps, "lm/pos_embed", {cfg.ctx, cfg.d_model}, rng, 0.01);
  blocks.reserve(static_cast<size_t>(cfg.layers));
  for (int i = 0; i < cfg.layers; ++i)
    blocks.emplace_back(ps, "lm/blk" + std::to_string(i), cfg.d_model, cfg.heads,
                        cfg.mlp_mult, rng);
  lnf_g = nn::make_param_full(ps, "lm/lnf/g", {cfg.d_model}, 1.0f);
  lnf_b = nn::make_param(ps, "lm/lnf/b", Shape{cfg.d_model});
}

void TransformerLM::attach_lora(ParamStore& ps, int rank, Rng& rng, float scale_val) {
  for (size_t i = 0; i < blocks.size(); ++i)
    blocks[i].attach_lora(ps, "lora/lm/blk" + std::to_string(i), rank, rng, scale_val);
}

Tensor TransformerLM::embed_tokens(const std::vector<int>& ids) const {
  return gather_rows(*tok_embed, ids);
}

LMOut TransformerLM::forward(const Tensor& embeds) const {
  if (embeds.rank() != 2 || embeds.shape[1] != cfg.d_model)
    op_error("lm_forward", "expected (len, " + std::to_string(cfg.d_model) + "), got " +
                               shape_str(embeds.shape));
  int len = embeds.shape[0];
  if (len > cfg.ctx)
    op_error("lm_forward", "sequence length " + std::to_string(len) +
                               " exceeds context limit " + std::to_string(cfg.ctx));
  std::vector<int> positions(static_cast<size_t>(len));
  std::iota(positions.begin(), positions.end(), 0);
  Tensor x = add(embeds, gather_rows(*pos_embed, positions));
  for (const auto& blk : blocks) x = blk.forward(x, /*causal=*/true);
  Tensor h = layer_norm(x, *lnf_g, *lnf_b);
  Tensor logits = matmul(h, permute(*tok_embed, {1, 0}));  // tied head
  return LMOut{h, logits};
}

InputProjections::InputProjections(ParamStore& ps, int d_joint, int d_model, Rng& rng) {
  image = nn::LinearT<float>(ps, "proj_in/image", d_joint, d_model, rng);
  video = nn::LinearT<float>(ps, "proj_in/video", d_joint, d_model, rng);
  audio = nn::LinearT<float>(ps, "proj_in/audio", d_joint, d_model, rng);
}

const nn::LinearT<float>& InputProjections::of(Modality m) const {
  switch (m) {
    case Modality::image: return image;
    case Modality::video: return video;
    case Modality::audio: return audio;
    default: op_error("input_projection", "no projection for modality text");
  }
}

OutputProjection::OutputProjection(ParamStore& ps, const std::string& prefix, Modality m,
                                   int n_tokens_, int d_model, int heads, int d_cond,
                                   Rng& rng)
    : modality(m), n_tokens(n_tokens_) {
  queries = nn::make_param_normal(ps, prefix + "/queries", {n_tokens_, d_model}, rng, 0.02);
  b1 = nn::CrossBlockT<float>(ps, prefix + "/b1", d_model, heads, 4, rng);
  b2 = nn::CrossBlockT<float>(ps, prefix + "/b2", d_model, heads, 4, rng);
  head = nn::LinearT<float>(ps, prefix + "/head", d_model, d_cond, rng);
}

Tensor OutputProjection::forward(const Tensor& span_hidden) const {
  if (span_hidden.rank() != 2 || span_hidden.shape[0] != n_tokens)
    op_error("output_projection", "expected " + std::to_string(n_tokens) +
                                      " hidden vectors, got " + shape_str(span_hidden.shape));
  Tensor q = b1.forward(*queries, span_hidden);
  q = b2.forward(q, span_hidden);
  return head.forward(q);
}

OutputProjections::OutputProjections(ParamStore& ps, const Vocabulary& v, int d_model,
                                     int heads, int d_cond, Rng& rng) {
  image = OutputProjection(ps, "proj_out/image", Modality::image, v.n_img, d_model, heads,
                           d_cond, rng);
  video = OutputProjection(ps, "proj_out/video", Modality::video, v.n_vid, d_model, heads,
                           d_cond, rng);
  audio = OutputProjection(ps, "proj_out/audio", Modality::audio, v.n_aud, d_model, heads,
                           d_cond, rng);
}

const OutputProjection& OutputProjections::of(Modality m) const {
  switch (m) {
    case Modality::image: return image;
    case Modality::video: return video;
    case Modality::audio: return audio;
    default: op_error("output_projection", "no projection for modality text");
  }
}

Tensor project_controller(const GenerationSpan& span, const OutputProjection& proj) {
  if (span.modality != proj.modality)
    op_error("project_controller", std::string("span modality ") +
                                       modality_name(span.modality) +
                                       " does not match projection modality " +
                                       modality_name(proj.modality));
  if (span.hidden.size() == 0)
    op_error("project_controller", "span carries no hidden vectors");
  return proj.forward(span.hidden);
}

AssembledSequence assemble_sequence(const data::Conversation& conv, const Vocabulary& v,
                                    const TransformerLM& lm, const InputProjections& pin,
                                    const EmbedFn& embed) {
  if (conv.turns.empty()) op_error("assemble_sequence", "empty conversation");

  std::vector<Tensor> pieces;
  std::vector<PosTag> tags;
  std::vector<int> pending;
  auto flush = [&] {
    if (!pending.empty()) {
      pieces.push_back(lm.embed_tokens(pending));
      pending.clear();
    }
  };
  auto push_token = [&](int id, int turn_idx, data::Turn::Role role) {
    pending.push_back(id);
    tags.push_back(PosTag{id, false, Modality::text, turn_idx, role});
  };

  push_token(v.bos, -1, data::Turn::Role::user);
  for (size_t ti = 0; ti < conv.turns.size(); ++ti) {
    const data::Turn& turn = conv.turns[ti];
    int tidx = static_cast<int>(ti);
    push_token(turn.role == data::Turn::Role::user ? v.user : v.assistant, tidx, turn.role);
    for (const data::ContentItem& item : turn.items) {
      if (item.kind == Modality::text) {
        for (int id : item.tokens) push_token(id, tidx, turn.role);
      } else if (turn.role == data::Turn::Role::assistant) {
        int first = v.gen_first(item.kind);
        for (int j = 0; j < v.gen_count(item.kind); ++j)
          push_token(first + j, tidx, turn.role);
      } else {
        push_token(v.begin_marker(item.kind), tidx, turn.role);
        flush();
        Tensor e = embed(item.kind, item.concept_idx);
        if (e.rank() != 1)
          op_error("assemble_sequence",
                   "joint embedding must be rank-1, got " + shape_str(e.shape));
        Tensor row = pin.of(item.kind).forward(reshape(e, {1, e.shape[0]}));
        pieces.push_back(std::move(row));
        tags.push_back(PosTag{-1, true, item.kind, tidx, turn.role});
        push_token(v.end_marker(item.kind), tidx, turn.role);
      }
    }
  }
  push_token(v.eos, -1, data::Turn::Role::assistant);
  flush();

  AssembledSequence out;
  out.embeds = pieces.size() == 1 ? std::move(pieces[0]) : concat(pieces, 0);
  out.tags = std::move(tags);
  return out;
}

AssembledSequence assemble_stream(const std::vector<data::ContentItem>& items,
                                  const Vocabulary& v, const TransformerLM& lm,
                                  const InputProjections& pin, const EmbedFn& embed) {
  if (items.empty()) op_error("assemble_stream", "no items");

  std::vector<Tensor> pieces;
  std::vector<PosTag> tags;
  std::vector<int> pending;
  auto flush = [&] {
    if (!pending.empty()) {
      pieces.push_back(lm.embed_tokens(pending));
      pending.clear();
    }
  };
  auto push_token = [&](int id) {
    pending.push_back(id);
    tags.push_back(PosTag{id, false, Modality::text, 0, data::Turn::Role::user});
  };

  push_token(v.bos);
  for (const data::ContentItem& item : items) {
    if (item.kind == Modality::text) {
      for (int id : item.tokens) push_token(id);
    } else {
      push_token(v.begin_marker(item.kind));
      flush();
      Tensor e = embed(item.kind, item.concept_idx);
      if (e.rank() != 1)
        op_error("assemble_stream", "joint embedding must be rank-1, got " + shape_str(e.shape));
      pieces.push_back(pin.of(item.kind).forward(reshape(e, {1, e.shape[0]})));
      tags.push_back(PosTag{-1, true, item.kind, 0, data::Turn::Role::user});
      push_token(v.end_marker(item.kind));
    }
  }
  push_token(v.eos);
  flush();

  AssembledSequence out;
  out.embeds = pieces.size() == 1 ? std::move(pieces[0]) : concat(pieces, 0);
  out.tags = std::move(tags);
  return out;
}

namespace {

int sample_row(const float* logits, int n, float temperature, Rng& rng) {
  if (temperature <= 0.0f) {
    int best = 0;
    for (int i = 1; i < n; ++i)
      if (logits[i] > logits[best]) best = i;
    return best;
  }
  std::vector<double> p(static_cast<size_t>(n));
  double mx = -1e300;
  for (int i = 0; i < n; ++i) {
    p[static_cast<size_t>(i)] = logits[i] / temperature;
    mx = std::max(mx, p[static_cast<size_t>(i)]);
  }
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    p[static_cast<size_t>(i)] = std::exp(p[static_cast<size_t>(i)] - mx);
    z += p[static_cast<size_t>(i)];
  }
  double u = rng.uniform() * z;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += p[static_cast<size_t>(i)];
    if (u < acc) return i;
  }
  return n - 1;
}

}  // namespace

GenerateResult generate(const TransformerLM& lm, const AssembledSequence& prompt,
                        const SamplerSpec& sampler, int max_new_tokens) {
  NoGrad ng;
  const Vocabulary& v = *lm.vocab;
  Rng rng(sampler.seed);
  Tensor embeds = prompt.embeds;
  const int prompt_len = embeds.shape[0];

  GenerateResult res;
  for (int step = 0; step < max_new_tokens; ++step) {
    if (embeds.shape[0] >= lm.cfg.ctx) break;  // appending would overrun the context
    LMOut out = lm.forward(embeds);
    int last = embeds.shape[0] - 1;
    const float* row = out.logits.ptr() + static_cast<int64_t>(last) * v.total;
    int id = sample_row(row, v.total, sampler.temperature, rng);
    res.tokens.push_back(id);
    std::vector<Tensor> grown{embeds, lm.embed_tokens({id})};
    embeds = concat(grown, 0);
    if (id == v.eos) break;
  }

  if (!res.tokens.empty()) {
    LMOut full = lm.forward(embeds);
    std::vector<int> rows(res.tokens.size());
    std::iota(rows.begin(), rows.end(), prompt_len);
    Tensor suffix_hidden = gather_rows(full.hidden, rows);
    std::vector<GenerationSpan> spans;
    std::string err;
    if (scan_generation_spans(v, res.tokens, &spans, &err)) {
      for (auto& s : spans) {
        std::vector<int> span_rows(static_cast<size_t>(s.end - s.start));
        std::iota(span_rows.begin(), span_rows.end(), s.start);
        s.hidden = gather_rows(suffix_hidden, span_rows);
        s.start += prompt_len;
        s.end += prompt_len;
      }
      res.spans = std::move(spans);
    } else {
      res.span_error = true;
      res.span_error_msg = err;
    }
  }
  return res;
}

}  // namespace am::lm
