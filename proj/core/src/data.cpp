#include "anymodal/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "anymodal/llm.hpp"
#include "anymodal/rng.hpp"
#include "anymodal/world.hpp"
#include "json.hpp"

namespace am::data {

using nlohmann::json;

const std::array<X2XType, kX2XCount>& all_x2x() {
  static const std::array<X2XType, kX2XCount> kAll = {
      X2XType::vid2img, X2XType::vid2vid, X2XType::img2vid,
      X2XType::vid2aud, X2XType::aud2vid, X2XType::imgaud2vid};
  return kAll;
}

const char* x2x_name(X2XType t) {
  switch (t) {
    case X2XType::vid2img: return "VID2IMG";
    case X2XType::vid2vid: return "VID2VID";
    case X2XType::img2vid: return "IMG2VID";
    case X2XType::vid2aud: return "VID2AUD";
    case X2XType::aud2vid: return "AUD2VID";
    case X2XType::imgaud2vid: return "IMGAUD2VID";
  }
  nn::op_error("x2x", "bad conversation type value");
}

X2XType x2x_from_name(const std::string& name) {
  for (X2XType t : all_x2x())
    if (name == x2x_name(t)) return t;
  nn::op_error("x2x", "unknown conversation type '" + name + "'");
}

std::vector<Modality> x2x_inputs(X2XType t) {
  switch (t) {
    case X2XType::vid2img:
    case X2XType::vid2vid:
    case X2XType::vid2aud: return {Modality::video};
    case X2XType::img2vid: return {Modality::image};
    case X2XType::aud2vid: return {Modality::audio};
    case X2XType::imgaud2vid: return {Modality::image, Modality::audio};
  }
  nn::op_error("x2x", "bad conversation type value");
}

Modality x2x_target(X2XType t) {
  switch (t) {
    case X2XType::vid2img: return Modality::image;
    case X2XType::vid2aud: return Modality::audio;
    default: return Modality::video;
  }
}

namespace {

using Words = std::vector<std::string>;

// the fixed benchmark sentence, article matched to the target kind
Words benchmark_phrase(Modality target) {
  Words w = {"please", "generate"};
  if (target == Modality::image) {
    w.insert(w.end(), {"an", "image"});
  } else if (target == Modality::video) {
    w.insert(w.end(), {"a", "video"});
  } else {
    w.insert(w.end(), {"audio"});
  }
  Words tail = {"similar", "to", "the", "semantics", "in", "the", "input", "."};
  w.insert(w.end(), tail.begin(), tail.end());
  return w;
}

const std::vector<Words>& templates_for(X2XType t) {
  static const std::vector<Words> vid2img = {
      benchmark_phrase(Modality::image),
      {"create", "an", "image", "matching", "this", "video", "."},
      {"turn", "the", "input", "video", "into", "an", "image", "."},
      {"draw", "an", "image", "with", "the", "same", "content", "as", "the", "video", "."}};
  static const std::vector<Words> vid2vid = {
      benchmark_phrase(Modality::video),
      {"create", "a", "new", "video", "matching", "this", "video", "."},
      {"produce", "a", "video", "with", "the", "same", "content", "as", "the", "input", "."},
      {"render", "another", "video", "like", "this", "one", "."}};
  static const std::vector<Words> img2vid = {
      benchmark_phrase(Modality::video),
      {"turn", "this", "image", "into", "a", "video", "."},
      {"create", "a", "video", "from", "the", "input", "image", "."},
      {"make", "a", "moving", "video", "of", "this", "image", "."}};
  static const std::vector<Words> vid2aud = {
      benchmark_phrase(Modality::audio),
      {"create", "a", "sound", "matching", "this", "video", "."},
      {"produce", "the", "audio", "track", "for", "this", "video", "."},
      {"turn", "the", "input", "video", "into", "audio", "."}};
  static const std::vector<Words> aud2vid = {
      benchmark_phrase(Modality::video),
      {"create", "a", "video", "matching", "this", "sound", "."},
      {"turn", "the", "input", "audio", "into", "a", "video", "."},
      {"render", "a", "video", "for", "this", "audio", "clip", "."}};
  static const std::vector<Words> imgaud2vid = {
      benchmark_phrase(Modality::video),
      {"combine", "the", "image", "and", "the", "audio", "into", "a", "video", "."},
      {"create", "a", "video", "matching", "this", "image", "and", "sound", "."},
      {"make", "a", "video", "from", "the", "input", "image", "and", "audio", "."}};
  switch (t) {
    case X2XType::vid2img: return vid2img;
    case X2XType::vid2vid: return vid2vid;
    case X2XType::img2vid: return img2vid;
    case X2XType::vid2aud: return vid2aud;
    case X2XType::aud2vid: return aud2vid;
    case X2XType::imgaud2vid: return imgaud2vid;
  }
  nn::op_error("x2x", "bad conversation type value");
}

}  // namespace

int instruction_template_count(X2XType t) {
  return static_cast<int>(templates_for(t).size());
}

std::vector<std::string> instruction_words(X2XType t, uint64_t template_seed) {
  const auto& ts = templates_for(t);
  return ts[static_cast<size_t>(template_seed % ts.size())];
}

std::vector<std::string> instruction_vocabulary() {
  std::set<std::string> uniq;
  for (X2XType t : all_x2x())
    for (const auto& tpl : templates_for(t))
      for (const auto& w : tpl) uniq.insert(w);
  return {uniq.begin(), uniq.end()};
}

Conversation build_x2x(X2XType t, int concept_idx, uint64_t template_seed,
                       const lm::Vocabulary& v) {
  if (concept_idx < 0 || concept_idx >= world::Concept::kCount)
    nn::op_error("x2x", "concept " + std::to_string(concept_idx) + " outside [0, " +
                            std::to_string(world::Concept::kCount) + ")");
  Conversation conv;
  conv.type = x2x_name(t);
  conv.concepts = {concept_idx};

  Turn user;
  user.role = Turn::Role::user;
  for (Modality m : x2x_inputs(t)) user.items.push_back(ContentItem::sample(m, concept_idx));
  user.items.push_back(ContentItem::text(v.encode(instruction_words(t, template_seed))));

  Turn assistant;
  assistant.role = Turn::Role::assistant;
  assistant.items.push_back(ContentItem::sample(x2x_target(t), concept_idx));

  conv.turns = {std::move(user), std::move(assistant)};
  return conv;
}

std::vector<int> sample_clip(uint64_t seed, int n) {
  if (n < 1) nn::op_error("clip", "need at least 1 chunk, got " + std::to_string(n));
  world::Concept base = world::sample_concept(seed_for(seed, "clip-base"));
  Rng rng(seed_for(seed, "clip-drift"));
  std::vector<int> out;
  int prev_m = -1, prev_t = -1;
  for (int i = 0; i < n; ++i) {
    int m = static_cast<int>(base.motion), tone = base.tone;
    if (i > 0) {
      do {
        m = static_cast<int>(rng.uniform_int(0, world::Concept::kMotions - 1));
        tone = static_cast<int>(rng.uniform_int(0, world::Concept::kTones - 1));
      } while (m == prev_m && tone == prev_t);
    }
    world::Concept c = base;
    c.motion = static_cast<world::Motion>(m);
    c.tone = tone;
    out.push_back(c.index());
    prev_m = m;
    prev_t = tone;
  }
  return out;
}

InterleavedSequence build_interleaved(const std::vector<int>& clip_concepts, int n,
                                      uint64_t template_seed, const lm::Vocabulary& v) {
  if (n < 1) nn::op_error("interleaved", "need at least 1 chunk, got " + std::to_string(n));
  if (static_cast<int>(clip_concepts.size()) < n)
    nn::op_error("interleaved", "clip has " + std::to_string(clip_concepts.size()) +
                                    " chunk concepts, need " + std::to_string(n));
  InterleavedSequence seq;
  for (int i = 0; i < n; ++i) {
    int c = clip_concepts[static_cast<size_t>(i)];
    seq.chunk_concepts.push_back(c);
    seq.items.push_back(ContentItem::sample(Modality::image, c));
    seq.items.push_back(ContentItem::sample(Modality::audio, c));
    seq.items.push_back(ContentItem::sample(Modality::video, c));
    seq.items.push_back(ContentItem::text(v.encode(world::caption_words(
        world::Concept::from_index(c), seed_for(template_seed, "chunk" + std::to_string(i))))));
  }
  return seq;
}

std::vector<Conversation> build_phase1_corpus(int count, uint64_t seed,
                                              const lm::Vocabulary& v,
                                              const std::vector<int>& concept_pool) {
  if (count <= 0) nn::op_error("phase1-corpus", "count must be positive");
  if (concept_pool.empty()) nn::op_error("phase1-corpus", "empty concept pool");
  static const Modality kMods[3] = {Modality::image, Modality::video, Modality::audio};
  std::vector<Conversation> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(seed_for(seed, "p1-" + std::to_string(i)));
    int c = concept_pool[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(concept_pool.size()) - 1))];
    Modality m = kMods[(i / 2) % 3];
    bool captioning = i % 2 == 0;
    std::vector<int> caption = v.encode(world::caption_words(
        world::Concept::from_index(c), rng.raw()()));

    Conversation conv;
    conv.type = captioning ? "caption" : "textgen";
    conv.concepts = {c};
    Turn user, assistant;
    user.role = Turn::Role::user;
    assistant.role = Turn::Role::assistant;
    if (captioning) {
      user.items.push_back(ContentItem::sample(m, c));
      assistant.items.push_back(ContentItem::text(std::move(caption)));
    } else {
      user.items.push_back(ContentItem::text(std::move(caption)));
      assistant.items.push_back(ContentItem::sample(m, c));
    }
    conv.turns = {std::move(user), std::move(assistant)};
    out.push_back(std::move(conv));
  }
  return out;
}

SplitPools split_concepts(uint64_t seed, int eval_count) {
  if (eval_count < 1 || eval_count >= world::Concept::kCount)
    nn::op_error("split", "eval pool size " + std::to_string(eval_count) +
                              " outside [1, " + std::to_string(world::Concept::kCount) + ")");
  std::vector<int> ids(world::Concept::kCount);
  for (int i = 0; i < world::Concept::kCount; ++i) ids[static_cast<size_t>(i)] = i;
  Rng rng(seed_for(seed, "split"));
  rng.shuffle(ids);
  SplitPools pools;
  pools.eval.assign(ids.begin(), ids.begin() + eval_count);
  pools.train.assign(ids.begin() + eval_count, ids.end());
  std::sort(pools.eval.begin(), pools.eval.end());
  std::sort(pools.train.begin(), pools.train.end());
  return pools;
}

X2XDataset build_x2x_dataset(int train_per_type, int eval_per_type, uint64_t seed,
                             const lm::Vocabulary& v) {
  if (train_per_type < 1 || eval_per_type < 1)
    nn::op_error("x2x-dataset", "per-type counts must be positive");
  X2XDataset ds;
  ds.seed = seed;
  ds.pools = split_concepts(seed, 256);
  for (X2XType t : all_x2x()) {
    std::string name = x2x_name(t);
    for (int i = 0; i < train_per_type; ++i) {
      Rng rng(seed_for(seed, name + "/train/" + std::to_string(i)));
      int c = ds.pools.train[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int>(ds.pools.train.size()) - 1))];
      ds.train.push_back(build_x2x(t, c, rng.raw()(), v));
    }
    for (int i = 0; i < eval_per_type; ++i) {
      Rng rng(seed_for(seed, name + "/eval/" + std::to_string(i)));
      int c = ds.pools.eval[static_cast<size_t>(
          rng.uniform_int(0, static_cast<int>(ds.pools.eval.size()) - 1))];
      ds.eval.push_back(build_x2x(t, c, rng.raw()(), v));
    }
  }
  return ds;
}

std::vector<std::pair<int, int>> blend_epoch(const std::vector<int>& source_sizes,
                                             const std::vector<double>& weights,
                                             uint64_t seed, int epoch) {
  if (source_sizes.empty()) nn::op_error("blend", "no sources");
  if (source_sizes.size() != weights.size())
    nn::op_error("blend", std::to_string(source_sizes.size()) + " sources vs " +
                              std::to_string(weights.size()) + " weights");
  for (double w : weights)
    if (!(w > 0.0)) nn::op_error("blend", "weights must be positive");

  // exponential race: item key -log(1-u)/w; ascending keys are a weighted
  // draw without replacement
  Rng rng(seed_for(seed, "blend-epoch" + std::to_string(epoch)));
  struct Slot {
    double key;
    int src, idx;
  };
  std::vector<Slot> slots;
  for (size_t s = 0; s < source_sizes.size(); ++s) {
    if (source_sizes[s] < 0) nn::op_error("blend", "negative source size");
    for (int i = 0; i < source_sizes[s]; ++i) {
      double u = rng.uniform();
      slots.push_back({-std::log(1.0 - u) / weights[s], static_cast<int>(s), i});
    }
  }
  std::stable_sort(slots.begin(), slots.end(),
                   [](const Slot& a, const Slot& b) { return a.key < b.key; });
  std::vector<std::pair<int, int>> out;
  out.reserve(slots.size());
  for (const Slot& s : slots) out.emplace_back(s.src, s.idx);
  return out;
}

namespace {

json item_to_json(const ContentItem& it) {
  json j;
  j["kind"] = modality_name(it.kind);
  if (it.kind == Modality::text)
    j["tokens"] = it.tokens;
  else
    j["concept"] = it.concept_idx;
  return j;
}

ContentItem item_from_json(const json& j) {
  Modality m = modality_from_name(j.at("kind").get<std::string>());
  if (m == Modality::text) return ContentItem::text(j.at("tokens").get<std::vector<int>>());
  return ContentItem::sample(m, j.at("concept").get<int>());
}

}  // namespace

void save_conversations(const std::string& path, const std::vector<Conversation>& convs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) nn::op_error("dataset", "cannot open " + path + " for writing");
  for (const auto& conv : convs) {
    json j;
    j["type"] = conv.type;
    j["concepts"] = conv.concepts;
    json turns = json::array();
    for (const auto& turn : conv.turns) {
      json jt;
      jt["role"] = turn.role == Turn::Role::user ? "user" : "assistant";
      json items = json::array();
      for (const auto& it : turn.items) items.push_back(item_to_json(it));
      jt["items"] = std::move(items);
      turns.push_back(std::move(jt));
    }
    j["turns"] = std::move(turns);
    out << j.dump() << "\n";
  }
  if (!out) nn::op_error("dataset", "failed writing " + path);
}

std::vector<Conversation> load_conversations(const std::string& path) {
  std::ifstream in(path);
  if (!in) nn::op_error("dataset", "cannot open " + path);
  std::vector<Conversation> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    Conversation conv;
    conv.type = j.at("type").get<std::string>();
    conv.concepts = j.at("concepts").get<std::vector<int>>();
    for (const auto& jt : j.at("turns")) {
      Turn turn;
      std::string role = jt.at("role").get<std::string>();
      if (role == "user")
        turn.role = Turn::Role::user;
      else if (role == "assistant")
        turn.role = Turn::Role::assistant;
      else
        nn::op_error("dataset", "unknown role '" + role + "' in " + path);
      for (const auto& ji : jt.at("items")) turn.items.push_back(item_from_json(ji));
      conv.turns.push_back(std::move(turn));
    }
    out.push_back(std::move(conv));
  }
  return out;
}

void save_interleaved(const std::string& path, const std::vector<InterleavedSequence>& seqs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) nn::op_error("dataset", "cannot open " + path + " for writing");
  for (const auto& seq : seqs) {
    json j;
    j["chunk_concepts"] = seq.chunk_concepts;
    json items = json::array();
    for (const auto& it : seq.items) items.push_back(item_to_json(it));
    j["items"] = std::move(items);
    out << j.dump() << "\n";
  }
  if (!out) nn::op_error("dataset", "failed writing " + path);
}

std::vector<InterleavedSequence> load_interleaved(const std::string& path) {
  std::ifstream in(path);
  if (!in) nn::op_error("dataset", "cannot open " + path);
  std::vector<InterleavedSequence> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    InterleavedSequence seq;
    seq.chunk_concepts = j.at("chunk_concepts").get<std::vector<int>>();
    for (const auto& ji : j.at("items")) seq.items.push_back(item_from_json(ji));
    out.push_back(std::move(seq));
  }
  return out;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
  json j;
  j["split_seed"] = m.split_seed;
  j["templates_version"] = m.templates_version;
  j["train_counts"] = m.train_counts;
  j["eval_counts"] = m.eval_counts;
  j["phase1_count"] = m.phase1_count;
  j["interleaved_count"] = m.interleaved_count;
  std::ofstream out(path, std::ios::trunc);
  if (!out) nn::op_error("dataset", "cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
  if (!out) nn::op_error("dataset", "failed writing " + path);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) nn::op_error("dataset", "cannot open " + path);
  json j = json::parse(in);
  DatasetManifest m;
  m.split_seed = j.at("split_seed").get<uint64_t>();
  m.templates_version = j.at("templates_version").get<int>();
  m.train_counts = j.at("train_counts").get<std::map<std::string, int>>();
  m.eval_counts = j.at("eval_counts").get<std::map<std::string, int>>();
  m.phase1_count = j.at("phase1_count").get<int>();
  m.interleaved_count = j.at("interleaved_count").get<int>();
  return m;
}

}  // namespace am::data
