#include "anymodal/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "anymodal/checkpoint.hpp"
#include "anymodal/eval.hpp"
#include "anymodal/train.hpp"
#include "anymodal/world.hpp"
#include "json.hpp"

namespace am::cli {

namespace fs = std::filesystem;
using cfg::Config;
using nn::op_error;
using nn::Tensor;

namespace {

void check_jobs(const Config& c) {
  if (c.geti("jobs") < 1) op_error("cli", "jobs must be >= 1");
}

// Full merged view into the run directory, so the run is reproducible
// without the original invocation.
void snapshot(const Config& c, const std::string& dir) {
  fs::create_directories(dir);
  c.save(dir + "/run_config.txt");
}

void require_artifact(const std::string& path, const std::string& hint) {
  if (!fs::exists(path))
    op_error("cli", "missing " + path + "; " + hint);
}

data::SplitPools load_pools(const Config& c) {
  std::string path = c.str("data.dir") + "/pools.json";
  require_artifact(path, "run synth first");
  std::ifstream f(path);
  nlohmann::json j;
  f >> j;
  data::SplitPools pools;
  pools.train = j.at("train").get<std::vector<int>>();
  pools.eval = j.at("eval").get<std::vector<int>>();
  return pools;
}

std::vector<data::Conversation> load_convs(const Config& c, const std::string& file) {
  std::string path = c.str("data.dir") + "/" + file;
  require_artifact(path, "run synth first");
  return data::load_conversations(path);
}

std::unique_ptr<model::AnyToAnyModel> load_model(const Config& c, const std::string& ckpt_path) {
  auto m = model::AnyToAnyModel::build(model_config(c));
  ckpt::load(ckpt_path, m->params, ckpt::LoadMode::Exact);
  m->encoders.frozen = true;
  return m;
}

std::vector<data::X2XType> parse_types(const Config& c, const std::string& key) {
  std::vector<data::X2XType> out;
  for (const auto& name : c.str_list(key)) out.push_back(data::x2x_from_name(name));
  return out;
}

// Lineage records carry the variant a phase-3b run trained; evaluating a
// checkpoint under a different variant is a setup mistake, not a result.
void check_ckpt_variant(const std::string& ckpt_path, const std::string& variant) {
  fs::path lineage = fs::path(ckpt_path).parent_path() / "lineage.json";
  if (!fs::exists(lineage)) return;
  std::ifstream f(lineage.string());
  nlohmann::json j;
  f >> j;
  if (!j.contains("variant")) return;
  std::string got = j["variant"].get<std::string>();
  if (got != variant)
    op_error("cli", "checkpoint " + ckpt_path + " was trained for variant '" + got + "', not '" +
                        variant + "'");
}

const char* modality_word(Modality m) {
  switch (m) {
    case Modality::image: return "image";
    case Modality::video: return "video";
    case Modality::audio: return "audio";
    default: return "text";
  }
}

}  // namespace

model::ModelConfig model_config(const Config& c) {
  model::ModelConfig mc;
  mc.seed = c.getu("seed");
  mc.lm.d_model = c.geti("model.d_model");
  mc.lm.layers = c.geti("model.layers");
  mc.lm.heads = c.geti("model.heads");
  mc.lm.ctx = c.geti("model.ctx");
  mc.lm.mlp_mult = c.geti("model.mlp_mult");
  mc.d_cond = c.geti("model.d_cond");
  mc.lora_rank = c.geti("model.lora_rank");
  mc.diffusion_steps = c.geti("model.diffusion_steps");
  mc.veh_ch = c.geti("model.veh_ch");
  mc.enc_ch = c.int_list("model.enc_ch");
  mc.img_unet_ch = c.int_list("model.img_unet_ch");
  mc.vid_unet_ch = c.int_list("model.vid_unet_ch");
  mc.aud_unet_ch = c.int_list("model.aud_unet_ch");
  return mc;
}

std::string cmd_synth(const Config& c) {
  check_jobs(c);
  std::string dir = c.str("data.dir");
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!c.getb("force"))
      op_error("cmd_synth", "output directory " + dir + " is not empty (use --force to overwrite)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);

  uint64_t seed = c.getu("seed");
  lm::Vocabulary v = lm::Vocabulary::standard();
  data::X2XDataset ds = data::build_x2x_dataset(c.geti("data.x2x_train"), c.geti("data.x2x_eval"),
                                                seed_for(seed, "data/x2x"), v);
  std::vector<data::Conversation> phase1 =
      data::build_phase1_corpus(c.geti("data.phase1"), seed_for(seed, "data/phase1"), v,
                                ds.pools.train);
  int chunks = c.geti("data.clip_chunks");
  std::vector<data::InterleavedSequence> inter;
  int n_inter = c.geti("data.interleaved");
  for (int i = 0; i < n_inter; ++i) {
    std::vector<int> clip = data::sample_clip(seed_for(seed, "data/clip/" + std::to_string(i)),
                                              chunks);
    inter.push_back(data::build_interleaved(
        clip, chunks, seed_for(seed, "data/inter/" + std::to_string(i)), v));
  }

  data::save_conversations(dir + "/phase1.jsonl", phase1);
  data::save_interleaved(dir + "/interleaved.jsonl", inter);
  data::save_conversations(dir + "/x2x_train.jsonl", ds.train);
  data::save_conversations(dir + "/x2x_eval.jsonl", ds.eval);

  data::DatasetManifest man;
  man.split_seed = ds.seed;
  man.templates_version = 1;
  for (const auto& conv : ds.train) man.train_counts[conv.type]++;
  for (const auto& conv : ds.eval) man.eval_counts[conv.type]++;
  man.phase1_count = (int)phase1.size();
  man.interleaved_count = (int)inter.size();
  data::save_manifest(dir + "/manifest.json", man);

  nlohmann::json pools{{"seed", ds.seed}, {"train", ds.pools.train}, {"eval", ds.pools.eval}};
  std::ofstream pf(dir + "/pools.json");
  pf << pools.dump(2) << "\n";

  snapshot(c, dir);
  return dir;
}

std::string cmd_pretrain_encoders(const Config& c) {
  check_jobs(c);
  data::SplitPools pools = load_pools(c);
  std::string dir = c.str("out.root") + "/enc_pretrain";
  auto m = model::AnyToAnyModel::build(model_config(c));

  train::PretrainConfig pc;
  pc.steps = c.geti("enc.steps");
  pc.batch = c.geti("enc.batch");
  pc.lr = (float)c.getd("enc.lr");
  pc.log_every = c.geti("enc.log_every");
  pc.temperature = (float)c.getd("enc.temperature");
  pc.seed = seed_for(c.getu("seed"), "pretrain/enc");
  snapshot(c, dir);
  train::pretrain_encoders(*m, pools.train, pc, dir);
  return dir;
}

std::string cmd_pretrain_decoders(const Config& c) {
  check_jobs(c);
  data::SplitPools pools = load_pools(c);
  std::string parent = c.str("out.root") + "/enc_pretrain/ckpt_final.amck";
  require_artifact(parent, "run pretrain-encoders first");
  std::string dir = c.str("out.root") + "/dec_pretrain";
  auto m = load_model(c, parent);

  train::PretrainConfig pc;
  pc.steps = c.geti("dec.steps");
  pc.batch = c.geti("dec.batch");
  pc.lr = (float)c.getd("dec.lr");
  pc.log_every = c.geti("dec.log_every");
  pc.seed = seed_for(c.getu("seed"), "pretrain/dec");
  snapshot(c, dir);
  train::pretrain_decoders(*m, pools.train, pc, dir);
  return dir;
}

std::string cmd_train(const std::string& phase, const Config& c) {
  check_jobs(c);
  train::PhaseConfig pc = train::default_phase(phase);  // rejects unknown phases
  pc.seed = seed_for(c.getu("seed"), "train/phase" + phase);
  if (c.has("train.steps")) pc.steps = c.geti("train.steps");
  if (c.has("train.batch")) pc.batch = c.geti("train.batch");
  if (c.has("train.lr")) pc.lr = (float)c.getd("train.lr");
  if (c.has("train.warmup")) pc.warmup = c.geti("train.warmup");
  if (c.has("train.log_every")) pc.log_every = c.geti("train.log_every");
  if (c.has("train.ckpt_every")) pc.ckpt_every = c.geti("train.ckpt_every");
  pc.variant = c.str("train.variant");

  std::string root = c.str("out.root");
  std::string parent, hint;
  if (phase == "1") {
    parent = root + "/dec_pretrain/ckpt_final.amck";
    hint = "run pretrain-decoders first";
  } else if (phase == "2") {
    parent = root + "/phase1/ckpt_final.amck";
    hint = "run train --phase 1 first";
  } else if (phase == "3a") {
    parent = root + "/phase2/ckpt_final.amck";
    hint = "run train --phase 2 first";
  } else {
    parent = root + "/phase3a/ckpt_final.amck";
    hint = "run train --phase 3a first";
  }
  if (c.has("train.parent")) {
    parent = c.str("train.parent");
    hint = "the configured train.parent checkpoint does not exist";
  }
  require_artifact(parent, hint);

  std::string dir = root + "/phase" + phase;
  if (phase == "3b") dir += "_" + pc.variant;
  auto m = load_model(c, parent);
  std::string resume = c.str("train.resume");

  snapshot(c, dir);
  if (phase == "1") {
    train::run_phase1(*m, load_convs(c, "phase1.jsonl"), pc, dir, parent, resume);
  } else if (phase == "2") {
    std::string path = c.str("data.dir") + "/interleaved.jsonl";
    require_artifact(path, "run synth first");
    train::run_phase2(*m, data::load_interleaved(path), pc, dir, parent, resume);
  } else if (phase == "3a") {
    train::run_phase3a(*m, load_convs(c, "x2x_train.jsonl"), load_convs(c, "phase1.jsonl"), pc,
                       dir, parent, resume);
  } else {
    train::run_phase3b(*m, load_convs(c, "x2x_train.jsonl"), pc, dir, parent, resume);
  }
  return dir;
}

std::string cmd_eval(const Config& c) {
  check_jobs(c);
  std::string variant = c.str("eval.variant");
  eval::VariantSpec vs = eval::variant_from_name(variant, c.getd("eval.alpha"));
  std::string ckpt_path = c.has("eval.ckpt")
                              ? c.str("eval.ckpt")
                              : c.str("out.root") + "/phase3b_" + variant + "/ckpt_final.amck";
  require_artifact(ckpt_path, "train phase 3b for variant " + variant + " first");
  check_ckpt_variant(ckpt_path, variant);

  auto m = load_model(c, ckpt_path);
  std::vector<data::Conversation> eval_set = load_convs(c, "x2x_eval.jsonl");
  std::string man_path = c.str("data.dir") + "/manifest.json";
  require_artifact(man_path, "run synth first");
  data::DatasetManifest man = data::load_manifest(man_path);

  eval::EvalOptions opts;
  opts.seed = seed_for(c.getu("seed"), "eval");
  opts.max_new_tokens = c.geti("eval.max_new_tokens");
  if (c.has("eval.types")) opts.types = parse_types(c, "eval.types");

  eval::BenchmarkReport rep = eval::run_benchmark(*m, vs, eval_set, man, opts);

  std::string dir = c.str("out.root") + "/eval_" + variant;
  snapshot(c, dir);
  eval::write_report_csv(rep, dir + "/report.csv");
  eval::write_sample_records(rep, dir + "/samples.jsonl");
  std::ofstream tf(dir + "/table.txt");
  tf << eval::comparison_table({rep});
  return dir;
}

std::string cmd_sweep(const Config& c) {
  check_jobs(c);
  std::string ckpt_path = c.has("sweep.ckpt")
                              ? c.str("sweep.ckpt")
                              : c.str("out.root") + "/phase3b_veh-imgvid/ckpt_final.amck";
  require_artifact(ckpt_path, "train phase 3b for variant veh-imgvid first");

  auto m = load_model(c, ckpt_path);
  std::vector<data::Conversation> eval_set = load_convs(c, "x2x_eval.jsonl");
  std::string man_path = c.str("data.dir") + "/manifest.json";
  require_artifact(man_path, "run synth first");
  data::DatasetManifest man = data::load_manifest(man_path);

  eval::EvalOptions opts;
  opts.seed = seed_for(c.getu("seed"), "eval");
  opts.max_new_tokens = c.geti("eval.max_new_tokens");
  if (c.has("sweep.types")) opts.types = parse_types(c, "sweep.types");

  std::vector<eval::SweepRow> rows =
      eval::conditioning_sweep(*m, c.double_list("sweep.alphas"), eval_set, man, opts);

  std::string dir = c.str("out.root") + "/sweep";
  snapshot(c, dir);
  eval::write_sweep_csv(rows, dir + "/sweep.csv");
  return dir;
}

std::string cmd_generate(const Config& c) {
  check_jobs(c);
  if (!c.has("generate.prompt"))
    op_error("cmd_generate", "generate needs a prompt file (--prompt)");
  std::string prompt_path = c.str("generate.prompt");
  require_artifact(prompt_path, "point --prompt at a prompt file");

  std::string variant = c.str("generate.variant");
  eval::VariantSpec vs = eval::variant_from_name(variant, c.getd("generate.alpha"));
  std::string ckpt_path = c.has("generate.ckpt")
                              ? c.str("generate.ckpt")
                              : c.str("out.root") + "/phase3b_" + variant + "/ckpt_final.amck";
  require_artifact(ckpt_path, "train phase 3b for variant " + variant + " first");
  auto m = load_model(c, ckpt_path);

  // Prompt lines: "text <words...>" or "<image|video|audio> <concept index>".
  std::vector<data::ContentItem> items;
  std::ifstream pf(prompt_path);
  std::string line;
  int lineno = 0;
  while (std::getline(pf, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string head;
    if (!(ls >> head) || head[0] == '#') continue;
    std::string where = prompt_path + ":" + std::to_string(lineno);
    if (head == "text") {
      std::vector<std::string> words;
      std::string w;
      while (ls >> w) words.push_back(w);
      if (words.empty()) op_error("cmd_generate", where + ": text line without words");
      items.push_back({Modality::text, m->vocab.encode(words), -1});
    } else if (head == "image" || head == "video" || head == "audio") {
      int idx = -1;
      if (!(ls >> idx)) op_error("cmd_generate", where + ": expected a concept index");
      world::Concept::from_index(idx);  // range check
      Modality kind = head == "image"   ? Modality::image
                      : head == "video" ? Modality::video
                                        : Modality::audio;
      items.push_back({kind, {}, idx});
    } else {
      op_error("cmd_generate",
               where + ": lines start with text, image, video or audio, got '" + head + "'");
    }
  }
  if (items.empty()) op_error("cmd_generate", prompt_path + " holds no prompt items");

  eval::GenerationOutcome out = eval::generate_from_items(
      *m, items, vs, seed_for(c.getu("seed"), "generate"), c.geti("generate.max_new_tokens"));

  std::string dir = c.str("out.root") + "/generate";
  snapshot(c, dir);
  {
    std::ofstream tf(dir + "/transcript.txt");
    tf << out.transcript << "\n";
    if (out.decode.span_error) tf << "span error: " << out.decode.span_error_msg << "\n";
  }
  if (out.has_sample) {
    std::ofstream sf(dir + "/sample.txt");
    sf << modality_word(out.target) << "\nshape";
    for (int d : out.sample.shape) sf << ' ' << d;
    sf << "\n" << std::setprecision(8);
    for (int64_t i = 0; i < out.sample.size(); ++i)
      sf << out.sample.ptr()[i] << (i + 1 == out.sample.size() ? '\n' : ' ');
  }
  return dir;
}

}  // namespace am::cli
