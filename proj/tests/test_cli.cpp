#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "anymodal/commands.hpp"
#include "anymodal/data.hpp"
#include "doctest.h"

using namespace am;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const std::string& tag) {
  std::string d = "/tmp/anymodal_cli_" + tag + "_" + std::to_string(::getpid());
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
}

// Miniature model and corpus so pipeline commands finish in seconds.
cfg::Config tiny_config(const std::string& root) {
  cfg::Config c = cfg::Config::defaults();
  c.set("out.root", root);
  c.set("data.dir", root + "/data");
  c.set("data.phase1", "6");
  c.set("data.interleaved", "3");
  c.set("data.x2x_train", "2");
  c.set("data.x2x_eval", "1");
  c.set("model.d_model", "64");
  c.set("model.layers", "2");
  c.set("model.heads", "2");
  c.set("model.ctx", "256");
  c.set("model.mlp_mult", "2");
  c.set("model.d_cond", "16");
  c.set("model.veh_ch", "8");
  c.set("model.img_unet_ch", "8,10,12,14");
  c.set("model.vid_unet_ch", "6,8,10,12");
  c.set("model.aud_unet_ch", "6,8,10,12");
  c.set("enc.steps", "12");
  c.set("enc.batch", "4");
  c.set("enc.log_every", "4");
  c.set("dec.steps", "6");
  c.set("dec.batch", "2");
  c.set("dec.log_every", "2");
  c.set("eval.max_new_tokens", "8");
  return c;
}

}  // namespace

TEST_CASE("config layers defaults, file, env and overrides") {
  cfg::Config c = cfg::Config::defaults();
  CHECK(c.getu("seed") == 1);
  CHECK(c.str("out.root") == "runs");
  CHECK(c.geti("model.d_model") == 128);
  CHECK(c.getd("enc.temperature") == doctest::Approx(0.07));
  CHECK(c.int_list("model.enc_ch") == std::vector<int>{8, 16, 24, 32});
  CHECK(c.double_list("sweep.alphas") == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
  CHECK_FALSE(c.has("train.steps"));
  CHECK_FALSE(c.getb("force"));

  std::string dir = tmp_dir("config");
  spit(dir + "/a.cfg",
       "# comment\n"
       "\n"
       "seed = 9\n"
       "model.d_model=96\n"
       "  train.steps = 7  \n");
  c.load_file(dir + "/a.cfg");
  CHECK(c.getu("seed") == 9);
  CHECK(c.geti("model.d_model") == 96);
  CHECK(c.has("train.steps"));
  CHECK(c.geti("train.steps") == 7);

  c.merge_overrides({"train.lr=5e-4", "jobs=2"});
  CHECK(c.getd("train.lr") == doctest::Approx(5e-4));
  CHECK(c.geti("jobs") == 2);

  ::setenv("ANYMODAL_OUT_ROOT", "/tmp/elsewhere", 1);
  ::setenv("ANYMODAL_DATA_DIR", "/tmp/elsewhere/data", 1);
  c.apply_env();
  ::unsetenv("ANYMODAL_OUT_ROOT");
  ::unsetenv("ANYMODAL_DATA_DIR");
  CHECK(c.str("out.root") == "/tmp/elsewhere");
  CHECK(c.str("data.dir") == "/tmp/elsewhere/data");

  CHECK_THROWS_WITH_AS(c.set("trian.lr", "1"), doctest::Contains("unknown key"),
                       std::invalid_argument);
  spit(dir + "/bad.cfg", "no equals sign here\n");
  CHECK_THROWS_WITH_AS(c.load_file(dir + "/bad.cfg"), doctest::Contains("expected key = value"),
                       std::invalid_argument);
  spit(dir + "/unknown.cfg", "data.bogus = 1\n");
  CHECK_THROWS_WITH_AS(c.load_file(dir + "/unknown.cfg"), doctest::Contains("unknown key"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(c.load_file(dir + "/missing.cfg"), doctest::Contains("cannot open"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(c.merge_overrides({"notanassignment"}),
                       doctest::Contains("key=value"), std::invalid_argument);

  c.set("enc.steps", "abc");
  CHECK_THROWS_WITH_AS((void)c.geti("enc.steps"), doctest::Contains("not an integer"),
                       std::invalid_argument);
  c.set("force", "2");
  CHECK_THROWS_WITH_AS((void)c.getb("force"), doctest::Contains("not a boolean"),
                       std::invalid_argument);
  c.set("model.enc_ch", "8,x");
  CHECK_THROWS_WITH_AS((void)c.int_list("model.enc_ch"), doctest::Contains("not an integer"),
                       std::invalid_argument);

  cfg::Config d = cfg::Config::defaults();
  d.save(dir + "/snap.cfg");
  cfg::Config e = cfg::Config::defaults();
  e.set("seed", "777");
  e.load_file(dir + "/snap.cfg");
  CHECK(e.kv == d.kv);
}

TEST_CASE("model wiring comes from the model keys") {
  cfg::Config c = cfg::Config::defaults();
  model::ModelConfig mc = cli::model_config(c);
  CHECK(mc.lm.d_model == 128);
  CHECK(mc.lm.layers == 4);
  CHECK(mc.d_cond == 64);
  CHECK(mc.img_unet_ch == std::vector<int>{16, 24, 32, 40});

  c.set("model.d_model", "64");
  c.set("model.aud_unet_ch", "4,6,8,10");
  c.set("seed", "12");
  mc = cli::model_config(c);
  CHECK(mc.lm.d_model == 64);
  CHECK(mc.aud_unet_ch == std::vector<int>{4, 6, 8, 10});
  CHECK(mc.seed == 12);
}

TEST_CASE("synth writes a reproducible dataset directory") {
  std::string root = tmp_dir("synth");
  cfg::Config c = tiny_config(root);

  std::string dir = cli::cmd_synth(c);
  CHECK(dir == root + "/data");
  for (const char* f : {"phase1.jsonl", "interleaved.jsonl", "x2x_train.jsonl", "x2x_eval.jsonl",
                        "manifest.json", "pools.json", "run_config.txt"})
    CHECK(fs::exists(dir + "/" + f));

  data::DatasetManifest man = data::load_manifest(dir + "/manifest.json");
  CHECK(man.phase1_count == 6);
  CHECK(man.interleaved_count == 3);
  for (data::X2XType t : data::all_x2x()) {
    CHECK(man.train_counts.at(data::x2x_name(t)) == 2);
    CHECK(man.eval_counts.at(data::x2x_name(t)) == 1);
  }
  CHECK(data::load_conversations(dir + "/x2x_train.jsonl").size() == 12);
  CHECK(data::load_conversations(dir + "/x2x_eval.jsonl").size() == 6);

  CHECK_THROWS_WITH_AS(cli::cmd_synth(c), doctest::Contains("not empty"), std::invalid_argument);

  std::string man_a = slurp(dir + "/manifest.json");
  std::string eval_a = slurp(dir + "/x2x_eval.jsonl");
  std::string phase1_a = slurp(dir + "/phase1.jsonl");
  c.set("force", "1");
  cli::cmd_synth(c);
  CHECK(slurp(dir + "/manifest.json") == man_a);
  CHECK(slurp(dir + "/x2x_eval.jsonl") == eval_a);
  CHECK(slurp(dir + "/phase1.jsonl") == phase1_a);
}

TEST_CASE("commands name the missing upstream artifact") {
  std::string root = tmp_dir("lineage");
  cfg::Config c = tiny_config(root);

  CHECK_THROWS_WITH_AS(cli::cmd_pretrain_encoders(c), doctest::Contains("run synth first"),
                       std::invalid_argument);
  cli::cmd_synth(c);

  CHECK_THROWS_WITH_AS(cli::cmd_pretrain_decoders(c),
                       doctest::Contains((root + "/enc_pretrain/ckpt_final.amck").c_str()),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(cli::cmd_train("1", c),
                       doctest::Contains((root + "/dec_pretrain/ckpt_final.amck").c_str()),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(cli::cmd_train("2", c), doctest::Contains((root + "/phase1/ckpt_final.amck").c_str()),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(cli::cmd_train("3b", c),
                       doctest::Contains((root + "/phase3a/ckpt_final.amck").c_str()),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(cli::cmd_train("9", c), doctest::Contains("unknown phase"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(cli::cmd_eval(c), doctest::Contains((root + "/phase3b_ta/ckpt_final.amck").c_str()),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(cli::cmd_sweep(c),
                       doctest::Contains((root + "/phase3b_veh-imgvid/ckpt_final.amck").c_str()),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(cli::cmd_generate(c), doctest::Contains("prompt file"),
                       std::invalid_argument);

  c.set("jobs", "0");
  CHECK_THROWS_WITH_AS(cli::cmd_synth(c), doctest::Contains("jobs"), std::invalid_argument);
}

TEST_CASE("the pipeline runs end to end at miniature scale") {
  std::string root = tmp_dir("pipe");
  cfg::Config c = tiny_config(root);

  cli::cmd_synth(c);
  std::string man_before = slurp(root + "/data/manifest.json");
  std::string train_before = slurp(root + "/data/x2x_train.jsonl");

  std::string enc_dir = cli::cmd_pretrain_encoders(c);
  CHECK(fs::exists(enc_dir + "/ckpt_final.amck"));
  CHECK(fs::exists(enc_dir + "/run_config.txt"));

  std::string dec_dir = cli::cmd_pretrain_decoders(c);
  CHECK(fs::exists(dec_dir + "/ckpt_final.amck"));

  c.set("train.steps", "5");
  c.set("train.batch", "2");
  c.set("train.log_every", "2");
  std::string p1 = cli::cmd_train("1", c);
  CHECK(p1 == root + "/phase1");
  CHECK(fs::exists(p1 + "/ckpt_final.amck"));
  CHECK(fs::exists(p1 + "/loss.csv"));
  CHECK(slurp(p1 + "/loss.csv").rfind("step,component,value\n", 0) == 0);

  c.set("train.steps", "4");
  std::string p2 = cli::cmd_train("2", c);
  CHECK(fs::exists(p2 + "/ckpt_final.amck"));

  c.set("train.steps", "5");
  std::string p3a = cli::cmd_train("3a", c);
  CHECK(fs::exists(p3a + "/ckpt_final.amck"));

  c.set("train.steps", "4");
  std::string p3b_ta = cli::cmd_train("3b", c);
  CHECK(p3b_ta == root + "/phase3b_ta");
  CHECK(fs::exists(p3b_ta + "/ckpt_final.amck"));

  c.set("train.variant", "veh-imgvid");
  std::string p3b_viv = cli::cmd_train("3b", c);
  CHECK(p3b_viv == root + "/phase3b_veh-imgvid");
  CHECK(fs::exists(p3b_viv + "/ckpt_final.amck"));

  std::string ev = cli::cmd_eval(c);
  CHECK(ev == root + "/eval_ta");
  CHECK(slurp(ev + "/report.csv").rfind("variant,type,n,mean,fail_count\n", 0) == 0);
  CHECK(fs::exists(ev + "/samples.jsonl"));
  CHECK(fs::exists(ev + "/table.txt"));
  {
    std::ifstream sf(ev + "/samples.jsonl");
    std::string line;
    int n = 0;
    while (std::getline(sf, line)) ++n;
    CHECK(n == 6);
  }

  cfg::Config wrong = c;
  wrong.set("eval.variant", "veh-img");
  wrong.set("eval.ckpt", p3b_ta + "/ckpt_final.amck");
  CHECK_THROWS_WITH_AS(cli::cmd_eval(wrong), doctest::Contains("trained for variant 'ta'"),
                       std::invalid_argument);

  c.set("sweep.alphas", "0,1");
  std::string sw = cli::cmd_sweep(c);
  std::string sweep_csv = slurp(sw + "/sweep.csv");
  CHECK(sweep_csv.rfind("alpha,type,mean\n", 0) == 0);
  CHECK(std::count(sweep_csv.begin(), sweep_csv.end(), '\n') == 3);

  std::string prompt = root + "/prompt.txt";
  {
    std::ostringstream ps;
    ps << "video 12\ntext";
    for (const auto& w : data::instruction_words(data::X2XType::vid2img, 0)) ps << ' ' << w;
    ps << "\n";
    spit(prompt, ps.str());
  }
  c.set("generate.prompt", prompt);
  std::string gen = cli::cmd_generate(c);
  CHECK(gen == root + "/generate");
  CHECK(fs::exists(gen + "/transcript.txt"));
  CHECK_FALSE(slurp(gen + "/transcript.txt").empty());

  spit(root + "/bad_prompt.txt", "blob 3\n");
  cfg::Config bad = c;
  bad.set("generate.prompt", root + "/bad_prompt.txt");
  CHECK_THROWS_WITH_AS(cli::cmd_generate(bad), doctest::Contains("start with text"),
                       std::invalid_argument);
  spit(root + "/oov_prompt.txt", "text notavocabularyword\n");
  bad.set("generate.prompt", root + "/oov_prompt.txt");
  CHECK_THROWS_WITH_AS(cli::cmd_generate(bad), doctest::Contains("unknown word"),
                       std::invalid_argument);

  // Consumers never touch the dataset directory.
  CHECK(slurp(root + "/data/manifest.json") == man_before);
  CHECK(slurp(root + "/data/x2x_train.jsonl") == train_before);
}

TEST_CASE("the command binary reports errors through its exit status") {
  std::string bin = "../tools/anymodal";
  if (!fs::exists(bin)) {
    MESSAGE("tool binary not found next to the test dir; skipping");
    return;
  }
  std::string root = tmp_dir("bin");
  int ok = std::system((bin + " --help > /dev/null 2>&1").c_str());
  CHECK(WEXITSTATUS(ok) == 0);
  int fail = std::system(
      (bin + " --set data.dir=" + root + "/data train --phase 1 > /dev/null 2>&1").c_str());
  CHECK(WEXITSTATUS(fail) != 0);
}
