#include "anymodal/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "anymodal/tensor.hpp"

namespace am::cfg {

using nn::op_error;

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

}  // namespace

Config Config::defaults() {
  Config c;
  auto& m = c.kv;
  m["seed"] = "1";
  m["jobs"] = "1";
  m["force"] = "0";
  m["out.root"] = "runs";
  m["data.dir"] = "runs/data";

  m["data.phase1"] = "256";
  m["data.interleaved"] = "128";
  m["data.clip_chunks"] = "3";
  m["data.x2x_train"] = "200";
  m["data.x2x_eval"] = "100";

  m["model.d_model"] = "128";
  m["model.layers"] = "4";
  m["model.heads"] = "4";
  m["model.ctx"] = "512";
  m["model.mlp_mult"] = "4";
  m["model.d_cond"] = "64";
  m["model.lora_rank"] = "4";
  m["model.diffusion_steps"] = "50";
  m["model.veh_ch"] = "16";
  m["model.enc_ch"] = "8,16,24,32";
  m["model.img_unet_ch"] = "16,24,32,40";
  m["model.vid_unet_ch"] = "12,16,24,32";
  m["model.aud_unet_ch"] = "8,12,16,20";

  m["enc.steps"] = "2000";
  m["enc.batch"] = "16";
  m["enc.lr"] = "3e-4";
  m["enc.log_every"] = "50";
  m["enc.temperature"] = "0.07";

  m["dec.steps"] = "2000";
  m["dec.batch"] = "8";
  m["dec.lr"] = "3e-4";
  m["dec.log_every"] = "50";

  // Empty training keys fall back to the phase's stock recipe.
  m["train.steps"] = "";
  m["train.batch"] = "";
  m["train.lr"] = "";
  m["train.warmup"] = "";
  m["train.log_every"] = "";
  m["train.ckpt_every"] = "";
  m["train.variant"] = "ta";
  m["train.parent"] = "";
  m["train.resume"] = "";

  m["eval.variant"] = "ta";
  m["eval.alpha"] = "1.0";
  m["eval.max_new_tokens"] = "16";
  m["eval.types"] = "";
  m["eval.ckpt"] = "";

  m["sweep.alphas"] = "0,0.25,0.5,0.75,1.0";
  m["sweep.types"] = "VID2IMG";
  m["sweep.ckpt"] = "";

  m["generate.prompt"] = "";
  m["generate.variant"] = "ta";
  m["generate.alpha"] = "1.0";
  m["generate.max_new_tokens"] = "16";
  m["generate.ckpt"] = "";
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = kv.find(key);
  if (it == kv.end()) op_error("config", "unknown key '" + key + "'");
  it->second = value;
}

void Config::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) op_error("config", "cannot open " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      op_error("config", path + ":" + std::to_string(lineno) + ": expected key = value");
    set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
}

void Config::merge_overrides(const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    size_t eq = a.find('=');
    if (eq == std::string::npos)
      op_error("config", "override '" + a + "' is not of the form key=value");
    set(trim(a.substr(0, eq)), trim(a.substr(eq + 1)));
  }
}

void Config::apply_env() {
  if (const char* v = std::getenv("ANYMODAL_OUT_ROOT")) set("out.root", v);
  if (const char* v = std::getenv("ANYMODAL_DATA_DIR")) set("data.dir", v);
}

bool Config::has(const std::string& key) const {
  auto it = kv.find(key);
  return it != kv.end() && !it->second.empty();
}

const std::string& Config::str(const std::string& key) const {
  auto it = kv.find(key);
  if (it == kv.end()) op_error("config", "unknown key '" + key + "'");
  return it->second;
}

int Config::geti(const std::string& key) const {
  const std::string& v = str(key);
  size_t pos = 0;
  int out = 0;
  try {
    out = std::stoi(v, &pos);
  } catch (const std::exception&) {
    op_error("config", key + " = '" + v + "' is not an integer");
  }
  if (pos != v.size()) op_error("config", key + " = '" + v + "' is not an integer");
  return out;
}

uint64_t Config::getu(const std::string& key) const {
  const std::string& v = str(key);
  size_t pos = 0;
  uint64_t out = 0;
  try {
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    op_error("config", key + " = '" + v + "' is not an unsigned integer");
  }
  if (pos != v.size()) op_error("config", key + " = '" + v + "' is not an unsigned integer");
  return out;
}

double Config::getd(const std::string& key) const {
  const std::string& v = str(key);
  size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    op_error("config", key + " = '" + v + "' is not a number");
  }
  if (pos != v.size()) op_error("config", key + " = '" + v + "' is not a number");
  return out;
}

bool Config::getb(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  op_error("config", key + " = '" + v + "' is not a boolean (use 0/1/true/false)");
}

std::vector<int> Config::int_list(const std::string& key) const {
  std::vector<int> out;
  for (const auto& p : split_commas(str(key))) {
    size_t pos = 0;
    int x = 0;
    try {
      x = std::stoi(p, &pos);
    } catch (const std::exception&) {
      op_error("config", key + " holds '" + p + "', not an integer");
    }
    if (pos != p.size()) op_error("config", key + " holds '" + p + "', not an integer");
    out.push_back(x);
  }
  return out;
}

std::vector<double> Config::double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& p : split_commas(str(key))) {
    size_t pos = 0;
    double x = 0.0;
    try {
      x = std::stod(p, &pos);
    } catch (const std::exception&) {
      op_error("config", key + " holds '" + p + "', not a number");
    }
    if (pos != p.size()) op_error("config", key + " holds '" + p + "', not a number");
    out.push_back(x);
  }
  return out;
}

std::vector<std::string> Config::str_list(const std::string& key) const {
  return split_commas(str(key));
}

void Config::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) op_error("config", "cannot write " + path);
  for (const auto& [k, v] : kv) f << k << " = " << v << "\n";
}

}  // namespace am::cfg
