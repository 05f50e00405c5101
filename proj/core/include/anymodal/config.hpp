#pragma once

// Layered flat configuration: built-in defaults, then an optional config
// file, then environment path overrides, then command-line overrides. Keys
// are dotted lowercase names; the fully merged view is snapshotted into every
// run directory so a run is reproducible from the snapshot alone.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace am::cfg {

struct Config {
  std::map<std::string, std::string> kv;

  // Every key the pipeline understands, with its default. Unknown keys are
  // rejected at merge time, which catches typos early.
  static Config defaults();

  void set(const std::string& key, const std::string& value);  // unknown key -> error
  void load_file(const std::string& path);                     // missing file -> error
  void merge_overrides(const std::vector<std::string>& assignments);  // "key=value" each
  // ANYMODAL_OUT_ROOT and ANYMODAL_DATA_DIR override out.root and data.dir.
  void apply_env();

  bool has(const std::string& key) const;  // present with a non-empty value
  const std::string& str(const std::string& key) const;
  int geti(const std::string& key) const;
  uint64_t getu(const std::string& key) const;
  double getd(const std::string& key) const;
  bool getb(const std::string& key) const;
  std::vector<int> int_list(const std::string& key) const;
  std::vector<double> double_list(const std::string& key) const;
  std::vector<std::string> str_list(const std::string& key) const;

  void save(const std::string& path) const;  // sorted key = value lines
};

}  // namespace am::cfg
