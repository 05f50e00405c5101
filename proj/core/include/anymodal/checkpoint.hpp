#pragma once

// Checkpoint archive: a self-describing text manifest followed by a raw
// little-endian float payload. Layout:
//
//   amckpt 1
//   meta <key> <value>
//   tensor <name> f32 <rank> <dims...> <offset> <nbytes>
//   payload <total-bytes>
//   <raw bytes>
//
// Offsets are relative to the end of the "payload" line. Entries are written
// in name order so identical states produce identical files, and a
// save -> load -> save round trip is byte-exact.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "anymodal/params.hpp"

namespace am::ckpt {

struct Entry {
  std::string name;
  std::string dtype;
  nn::Shape shape;
  int64_t offset = 0;
  int64_t nbytes = 0;
};

// Raw archive view used by diffing and subset loads.
struct Archive {
  std::map<std::string, std::string> meta;
  std::vector<Entry> entries;
  std::vector<unsigned char> payload;

  const Entry* find(const std::string& name) const;
};

void save(const std::string& path, const nn::ParamStore& store,
          const std::map<std::string, std::string>& meta = {},
          const std::vector<std::pair<std::string, nn::Tensor>>& extra = {});

Archive read(const std::string& path);

std::map<std::string, std::string> read_meta(const std::string& path);

enum class LoadMode {
  Exact,   // file tensors and store parameters must match one-to-one
  Subset,  // every file tensor must land in the store; store may have more
};

struct LoadResult {
  std::map<std::string, std::string> meta;
  std::vector<std::string> loaded;  // parameter names filled from the file
  // Non-parameter tensors (e.g. optimizer state) found in the archive.
  std::vector<std::pair<std::string, nn::Tensor>> extra;
};

// Tensors whose name starts with "opt/" are returned in extra rather than
// matched against parameters.
LoadResult load(const std::string& path, nn::ParamStore& store, LoadMode mode);

// Names present in only one archive or with differing bytes. Empty means the
// archives hold identical tensor sets with identical contents.
std::vector<std::string> diff(const std::string& path_a, const std::string& path_b);

}  // namespace am::ckpt
