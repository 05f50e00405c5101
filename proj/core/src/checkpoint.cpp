#include "anymodal/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace am::ckpt {

namespace {

void put_f32le(unsigned char* dst, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  dst[0] = static_cast<unsigned char>(u & 0xff);
  dst[1] = static_cast<unsigned char>((u >> 8) & 0xff);
  dst[2] = static_cast<unsigned char>((u >> 16) & 0xff);
  dst[3] = static_cast<unsigned char>((u >> 24) & 0xff);
}

float get_f32le(const unsigned char* src) {
  uint32_t u = static_cast<uint32_t>(src[0]) | (static_cast<uint32_t>(src[1]) << 8) |
               (static_cast<uint32_t>(src[2]) << 16) | (static_cast<uint32_t>(src[3]) << 24);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

void check_name(const std::string& name) {
  if (name.empty() || name.find_first_of(" \t\n\r") != std::string::npos)
    nn::op_error("checkpoint", "invalid tensor name '" + name + "'");
}

}  // namespace

const Entry* Archive::find(const std::string& name) const {
  for (const Entry& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

void save(const std::string& path, const nn::ParamStore& store,
          const std::map<std::string, std::string>& meta,
          const std::vector<std::pair<std::string, nn::Tensor>>& extra) {
  std::vector<std::pair<std::string, const nn::Tensor*>> items;
  for (nn::Param* p : store.all()) items.emplace_back(p->name, &p->value);
  for (const auto& [name, t] : extra) items.emplace_back(name, &t);
  std::sort(items.begin(), items.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (size_t i = 0; i + 1 < items.size(); ++i)
    if (items[i].first == items[i + 1].first)
      nn::op_error("checkpoint", "duplicate tensor name " + items[i].first);

  std::ostringstream head;
  head << "amckpt 1\n";
  for (const auto& [k, v] : meta) {
    check_name(k);
    head << "meta " << k << " " << v << "\n";
  }
  int64_t offset = 0;
  for (const auto& [name, t] : items) {
    check_name(name);
    int64_t nbytes = t->size() * 4;
    head << "tensor " << name << " f32 " << t->rank();
    for (int d : t->shape) head << " " << d;
    head << " " << offset << " " << nbytes << "\n";
    offset += nbytes;
  }
  head << "payload " << offset << "\n";

  std::vector<unsigned char> payload(static_cast<size_t>(offset));
  int64_t pos = 0;
  for (const auto& [name, t] : items) {
    const float* p = t->ptr();
    for (int64_t i = 0; i < t->size(); ++i, pos += 4)
      put_f32le(payload.data() + pos, p[i]);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) nn::op_error("checkpoint", "cannot open " + path + " for writing");
  std::string h = head.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) nn::op_error("checkpoint", "failed writing " + path);
}

Archive read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) nn::op_error("checkpoint", "cannot open " + path);
  Archive a;
  std::string line;
  if (!std::getline(in, line) || line != "amckpt 1")
    nn::op_error("checkpoint", path + " is not a checkpoint archive");
  int64_t payload_bytes = -1;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      a.meta[key] = value;
    } else if (kind == "tensor") {
      Entry e;
      int rank = 0;
      ls >> e.name >> e.dtype >> rank;
      e.shape.resize(static_cast<size_t>(rank));
      for (int i = 0; i < rank; ++i) ls >> e.shape[static_cast<size_t>(i)];
      ls >> e.offset >> e.nbytes;
      if (!ls) nn::op_error("checkpoint", "malformed tensor line in " + path);
      a.entries.push_back(std::move(e));
    } else if (kind == "payload") {
      ls >> payload_bytes;
      break;
    } else {
      nn::op_error("checkpoint", "unexpected manifest line '" + line + "' in " + path);
    }
  }
  if (payload_bytes < 0) nn::op_error("checkpoint", "missing payload marker in " + path);
  a.payload.resize(static_cast<size_t>(payload_bytes));
  in.read(reinterpret_cast<char*>(a.payload.data()), payload_bytes);
  if (in.gcount() != payload_bytes)
    nn::op_error("checkpoint", "truncated payload in " + path);
  for (const Entry& e : a.entries) {
    if (e.dtype != "f32")
      nn::op_error("checkpoint", "unsupported dtype " + e.dtype + " for " + e.name);
    if (e.offset < 0 || e.offset + e.nbytes > payload_bytes ||
        e.nbytes != nn::numel(e.shape) * 4)
      nn::op_error("checkpoint", "inconsistent entry for " + e.name + " in " + path);
  }
  return a;
}

std::map<std::string, std::string> read_meta(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) nn::op_error("checkpoint", "cannot open " + path);
  std::map<std::string, std::string> meta;
  std::string line;
  if (!std::getline(in, line) || line != "amckpt 1")
    nn::op_error("checkpoint", path + " is not a checkpoint archive");
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      meta[key] = value;
    } else if (kind == "payload") {
      break;
    }
  }
  return meta;
}

LoadResult load(const std::string& path, nn::ParamStore& store, LoadMode mode) {
  Archive a = read(path);
  LoadResult res;
  res.meta = a.meta;
  std::vector<std::string> missing_in_file;
  std::vector<std::string> unknown_in_store;
  for (const Entry& e : a.entries) {
    nn::Tensor t = nn::Tensor::zeros(e.shape);
    float* p = t.ptr();
    for (int64_t i = 0; i < t.size(); ++i)
      p[i] = get_f32le(a.payload.data() + e.offset + i * 4);
    if (e.name.rfind("opt/", 0) == 0) {
      res.extra.emplace_back(e.name, std::move(t));
      continue;
    }
    nn::Param* prm = store.find(e.name);
    if (!prm) {
      unknown_in_store.push_back(e.name);
      continue;
    }
    if (prm->value.shape != e.shape)
      nn::op_error("checkpoint", "shape mismatch for " + e.name + ": store " +
                                     nn::shape_str(prm->value.shape) + " vs file " +
                                     nn::shape_str(e.shape));
    *prm->value.data = *t.data;
    res.loaded.push_back(e.name);
  }
  if (!unknown_in_store.empty()) {
    std::string msg = "archive tensors missing from store:";
    for (const auto& n : unknown_in_store) msg += " " + n;
    nn::op_error("checkpoint", msg + " (" + path + ")");
  }
  if (mode == LoadMode::Exact) {
    for (nn::Param* p : store.all()) {
      if (!a.find(p->name)) missing_in_file.push_back(p->name);
    }
    if (!missing_in_file.empty()) {
      std::string msg = "store parameters missing from archive:";
      for (const auto& n : missing_in_file) msg += " " + n;
      nn::op_error("checkpoint", msg + " (" + path + ")");
    }
  }
  return res;
}

std::vector<std::string> diff(const std::string& path_a, const std::string& path_b) {
  Archive a = read(path_a);
  Archive b = read(path_b);
  std::vector<std::string> out;
  for (const Entry& e : a.entries) {
    const Entry* o = b.find(e.name);
    if (!o) {
      out.push_back(e.name);
      continue;
    }
    if (e.shape != o->shape || e.nbytes != o->nbytes ||
        std::memcmp(a.payload.data() + e.offset, b.payload.data() + o->offset,
                    static_cast<size_t>(e.nbytes)) != 0)
      out.push_back(e.name);
  }
  for (const Entry& e : b.entries)
    if (!a.find(e.name)) out.push_back(e.name);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace am::ckpt
