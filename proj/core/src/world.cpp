#include "anymodal/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "anymodal/rng.hpp"

namespace fs = std::filesystem;

namespace am::world {

using nn::op_error;
using nn::Tensor;

Concept Concept::from_index(int idx) {
  if (idx < 0 || idx >= kCount)
    op_error("world", "concept index " + std::to_string(idx) + " out of range");
  Concept c;
  c.tone = idx % kTones;
  idx /= kTones;
  c.motion = static_cast<Motion>(idx % kMotions);
  idx /= kMotions;
  c.color = idx % kColors;
  idx /= kColors;
  c.shape = static_cast<Shape>(idx);
  return c;
}

int Concept::index() const {
  return ((static_cast<int>(shape) * kColors + color) * kMotions +
          static_cast<int>(motion)) *
             kTones +
         tone;
}

Concept sample_concept(uint64_t seed) {
  return Concept::from_index(static_cast<int>(splitmix64(seed) % Concept::kCount));
}

const std::array<std::array<float, 3>, 8>& palette() {
  static const std::array<std::array<float, 3>, 8> p = {{
      {0.90f, 0.15f, 0.15f},  // red
      {0.15f, 0.85f, 0.20f},  // green
      {0.20f, 0.30f, 0.90f},  // blue
      {0.90f, 0.85f, 0.20f},  // yellow
      {0.85f, 0.20f, 0.80f},  // magenta
      {0.20f, 0.85f, 0.85f},  // cyan
      {0.95f, 0.95f, 0.95f},  // white
      {0.95f, 0.55f, 0.15f},  // orange
  }};
  return p;
}

std::array<float, 3> background() { return {0.05f, 0.05f, 0.08f}; }

std::pair<int, int> motion_delta(Motion m) {
  switch (m) {
    case Motion::left: return {0, -1};
    case Motion::right: return {0, 1};
    case Motion::up: return {-1, 0};
    case Motion::down: return {1, 0};
    case Motion::still: return {0, 0};
  }
  op_error("world", "bad motion value");
}

namespace {

std::vector<std::pair<int, int>> shape_cells(Shape s) {
  std::vector<std::pair<int, int>> cells;
  for (int dy = -3; dy <= 3; ++dy)
    for (int dx = -3; dx <= 3; ++dx) {
      bool in = false;
      switch (s) {
        case Shape::circle: in = dy * dy + dx * dx <= 9; break;
        case Shape::square: in = true; break;  // full 7x7 block
        case Shape::triangle: in = 2 * std::abs(dx) <= dy + 3; break;
        case Shape::cross: in = std::abs(dx) <= 1 || std::abs(dy) <= 1; break;
      }
      if (in) cells.emplace_back(dy, dx);
    }
  return cells;
}

}  // namespace

std::vector<std::pair<int, int>> glyph_cells(const Concept& c) {
  std::vector<std::pair<int, int>> cells = shape_cells(c.shape);
  // antenna: two cells pointing along the motion; absent when still
  auto [my, mx] = motion_delta(c.motion);
  if (c.motion != Motion::still) {
    cells.emplace_back(4 * my, 4 * mx);
    cells.emplace_back(5 * my, 5 * mx);
  }
  // tone bits: 2x2 block per set bit, in the row band above everything else
  const int bit_col[3] = {-5, -2, 1};
  for (int b = 0; b < 3; ++b) {
    if (!((c.tone >> b) & 1)) continue;
    for (int dy = -5; dy <= -4; ++dy)
      for (int dx = bit_col[b]; dx <= bit_col[b] + 1; ++dx) cells.emplace_back(dy, dx);
  }
  return cells;
}

Tensor render_frame(const Concept& c, int sy, int sx) {
  Tensor img = Tensor::zeros({3, kImageSize, kImageSize});
  auto bg = background();
  float* p = img.ptr();
  for (int ch = 0; ch < 3; ++ch)
    for (int i = 0; i < kImageSize * kImageSize; ++i)
      p[ch * kImageSize * kImageSize + i] = bg[static_cast<size_t>(ch)];
  const auto& col = palette()[static_cast<size_t>(c.color)];
  const int center = kImageSize / 2;
  for (auto [dy, dx] : glyph_cells(c)) {
    int y = ((center + dy + sy) % kImageSize + kImageSize) % kImageSize;
    int x = ((center + dx + sx) % kImageSize + kImageSize) % kImageSize;
    for (int ch = 0; ch < 3; ++ch)
      p[(ch * kImageSize + y) * kImageSize + x] = col[static_cast<size_t>(ch)];
  }
  return img;
}

Tensor render_image(const Concept& c) { return render_frame(c, 0, 0); }

Tensor render_video(const Concept& c) {
  Tensor vid = Tensor::zeros({kFrames, 3, kImageSize, kImageSize});
  auto [my, mx] = motion_delta(c.motion);
  for (int t = 0; t < kFrames; ++t) {
    Tensor f = render_frame(c, (t - 3) * my, (t - 3) * mx);
    std::copy(f.ptr(), f.ptr() + f.size(), vid.ptr() + t * f.size());
  }
  return vid;
}

Tensor render_audio(const Concept& c) {
  Tensor a = Tensor::zeros({kAudioLen});
  const int bin = 8 + 4 * c.tone;
  float* p = a.ptr();
  for (int n = 0; n < kAudioLen; ++n) {
    double env = std::min(n / 24.0, 1.0) * std::exp(-2.0 * n / kAudioLen);
    p[n] = static_cast<float>(0.8 * env *
                              std::sin(2.0 * M_PI * bin * n / kAudioLen));
  }
  return a;
}

namespace {

const char* kShapeWords[4] = {"circle", "square", "triangle", "cross"};
const char* kColorWords[8] = {"red",     "green", "blue",  "yellow",
                              "magenta", "cyan",  "white", "orange"};
const char* kMotionWords[5] = {"left", "right", "up", "down", "still"};
const char* kToneWords[8] = {"deep", "low",  "soft",   "mild",
                             "warm", "bright", "sharp", "shrill"};

void push_motion_phrase(std::vector<std::string>& out, Motion m) {
  if (m == Motion::still) {
    out.emplace_back("holding");
    out.emplace_back("still");
  } else {
    out.emplace_back("moving");
    out.emplace_back(kMotionWords[static_cast<int>(m)]);
  }
}

template <typename Arr>
int find_word(const Arr& words, int n, const std::string& w) {
  for (int i = 0; i < n; ++i)
    if (w == words[i]) return i;
  return -1;
}

}  // namespace

const char* shape_word(Shape s) { return kShapeWords[static_cast<int>(s)]; }
const char* motion_word(Motion m) { return kMotionWords[static_cast<int>(m)]; }

const char* color_word(int color) {
  if (color < 0 || color >= Concept::kColors) op_error("caption", "color out of range");
  return kColorWords[color];
}

const char* tone_word(int tone) {
  if (tone < 0 || tone >= Concept::kTones) op_error("caption", "tone out of range");
  return kToneWords[tone];
}

int caption_template_count() { return 4; }

std::vector<std::string> caption_words(const Concept& c, uint64_t template_seed) {
  std::vector<std::string> w;
  const std::string shape = shape_word(c.shape);
  const std::string color = color_word(c.color);
  const std::string tone = tone_word(c.tone);
  switch (template_seed % 4) {
    case 0:
      w = {"a", color, shape};
      push_motion_phrase(w, c.motion);
      w.insert(w.end(), {"with", "a", tone, "tone", "."});
      break;
    case 1:
      w = {"the", shape, "is", color, ","};
      push_motion_phrase(w, c.motion);
      w.insert(w.end(), {",", "sounding", tone, "."});
      break;
    case 2:
      w = {tone, "tone", ",", color, shape};
      push_motion_phrase(w, c.motion);
      w.emplace_back(".");
      break;
    default:
      w = {"watch", "a", color, shape};
      push_motion_phrase(w, c.motion);
      w.insert(w.end(), {"over", "a", tone, "hum", "."});
      break;
  }
  return w;
}

Concept parse_caption(const std::vector<std::string>& words) {
  int shape = -1, color = -1, motion = -1, tone = -1;
  auto take = [](int& slot, int found, const char* what) {
    if (found < 0) return;
    if (slot >= 0 && slot != found)
      op_error("caption", std::string("ambiguous ") + what + " words");
    slot = found;
  };
  for (const std::string& w : words) {
    take(shape, find_word(kShapeWords, 4, w), "shape");
    take(color, find_word(kColorWords, 8, w), "color");
    take(motion, find_word(kMotionWords, 5, w), "motion");
    take(tone, find_word(kToneWords, 8, w), "tone");
  }
  if (shape < 0) op_error("caption", "no shape word found");
  if (color < 0) op_error("caption", "no color word found");
  if (motion < 0) op_error("caption", "no motion word found");
  if (tone < 0) op_error("caption", "no tone word found");
  Concept c;
  c.shape = static_cast<Shape>(shape);
  c.color = color;
  c.motion = static_cast<Motion>(motion);
  c.tone = tone;
  return c;
}

std::vector<std::string> caption_vocabulary() {
  std::vector<std::string> v = {"a",    "the",  "is",       "with",    ",",
                                ".",    "tone", "sounding", "watch",   "over",
                                "hum",  "moving", "holding"};
  for (const char* w : kShapeWords) v.emplace_back(w);
  for (const char* w : kColorWords) v.emplace_back(w);
  for (const char* w : kMotionWords) v.emplace_back(w);
  for (const char* w : kToneWords) v.emplace_back(w);
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

void write_f32_file(const std::string& path, const float* data, int64_t n) {
  std::vector<unsigned char> bytes(static_cast<size_t>(n) * 4);
  for (int64_t i = 0; i < n; ++i) {
    uint32_t u;
    std::memcpy(&u, data + i, 4);
    bytes[static_cast<size_t>(i * 4) + 0] = static_cast<unsigned char>(u & 0xff);
    bytes[static_cast<size_t>(i * 4) + 1] = static_cast<unsigned char>((u >> 8) & 0xff);
    bytes[static_cast<size_t>(i * 4) + 2] = static_cast<unsigned char>((u >> 16) & 0xff);
    bytes[static_cast<size_t>(i * 4) + 3] = static_cast<unsigned char>((u >> 24) & 0xff);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) op_error("world-store", "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) op_error("world-store", "failed writing " + path);
}

std::vector<float> read_f32_file(const std::string& path, int64_t expect_n) {
  std::ifstream in(path, std::ios::binary);
  if (!in) op_error("world-store", "cannot open " + path);
  std::vector<unsigned char> bytes(static_cast<size_t>(expect_n) * 4);
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()) || in.peek() != EOF)
    op_error("world-store", path + " does not hold exactly " +
                                std::to_string(expect_n) + " f32 values");
  std::vector<float> vals(static_cast<size_t>(expect_n));
  for (int64_t i = 0; i < expect_n; ++i) {
    uint32_t u = static_cast<uint32_t>(bytes[static_cast<size_t>(i * 4)]) |
                 (static_cast<uint32_t>(bytes[static_cast<size_t>(i * 4) + 1]) << 8) |
                 (static_cast<uint32_t>(bytes[static_cast<size_t>(i * 4) + 2]) << 16) |
                 (static_cast<uint32_t>(bytes[static_cast<size_t>(i * 4) + 3]) << 24);
    std::memcpy(&vals[static_cast<size_t>(i)], &u, 4);
  }
  return vals;
}

namespace {

std::string sample_stem(int idx) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%04d", idx);
  return buf;
}

constexpr int64_t kImageN = 3 * kImageSize * kImageSize;
constexpr int64_t kVideoN = kFrames * kImageN;

}  // namespace

void write_world(const std::string& dir) {
  fs::create_directories(fs::path(dir) / "image");
  fs::create_directories(fs::path(dir) / "video");
  fs::create_directories(fs::path(dir) / "audio");
  std::ostringstream man;
  man << "amworld 1\n";
  man << "count " << Concept::kCount << "\n";
  man << "image 3 " << kImageSize << " " << kImageSize << "\n";
  man << "video " << kFrames << " 3 " << kImageSize << " " << kImageSize << "\n";
  man << "audio " << kAudioLen << "\n";
  for (int i = 0; i < Concept::kCount; ++i) {
    Concept c = Concept::from_index(i);
    std::string stem = sample_stem(i);
    Tensor img = render_image(c);
    Tensor vid = render_video(c);
    Tensor aud = render_audio(c);
    write_f32_file((fs::path(dir) / "image" / (stem + ".f32")).string(), img.ptr(),
                   img.size());
    write_f32_file((fs::path(dir) / "video" / (stem + ".f32")).string(), vid.ptr(),
                   vid.size());
    write_f32_file((fs::path(dir) / "audio" / (stem + ".f32")).string(), aud.ptr(),
                   aud.size());
    man << "sample " << i << " " << shape_word(c.shape) << " " << c.color << " "
        << motion_word(c.motion) << " " << c.tone << " image/" << stem
        << ".f32 video/" << stem << ".f32 audio/" << stem << ".f32\n";
  }
  std::ofstream out(fs::path(dir) / "world.manifest", std::ios::trunc);
  if (!out) op_error("world-store", "cannot write manifest in " + dir);
  out << man.str();
}

WorldStore WorldStore::load(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "world.manifest");
  if (!in) op_error("world-store", "no world.manifest in " + dir);
  std::string line;
  if (!std::getline(in, line) || line != "amworld 1")
    op_error("world-store", dir + " does not hold a world manifest");

  WorldStore store;
  store.dir_ = dir;
  int count = -1;
  nn::Shape image_shape, video_shape, audio_shape;
  auto read_shape = [](std::istringstream& ls) {
    nn::Shape s;
    int d;
    while (ls >> d) s.push_back(d);
    return s;
  };
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "count") {
      ls >> count;
    } else if (kind == "image") {
      image_shape = read_shape(ls);
    } else if (kind == "video") {
      video_shape = read_shape(ls);
    } else if (kind == "audio") {
      audio_shape = read_shape(ls);
    } else if (kind == "sample") {
      int idx = -1, color = -1, tone = -1;
      std::string shape, motion, img_f, vid_f, aud_f;
      ls >> idx >> shape >> color >> motion >> tone >> img_f >> vid_f >> aud_f;
      if (!ls) op_error("world-store", "malformed sample line: " + line);
      Concept c;
      int si = find_word(kShapeWords, 4, shape);
      int mi = find_word(kMotionWords, 5, motion);
      if (si < 0 || mi < 0 || color < 0 || color >= Concept::kColors || tone < 0 ||
          tone >= Concept::kTones)
        op_error("world-store", "bad concept fields in line: " + line);
      c.shape = static_cast<Shape>(si);
      c.color = color;
      c.motion = static_cast<Motion>(mi);
      c.tone = tone;
      if (idx != static_cast<int>(store.concepts_.size()))
        op_error("world-store", "non-sequential sample id in line: " + line);
      store.concepts_.push_back(c);
      // existence + exact size check, cheap enough to do for every file
      for (auto [rel, n] :
           {std::pair{img_f, nn::numel(image_shape)}, {vid_f, nn::numel(video_shape)},
            {aud_f, nn::numel(audio_shape)}}) {
        fs::path p = fs::path(dir) / rel;
        std::error_code ec;
        auto sz = fs::file_size(p, ec);
        if (ec) op_error("world-store", "missing sample file " + p.string());
        if (sz != static_cast<uintmax_t>(n * 4))
          op_error("world-store", "sample file " + p.string() + " holds " +
                                      std::to_string(sz / 4) + " values, manifest says " +
                                      std::to_string(n));
      }
    }
  }
  if (image_shape != nn::Shape{3, kImageSize, kImageSize} ||
      video_shape != nn::Shape{kFrames, 3, kImageSize, kImageSize} ||
      audio_shape != nn::Shape{kAudioLen})
    op_error("world-store", "unexpected sample shapes in manifest of " + dir);
  if (count != static_cast<int>(store.concepts_.size()))
    op_error("world-store", "manifest count " + std::to_string(count) + " but " +
                                std::to_string(store.concepts_.size()) + " samples");
  return store;
}

namespace {

Tensor read_sample(const std::string& dir, const char* sub, int idx, nn::Shape shape) {
  Tensor t = Tensor::zeros(shape);
  auto vals = read_f32_file(
      (fs::path(dir) / sub / (sample_stem(idx) + ".f32")).string(), t.size());
  std::copy(vals.begin(), vals.end(), t.ptr());
  return t;
}

}  // namespace

nn::Tensor WorldStore::image(int concept_idx) const {
  return read_sample(dir_, "image", concept_idx, {3, kImageSize, kImageSize});
}

nn::Tensor WorldStore::video(int concept_idx) const {
  return read_sample(dir_, "video", concept_idx, {kFrames, 3, kImageSize, kImageSize});
}

nn::Tensor WorldStore::audio(int concept_idx) const {
  return read_sample(dir_, "audio", concept_idx, {kAudioLen});
}

}  // namespace am::world
