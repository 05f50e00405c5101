#pragma once

// Procedural toy world. Every sample is a pure function of a Concept, a point
// on the shape x color x motion x tone grid. Images carry small glyphs for
// motion (a two-cell antenna pointing along the motion) and tone (three 2x2
// blocks encoding the tone index in binary), so all four factors are
// recoverable from pixels alone. Videos shift the whole pattern one pixel per
// frame with wraparound; audio is a sine at a tone-mapped spectral bin and
// depends on nothing but the tone.

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "anymodal/tensor.hpp"

namespace am::world {

enum class Shape { circle, square, triangle, cross };
enum class Motion { left, right, up, down, still };

struct Concept {
  Shape shape = Shape::circle;
  int color = 0;
  Motion motion = Motion::left;
  int tone = 0;

  static constexpr int kShapes = 4;
  static constexpr int kColors = 8;
  static constexpr int kMotions = 5;
  static constexpr int kTones = 8;
  static constexpr int kCount = kShapes * kColors * kMotions * kTones;  // 1280

  static Concept from_index(int idx);
  int index() const;
  bool operator==(const Concept&) const = default;
};

// Uniform over the grid, deterministic per seed. Stratified enumeration is
// from_index over 0..kCount-1.
Concept sample_concept(uint64_t seed);

inline constexpr int kImageSize = 16;
inline constexpr int kFrames = 8;
inline constexpr int kAudioLen = 256;

const std::array<std::array<float, 3>, 8>& palette();
std::array<float, 3> background();

// (dy, dx) glyph cells relative to the pattern center, before any shift.
std::vector<std::pair<int, int>> glyph_cells(const Concept& c);

// Per-frame pattern shift along the motion direction; frame 3 is the unshifted
// render, so videos pass through the canonical image.
std::pair<int, int> motion_delta(Motion m);

nn::Tensor render_image(const Concept& c);                     // (3,16,16) in [0,1]
nn::Tensor render_frame(const Concept& c, int sy, int sx);     // shifted variant
nn::Tensor render_video(const Concept& c);                     // (8,3,16,16)
nn::Tensor render_audio(const Concept& c);                     // (256) in [-1,1]

// Captions: >= 4 fixed templates, each containing exactly one word from every
// factor class, so parsing is exact. template_seed picks the template.
int caption_template_count();
std::vector<std::string> caption_words(const Concept& c, uint64_t template_seed);
Concept parse_caption(const std::vector<std::string>& words);  // throws if not a caption
std::vector<std::string> caption_vocabulary();                 // sorted, every emittable word

const char* shape_word(Shape s);
const char* motion_word(Motion m);
const char* color_word(int color);
const char* tone_word(int tone);

// On-disk world: a manifest describing sample shapes and per-concept files of
// raw little-endian f32 values.
void write_world(const std::string& dir);

class WorldStore {
 public:
  static WorldStore load(const std::string& dir);  // validates files against manifest

  nn::Tensor image(int concept_idx) const;
  nn::Tensor video(int concept_idx) const;
  nn::Tensor audio(int concept_idx) const;
  const std::vector<Concept>& concepts() const { return concepts_; }
  const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
  std::vector<Concept> concepts_;
};

void write_f32_file(const std::string& path, const float* data, int64_t n);
std::vector<float> read_f32_file(const std::string& path, int64_t expect_n);

}  // namespace am::world
