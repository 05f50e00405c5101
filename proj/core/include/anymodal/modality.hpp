#pragma once

#include <string>

#include "anymodal/tensor.hpp"

namespace am {

enum class Modality { text, image, video, audio };

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::text: return "text";
    case Modality::image: return "image";
    case Modality::video: return "video";
    case Modality::audio: return "audio";
  }
  nn::op_error("modality", "bad modality value");
}

inline Modality modality_from_name(const std::string& s) {
  if (s == "text") return Modality::text;
  if (s == "image") return Modality::image;
  if (s == "video") return Modality::video;
  if (s == "audio") return Modality::audio;
  nn::op_error("modality", "unknown modality '" + s + "'");
}

}  // namespace am
