#include "stemvq/audio.hpp"

#include <cmath>

#include "stemvq/errors.hpp"

namespace stemvq {

void StereoTrack::validate() const {
  if (left.size() != right.size()) {
    throw DataError("stereo channels differ in length: " + std::to_string(left.size()) + " vs " +
                    std::to_string(right.size()));
  }
  for (const auto* ch : {&left, &right}) {
    for (float v : *ch) {
      if (!std::isfinite(v)) throw DataError("track contains non-finite samples");
    }
  }
}

StereoTrack StereoTrack::silent(std::size_t length, std::size_t sample_rate) {
  return StereoTrack{std::vector<float>(length, 0.0f), std::vector<float>(length, 0.0f), sample_rate};
}

StereoTrack StereoTrack::from_mono(std::vector<float> samples, std::size_t sample_rate) {
  StereoTrack t;
  t.right = samples;
  t.left = std::move(samples);
  t.sample_rate = sample_rate;
  return t;
}

std::size_t stem_index(std::string_view name) {
  for (std::size_t i = 0; i < kStemNames.size(); ++i) {
    if (kStemNames[i] == name) return i;
  }
  throw PreconditionError("unknown stem '" + std::string(name) + "' (expected drums, bass, vocals or other)");
}

bool is_stem_name(std::string_view name) {
  for (auto s : kStemNames) {
    if (s == name) return true;
  }
  return false;
}

}  // namespace stemvq
