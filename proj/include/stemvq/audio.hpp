#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace stemvq {

struct StereoTrack {
  std::vector<float> left;
  std::vector<float> right;
  std::size_t sample_rate = 0;

  std::size_t length() const { return left.size(); }
  const std::vector<float>& channel(std::size_t c) const { return c == 0 ? left : right; }
  std::vector<float>& channel(std::size_t c) { return c == 0 ? left : right; }

  // Throws DataError on unequal channel lengths or non-finite samples.
  void validate() const;

  static StereoTrack silent(std::size_t length, std::size_t sample_rate);
  static StereoTrack from_mono(std::vector<float> samples, std::size_t sample_rate);
};

inline constexpr std::size_t kStemCount = 4;

// Canonical stem order used throughout: drums, bass, vocals, other.
inline constexpr std::array<std::string_view, kStemCount> kStemNames = {"drums", "bass", "vocals", "other"};

// Position of `name` in kStemNames; throws PreconditionError for unknown labels.
std::size_t stem_index(std::string_view name);
bool is_stem_name(std::string_view name);

}  // namespace stemvq
