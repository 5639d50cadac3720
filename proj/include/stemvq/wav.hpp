#pragma once

#include <cstdint>
#include <filesystem>

#include "stemvq/audio.hpp"
#include "stemvq/errors.hpp"

namespace stemvq {

// Format tag other than integer PCM (e.g. IEEE float, A-law).
class WavNotPcmError : public DataError {
 public:
  using DataError::DataError;
};

class WavBitDepthError : public DataError {
 public:
  using DataError::DataError;
};

// Missing chunks, bad RIFF framing or a truncated data chunk.
class WavMalformedError : public DataError {
 public:
  using DataError::DataError;
};

// 16/24-bit PCM, mono or stereo. Samples are code / 2^(bits-1); mono is
// duplicated to both channels.
StereoTrack read_wav(const std::filesystem::path& path);

// Writes a canonical 44-byte-header stereo PCM file. Samples are clamped to
// [-1, 1 - 2^-(bits-1)] and rounded half away from zero.
void write_wav(const StereoTrack& track, const std::filesystem::path& path, int bits = 16);

// The integer code write_wav stores for `sample`.
std::int32_t quantize_sample(float sample, int bits);

}  // namespace stemvq
