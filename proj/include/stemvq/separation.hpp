#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stemvq/audio.hpp"
#include "stemvq/checkpoint.hpp"
#include "stemvq/vqvae.hpp"

namespace stemvq {

struct SeparatorOptions {
  std::size_t overlap = 0;  // samples shared by consecutive chunks
};

// Deployment pipeline for one stem: mixture encoder, then the stem model's
// codebook and decoder.
struct StemPipeline {
  std::string stem;
  ModelConfig config;
  Encoder<float> mixture_encoder;
  Codebook<float> codebook;
  Decoder<float> decoder;
};

struct Separator {
  std::array<StemPipeline, kStemCount> stems;  // kStemNames order
  std::size_t chunk_len = 0;
  std::size_t overlap = 0;

  const StemPipeline& pipeline(std::string_view stem) const { return stems[stem_index(stem)]; }
};

struct SeparationResult {
  std::array<StereoTrack, kStemCount> stems;  // kStemNames order
};

// Pairs each stem's SE/SD checkpoint with its ME checkpoint. Throws
// PreconditionError naming the stem on a missing or duplicate label or on
// mismatched configs.
Separator assemble_separator(const std::vector<Checkpoint>& stem_ckpts, const std::vector<Checkpoint>& mix_ckpts,
                             const SeparatorOptions& options = {});

// Loads <stem>.se.svq and <stem>.me.svq for all four stems from `dir`;
// throws DataError naming the first missing file.
Separator load_separator(const std::filesystem::path& dir, const SeparatorOptions& options = {});

// decode(quantize(ME(x))) for one chunk of exactly chunk_len samples.
std::vector<float> separate_chunk(const Separator& sep, std::string_view stem, std::span<const float> chunk);

// One channel of any length: zero-pad to whole chunks, stitch (linear
// crossfade over `overlap` samples), trim.
std::vector<float> separate_channel(const Separator& sep, std::string_view stem, std::span<const float> signal);

SeparationResult separate_track(const Separator& sep, const StereoTrack& mixture);

}  // namespace stemvq
