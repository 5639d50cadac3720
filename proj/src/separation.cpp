#include "stemvq/separation.hpp"

#include <algorithm>

#include "stemvq/errors.hpp"

namespace stemvq {

Separator assemble_separator(const std::vector<Checkpoint>& stem_ckpts, const std::vector<Checkpoint>& mix_ckpts,
                             const SeparatorOptions& options) {
  std::array<const Checkpoint*, kStemCount> se{}, me{};
  auto index = [](const std::vector<Checkpoint>& ckpts, std::array<const Checkpoint*, kStemCount>& slots,
                  const char* kind) {
    for (const auto& c : ckpts) {
      if (!is_stem_name(c.stem)) throw PreconditionError(std::string(kind) + " checkpoint has unknown stem '" + c.stem + "'");
      auto& slot = slots[stem_index(c.stem)];
      if (slot) throw PreconditionError("duplicate " + std::string(kind) + " checkpoint for stem " + c.stem);
      slot = &c;
    }
  };
  index(stem_ckpts, se, "stem");
  index(mix_ckpts, me, "mixture");

  Separator sep;
  sep.overlap = options.overlap;
  for (std::size_t s = 0; s < kStemCount; ++s) {
    const std::string name(kStemNames[s]);
    if (!se[s]) throw PreconditionError("missing stem checkpoint for " + name);
    if (!me[s]) throw PreconditionError("missing mixture-encoder checkpoint for " + name);
    if (se[s]->role == "ME") throw PreconditionError(name + ": stem checkpoint is an ME checkpoint");
    if (!(se[s]->config == me[s]->config)) {
      throw PreconditionError(name + ": mixture encoder config does not match the stem decoder config");
    }
    const VqVae<float> stem_model = restore_vqvae(*se[s], false);
    StemPipeline& p = sep.stems[s];
    p.stem = name;
    p.config = se[s]->config;
    p.mixture_encoder = restore_encoder(*me[s], false);
    p.codebook = stem_model.codebook;
    p.decoder = stem_model.decoder;
    if (s == 0) {
      sep.chunk_len = p.config.chunk_len;
    } else if (p.config.chunk_len != sep.chunk_len) {
      throw PreconditionError(name + ": chunk_len differs from the other stems");
    }
  }
  if (sep.overlap >= sep.chunk_len) {
    throw PreconditionError("overlap " + std::to_string(sep.overlap) + " must be smaller than chunk_len " +
                            std::to_string(sep.chunk_len));
  }
  return sep;
}

Separator load_separator(const std::filesystem::path& dir, const SeparatorOptions& options) {
  std::vector<Checkpoint> se, me;
  for (auto stem : kStemNames) {
    for (const char* kind : {"se", "me"}) {
      const auto path = dir / (std::string(stem) + "." + kind + ".svq");
      if (!std::filesystem::exists(path)) {
        throw DataError("missing checkpoint for stem " + std::string(stem) + ": " + path.string());
      }
      (kind[0] == 's' ? se : me).push_back(load_checkpoint(path));
    }
  }
  return assemble_separator(se, me, options);
}

std::vector<float> separate_chunk(const Separator& sep, std::string_view stem, std::span<const float> chunk) {
  if (chunk.size() != sep.chunk_len) {
    throw PreconditionError("separate_chunk: chunk has " + std::to_string(chunk.size()) + " samples, expected " +
                            std::to_string(sep.chunk_len));
  }
  const StemPipeline& p = sep.pipeline(stem);
  // Digital silence in, silence out.
  if (std::all_of(chunk.begin(), chunk.end(), [](float v) { return v == 0.0f; })) {
    return std::vector<float>(chunk.size(), 0.0f);
  }
  NoGradGuard no_grad;
  const auto latents = encode(p.mixture_encoder, audio_tensor<float>(chunk));
  const auto q = quantize(p.codebook, latents);
  const auto y = decode(p.decoder, q.quantized);
  return {y.data().begin(), y.data().end()};
}

std::vector<float> separate_channel(const Separator& sep, std::string_view stem, std::span<const float> signal) {
  const std::size_t len = signal.size();
  if (len == 0) throw PreconditionError("separate: empty signal");
  const std::size_t chunk = sep.chunk_len;
  const std::size_t ov = sep.overlap;
  const std::size_t hop = chunk - ov;
  const std::size_t n_chunks = len <= chunk ? 1 : (len - ov + hop - 1) / hop;
  const std::size_t padded = (n_chunks - 1) * hop + chunk;

  std::vector<float> input(padded, 0.0f);
  std::copy(signal.begin(), signal.end(), input.begin());
  std::vector<float> out(padded, 0.0f);
  std::vector<float> weight(padded, 0.0f);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    const std::size_t pos = c * hop;
    const auto y = separate_chunk(sep, stem, std::span<const float>(input).subspan(pos, chunk));
    for (std::size_t i = 0; i < chunk; ++i) {
      // Rising ramp over the head of every chunk but the first, falling ramp
      // over the tail of every chunk but the last; the pair sums to one.
      float w = 1.0f;
      if (c > 0 && i < ov) w = static_cast<float>(i + 1) / static_cast<float>(ov + 1);
      if (c + 1 < n_chunks && i >= chunk - ov) {
        w = 1.0f - static_cast<float>(i - (chunk - ov) + 1) / static_cast<float>(ov + 1);
      }
      out[pos + i] += w * y[i];
      weight[pos + i] += w;
    }
  }
  // Weights already sum to one unless more than two chunks overlap.
  for (std::size_t i = 0; i < len; ++i) out[i] /= weight[i];
  out.resize(len);
  return out;
}

SeparationResult separate_track(const Separator& sep, const StereoTrack& mixture) {
  mixture.validate();
  SeparationResult result;
  for (std::size_t s = 0; s < kStemCount; ++s) {
    auto& track = result.stems[s];
    track.sample_rate = mixture.sample_rate;
    track.left = separate_channel(sep, kStemNames[s], mixture.left);
    track.right = separate_channel(sep, kStemNames[s], mixture.right);
  }
  return result;
}

}  // namespace stemvq
