#pragma once

#include <cstddef>
#include <map>
#include <string>

namespace stemvq {

// Architecture and geometry of one VQ-VAE. Defaults: 64-dim latents, 2048
// prototypes, three stride-2 downsampling levels (hop 8), desk-scale width.
struct ModelConfig {
  std::size_t latent_dim = 64;
  std::size_t codebook_size = 2048;
  std::size_t n_down = 3;
  std::size_t stride = 2;
  std::size_t width = 32;
  std::size_t depth = 2;
  std::size_t dilation_growth = 3;
  std::size_t sample_rate = 8000;
  std::size_t chunk_len = 8192;
  // Commit weight. With gradient-trained prototypes a weak pull lets encoder
  // outputs drift away from the codebook faster than it can follow.
  double beta = 0.25;

  std::size_t hop_length() const;
  // Throws PreconditionError describing the first violated invariant.
  void validate() const;

  // Ordered key=value form used by checkpoints and config files.
  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);

  bool operator==(const ModelConfig&) const = default;
};

// Full-scale geometry: 393216-sample chunks at 44.1 kHz.
ModelConfig full_scale_config();

}  // namespace stemvq
