#include "stemvq/model_config.hpp"

#include "stemvq/errors.hpp"
#include "stemvq/kv.hpp"

namespace stemvq {

std::size_t ModelConfig::hop_length() const {
  std::size_t hop = 1;
  for (std::size_t i = 0; i < n_down; ++i) hop *= stride;
  return hop;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw PreconditionError("invalid model config: " + msg); };
  if (latent_dim < 1) fail("latent_dim must be >= 1");
  if (codebook_size < 2) fail("codebook_size must be >= 2");
  if (stride < 1) fail("stride must be >= 1");
  if (width < 1) fail("width must be >= 1");
  if (dilation_growth < 1) fail("dilation_growth must be >= 1");
  if (sample_rate < 1) fail("sample_rate must be >= 1");
  if (!(beta >= 0.0)) fail("beta must be >= 0");
  if (chunk_len < 1 || chunk_len % hop_length() != 0) {
    fail("chunk_len " + std::to_string(chunk_len) + " is not a positive multiple of hop length " +
         std::to_string(hop_length()));
  }
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {
      {"latent_dim", std::to_string(latent_dim)},
      {"codebook_size", std::to_string(codebook_size)},
      {"n_down", std::to_string(n_down)},
      {"stride", std::to_string(stride)},
      {"width", std::to_string(width)},
      {"depth", std::to_string(depth)},
      {"dilation_growth", std::to_string(dilation_growth)},
      {"sample_rate", std::to_string(sample_rate)},
      {"chunk_len", std::to_string(chunk_len)},
      {"beta", format_double(beta)},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  for (const auto& [key, value] : kv) {
    if (key == "latent_dim") c.latent_dim = parse_size(key, value);
    else if (key == "codebook_size") c.codebook_size = parse_size(key, value);
    else if (key == "n_down") c.n_down = parse_size(key, value);
    else if (key == "stride") c.stride = parse_size(key, value);
    else if (key == "width") c.width = parse_size(key, value);
    else if (key == "depth") c.depth = parse_size(key, value);
    else if (key == "dilation_growth") c.dilation_growth = parse_size(key, value);
    else if (key == "sample_rate") c.sample_rate = parse_size(key, value);
    else if (key == "chunk_len") c.chunk_len = parse_size(key, value);
    else if (key == "beta") c.beta = parse_double(key, value);
    else throw ConfigError("model config: unknown key '" + key + "'");
  }
  return c;
}

ModelConfig full_scale_config() {
  ModelConfig c;
  c.sample_rate = 44100;
  c.chunk_len = 393216;
  return c;
}

}  // namespace stemvq
