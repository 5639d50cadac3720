#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stemvq/errors.hpp"
#include "stemvq/model_config.hpp"
#include "stemvq/ops.hpp"
#include "stemvq/random.hpp"
#include "stemvq/tensor.hpp"

namespace stemvq {

// Which input distribution an encoder was trained on: an isolated stem (SE)
// or the full mixture (ME).
enum class EncoderRole { stem, mixture };

std::string role_tag(EncoderRole role);

template <class S>
struct NamedParameter {
  std::string name;
  BasicTensor<S> tensor;
};

template <class S>
using ParameterList = std::vector<NamedParameter<S>>;

template <class S>
struct ConvLayer {
  BasicTensor<S> weight;  // [C_out x C_in x K]
  BasicTensor<S> bias;    // [C_out]
  ConvOptions options;

  BasicTensor<S> forward(const BasicTensor<S>& x) const { return conv1d(x, weight, bias, options); }
};

template <class S>
struct ConvTransposeLayer {
  BasicTensor<S> weight;  // [C_in x C_out x K]
  BasicTensor<S> bias;    // [C_out]
  std::size_t stride = 1;
  std::size_t padding = 0;

  BasicTensor<S> forward(const BasicTensor<S>& x) const {
    return conv1d_transpose(x, weight, bias, stride, padding);
  }
};

// x + pointwise(relu(dilated(relu(x))))
template <class S>
struct ResidualBlock {
  ConvLayer<S> dilated;
  ConvLayer<S> pointwise;

  BasicTensor<S> forward(const BasicTensor<S>& x) const;
};

// Strided convolutions interleaved with dilated residual stacks, mapping
// [1 x T] audio to [latent_dim x T/hop].
template <class S>
class Encoder {
 public:
  struct Level {
    ConvLayer<S> down;
    std::vector<ResidualBlock<S>> blocks;
  };

  Encoder() = default;
  Encoder(const ModelConfig& config, Rng& rng, bool requires_grad = true);

  BasicTensor<S> forward(const BasicTensor<S>& audio) const;
  ParameterList<S> parameters() const;
  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  ConvLayer<S> input_;
  std::vector<Level> levels_;
  ConvLayer<S> output_;
};

// Mirror of Encoder with transposed convolutions: [latent_dim x L] -> [1 x L*hop].
template <class S>
class Decoder {
 public:
  struct Level {
    std::vector<ResidualBlock<S>> blocks;
    ConvTransposeLayer<S> up;
  };

  Decoder() = default;
  Decoder(const ModelConfig& config, Rng& rng, bool requires_grad = true);

  BasicTensor<S> forward(const BasicTensor<S>& latents) const;
  ParameterList<S> parameters() const;

 private:
  ModelConfig config_;
  ConvLayer<S> input_;
  std::vector<Level> levels_;
  ConvLayer<S> output_;
};

template <class S>
struct Codebook {
  BasicTensor<S> prototypes;  // [codebook_size x latent_dim]

  std::size_t size() const { return prototypes.dim(0); }
  std::size_t dim() const { return prototypes.dim(1); }
};

// Prototype rows drawn uniformly from [-1/size, 1/size].
template <class S>
Codebook<S> make_codebook(std::size_t size, std::size_t dim, Rng& rng, bool requires_grad = true);

template <class S>
struct LatentSequence {
  BasicTensor<S> values;  // [length x latent_dim]
  std::optional<std::vector<std::int32_t>> indices;

  std::size_t length() const { return values.dim(0); }
  std::size_t latent_dim() const { return values.dim(1); }
};

template <class S>
struct VqVae {
  ModelConfig config;
  EncoderRole role = EncoderRole::stem;
  Encoder<S> encoder;
  Codebook<S> codebook;
  Decoder<S> decoder;

  // Every trainable tensor under stable "encoder.", "codebook.", "decoder."
  // names, in initialization order.
  ParameterList<S> parameters() const;
};

template <class S>
VqVae<S> build_vqvae(const ModelConfig& config, std::uint64_t seed);

// Fresh encoder from its own seed, as used for a mixture encoder.
template <class S>
Encoder<S> build_encoder(const ModelConfig& config, std::uint64_t seed);

// Continuous latents e = E(x) for x of shape [1 x T], T a multiple of hop.
template <class S>
LatentSequence<S> encode(const Encoder<S>& encoder, const BasicTensor<S>& audio);
template <class S>
LatentSequence<S> encode(const VqVae<S>& model, const BasicTensor<S>& audio) {
  return encode(model.encoder, audio);
}

// Index of the euclidean-nearest prototype for each row of `latents`
// ([length x dim] row-major); ties go to the lowest index.
template <class S>
std::vector<std::int32_t> nearest_prototypes(const Codebook<S>& codebook, std::span<const S> latents,
                                             std::size_t length);

template <class S>
struct QuantizeResult {
  std::vector<std::int32_t> indices;
  // Forwards the selected prototypes; gradients pass straight through to e.
  LatentSequence<S> quantized;
  BasicTensor<S> codebook_loss;  // mse(detach(e), q): reaches prototypes only
  BasicTensor<S> commit;         // mse(e, detach(q)): reaches the encoder only
};

template <class S>
QuantizeResult<S> quantize(const Codebook<S>& codebook, const LatentSequence<S>& latents);

template <class S>
BasicTensor<S> decode(const Decoder<S>& decoder, const LatentSequence<S>& latents);
template <class S>
BasicTensor<S> decode(const VqVae<S>& model, const LatentSequence<S>& latents) {
  if (latents.latent_dim() != model.config.latent_dim) {
    throw PreconditionError("decode: latent dim " + std::to_string(latents.latent_dim()) + " != model latent dim " +
                            std::to_string(model.config.latent_dim));
  }
  return decode(model.decoder, latents);
}

struct LossBreakdown {
  double recons = 0;
  double codebook_loss = 0;
  double commit = 0;
  double total = 0;
};

template <class S>
struct ForwardPass {
  BasicTensor<S> output;      // y, [1 x T]
  BasicTensor<S> total_loss;  // differentiable total
  LossBreakdown losses;
  LatentSequence<S> latents;  // continuous e
  std::vector<std::int32_t> indices;
};

// y = D(q(E(x))) with L = recons + codebook + beta * commit.
template <class S>
ForwardPass<S> forward_with_losses(const VqVae<S>& model, const BasicTensor<S>& audio);

// Mono audio samples to a [1 x T] tensor.
template <class S>
BasicTensor<S> audio_tensor(std::span<const float> samples);

}  // namespace stemvq
