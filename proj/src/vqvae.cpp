#include "stemvq/vqvae.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "stemvq/errors.hpp"

namespace stemvq {

std::string role_tag(EncoderRole role) { return role == EncoderRole::stem ? "SE" : "ME"; }

namespace {

// Strided level geometry: kernel - 2 * padding == stride, so a level maps
// T to exactly T / stride and its transpose maps back.
std::size_t level_padding(std::size_t stride) { return stride / 2; }
std::size_t level_kernel(std::size_t stride) { return stride + 2 * level_padding(stride); }

constexpr std::size_t kDilatedKernel = 3;
constexpr std::size_t kEdgeKernel = 3;

template <class S>
BasicTensor<S> uniform_tensor(Shape shape, double bound, Rng& rng, bool requires_grad) {
  std::vector<S> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<S>(rng.uniform(-bound, bound));
  return BasicTensor<S>::from_data(std::move(shape), std::move(data), requires_grad);
}

// Fan-in scaled uniform init for weight and bias.
template <class S>
ConvLayer<S> make_conv(std::size_t cin, std::size_t cout, std::size_t k, ConvOptions opt, Rng& rng,
                       bool requires_grad) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k));
  ConvLayer<S> layer;
  layer.weight = uniform_tensor<S>({cout, cin, k}, bound, rng, requires_grad);
  layer.bias = uniform_tensor<S>({cout}, bound, rng, requires_grad);
  layer.options = opt;
  return layer;
}

template <class S>
ConvTransposeLayer<S> make_conv_transpose(std::size_t cin, std::size_t cout, std::size_t stride, Rng& rng,
                                          bool requires_grad) {
  const std::size_t k = level_kernel(stride);
  // Each output sample sees cin * k / stride taps on average.
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k) / static_cast<double>(stride));
  ConvTransposeLayer<S> layer;
  layer.weight = uniform_tensor<S>({cin, cout, k}, bound, rng, requires_grad);
  layer.bias = uniform_tensor<S>({cout}, bound, rng, requires_grad);
  layer.stride = stride;
  layer.padding = level_padding(stride);
  return layer;
}

template <class S>
ResidualBlock<S> make_block(std::size_t width, std::size_t dilation, Rng& rng, bool requires_grad) {
  ResidualBlock<S> block;
  block.dilated = make_conv<S>(width, width, kDilatedKernel, {1, dilation, dilation}, rng, requires_grad);
  block.pointwise = make_conv<S>(width, width, 1, {}, rng, requires_grad);
  return block;
}

std::size_t dilation_at(const ModelConfig& c, std::size_t j) {
  std::size_t d = 1;
  for (std::size_t i = 0; i < j; ++i) d *= c.dilation_growth;
  return d;
}

template <class S>
void append(ParameterList<S>& out, const std::string& prefix, const ConvLayer<S>& layer) {
  out.push_back({prefix + ".weight", layer.weight});
  out.push_back({prefix + ".bias", layer.bias});
}

template <class S>
void append(ParameterList<S>& out, const std::string& prefix, const ConvTransposeLayer<S>& layer) {
  out.push_back({prefix + ".weight", layer.weight});
  out.push_back({prefix + ".bias", layer.bias});
}

template <class S>
void append(ParameterList<S>& out, const std::string& prefix, const ResidualBlock<S>& block) {
  append(out, prefix + ".dilated", block.dilated);
  append(out, prefix + ".pointwise", block.pointwise);
}

}  // namespace

template <class S>
BasicTensor<S> ResidualBlock<S>::forward(const BasicTensor<S>& x) const {
  return add(x, pointwise.forward(relu(dilated.forward(relu(x)))));
}

template <class S>
Encoder<S>::Encoder(const ModelConfig& config, Rng& rng, bool requires_grad) : config_(config) {
  config.validate();
  const std::size_t w = config.width;
  input_ = make_conv<S>(1, w, kEdgeKernel, {1, 1, kEdgeKernel / 2}, rng, requires_grad);
  for (std::size_t l = 0; l < config.n_down; ++l) {
    Level level;
    level.down = make_conv<S>(w, w, level_kernel(config.stride), {config.stride, 1, level_padding(config.stride)},
                              rng, requires_grad);
    for (std::size_t j = 0; j < config.depth; ++j) {
      level.blocks.push_back(make_block<S>(w, dilation_at(config, j), rng, requires_grad));
    }
    levels_.push_back(std::move(level));
  }
  output_ = make_conv<S>(w, config.latent_dim, kEdgeKernel, {1, 1, kEdgeKernel / 2}, rng, requires_grad);
}

template <class S>
BasicTensor<S> Encoder<S>::forward(const BasicTensor<S>& audio) const {
  auto h = input_.forward(audio);
  for (const auto& level : levels_) {
    h = level.down.forward(h);
    for (const auto& block : level.blocks) h = block.forward(h);
  }
  return output_.forward(h);
}

template <class S>
ParameterList<S> Encoder<S>::parameters() const {
  ParameterList<S> out;
  append(out, "encoder.input", input_);
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    const auto prefix = "encoder.level" + std::to_string(l);
    append(out, prefix + ".down", levels_[l].down);
    for (std::size_t j = 0; j < levels_[l].blocks.size(); ++j) {
      append(out, prefix + ".block" + std::to_string(j), levels_[l].blocks[j]);
    }
  }
  append(out, "encoder.output", output_);
  return out;
}

template <class S>
Decoder<S>::Decoder(const ModelConfig& config, Rng& rng, bool requires_grad) : config_(config) {
  config.validate();
  const std::size_t w = config.width;
  input_ = make_conv<S>(config.latent_dim, w, kEdgeKernel, {1, 1, kEdgeKernel / 2}, rng, requires_grad);
  for (std::size_t l = 0; l < config.n_down; ++l) {
    Level level;
    // Dilations run in reverse so the decoder mirrors the encoder.
    for (std::size_t j = config.depth; j-- > 0;) {
      level.blocks.push_back(make_block<S>(w, dilation_at(config, j), rng, requires_grad));
    }
    level.up = make_conv_transpose<S>(w, w, config.stride, rng, requires_grad);
    levels_.push_back(std::move(level));
  }
  output_ = make_conv<S>(w, 1, kEdgeKernel, {1, 1, kEdgeKernel / 2}, rng, requires_grad);
}

template <class S>
BasicTensor<S> Decoder<S>::forward(const BasicTensor<S>& latents) const {
  auto h = input_.forward(latents);
  for (const auto& level : levels_) {
    for (const auto& block : level.blocks) h = block.forward(h);
    h = level.up.forward(h);
  }
  return output_.forward(relu(h));
}

template <class S>
ParameterList<S> Decoder<S>::parameters() const {
  ParameterList<S> out;
  append(out, "decoder.input", input_);
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    const auto prefix = "decoder.level" + std::to_string(l);
    for (std::size_t j = 0; j < levels_[l].blocks.size(); ++j) {
      append(out, prefix + ".block" + std::to_string(j), levels_[l].blocks[j]);
    }
    append(out, prefix + ".up", levels_[l].up);
  }
  append(out, "decoder.output", output_);
  return out;
}

template <class S>
Codebook<S> make_codebook(std::size_t size, std::size_t dim, Rng& rng, bool requires_grad) {
  const double bound = 1.0 / static_cast<double>(size);
  return Codebook<S>{uniform_tensor<S>({size, dim}, bound, rng, requires_grad)};
}

template <class S>
ParameterList<S> VqVae<S>::parameters() const {
  auto out = encoder.parameters();
  out.push_back({"codebook.prototypes", codebook.prototypes});
  for (auto& p : decoder.parameters()) out.push_back(std::move(p));
  return out;
}

template <class S>
VqVae<S> build_vqvae(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  VqVae<S> model;
  model.config = config;
  model.role = EncoderRole::stem;
  model.encoder = Encoder<S>(config, rng);
  model.codebook = make_codebook<S>(config.codebook_size, config.latent_dim, rng);
  model.decoder = Decoder<S>(config, rng);
  return model;
}

template <class S>
Encoder<S> build_encoder(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  return Encoder<S>(config, rng);
}

template <class S>
LatentSequence<S> encode(const Encoder<S>& encoder, const BasicTensor<S>& audio) {
  const auto& config = encoder.config();
  if (audio.ndim() != 2 || audio.dim(0) != 1) {
    throw PreconditionError("encode: expected mono [1 x T] audio, got " + shape_string(audio.shape()));
  }
  const std::size_t hop = config.hop_length();
  if (audio.dim(1) % hop != 0) {
    throw PreconditionError("encode: length " + std::to_string(audio.dim(1)) + " is not a multiple of hop length " +
                            std::to_string(hop));
  }
  return LatentSequence<S>{transpose(encoder.forward(audio)), std::nullopt};
}

template <class S>
std::vector<std::int32_t> nearest_prototypes(const Codebook<S>& codebook, std::span<const S> latents,
                                             std::size_t length) {
  using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const std::size_t n = codebook.size(), d = codebook.dim();
  if (latents.size() != length * d) {
    throw PreconditionError("quantize: latent dim does not match codebook dim " + std::to_string(d));
  }
  const S* protos = codebook.prototypes.data().data();
  Eigen::Map<const RowMat> c(protos, n, d);
  Eigen::Map<const RowMat> e(latents.data(), length, d);

  // Fast pass: ||c||^2 - 2 e.c via GEMM, in row blocks that stay in cache.
  // Rounding can reorder near-ties, so every candidate within a safety
  // margin of the best is re-ranked with an exact double-precision distance.
  const Eigen::Matrix<S, 1, Eigen::Dynamic> c_sq = c.rowwise().squaredNorm().transpose();
  const double max_c_sq = static_cast<double>(c_sq.maxCoeff());
  const double max_c = std::sqrt(max_c_sq);
  // Forward error bound of a length-d dot product, doubled for the pair
  // being compared.
  const double rel = std::numeric_limits<S>::epsilon() * static_cast<double>(2 * d + 8);

  constexpr std::size_t block = 32;
  RowMat scores(std::min(block, length), n);
  std::vector<std::int32_t> indices(length);
  for (std::size_t t0 = 0; t0 < length; t0 += block) {
    const std::size_t rows = std::min(block, length - t0);
    auto sb = scores.topRows(rows);
    sb.noalias() = S(-2) * (e.middleRows(t0, rows) * c.transpose());
    sb.rowwise() += c_sq;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t t = t0 + r;
      const S* row = scores.data() + r * n;
      const S* et = latents.data() + t * d;
      const S best = sb.row(r).minCoeff();
      double e_sq = 0;
      for (std::size_t k = 0; k < d; ++k) e_sq += static_cast<double>(et[k]) * et[k];
      const double margin = rel * (2.0 * std::sqrt(e_sq) * max_c + max_c_sq) + 1e-30;
      const double cutoff = static_cast<double>(best) + margin;

      double best_exact = std::numeric_limits<double>::infinity();
      std::int32_t best_index = -1;
      for (std::size_t k = 0; k < n; ++k) {
        if (static_cast<double>(row[k]) > cutoff) continue;
        const S* ck = protos + k * d;
        double dist = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = static_cast<double>(et[j]) - static_cast<double>(ck[j]);
          dist += diff * diff;
        }
        if (dist < best_exact) {
          best_exact = dist;
          best_index = static_cast<std::int32_t>(k);
        }
      }
      indices[t] = best_index;
    }
  }
  return indices;
}

template <class S>
QuantizeResult<S> quantize(const Codebook<S>& codebook, const LatentSequence<S>& latents) {
  const auto& e = latents.values;
  if (e.ndim() != 2 || e.dim(1) != codebook.dim()) {
    throw PreconditionError("quantize: latents " + shape_string(e.shape()) + " do not match codebook dim " +
                            std::to_string(codebook.dim()));
  }
  QuantizeResult<S> result;
  result.indices = nearest_prototypes(codebook, e.data(), e.dim(0));
  auto q = gather_rows(codebook.prototypes, result.indices);
  result.codebook_loss = mse(detach(e), q);
  result.commit = mse(e, detach(q));
  // Straight-through: forwards q, backpropagates into e unchanged.
  auto straight = add(e, detach(subtract(q, e)));
  result.quantized = LatentSequence<S>{straight, result.indices};
  return result;
}

template <class S>
BasicTensor<S> decode(const Decoder<S>& decoder, const LatentSequence<S>& latents) {
  return decoder.forward(transpose(latents.values));
}

template <class S>
ForwardPass<S> forward_with_losses(const VqVae<S>& model, const BasicTensor<S>& audio) {
  ForwardPass<S> pass;
  pass.latents = encode(model, audio);
  auto q = quantize(model.codebook, pass.latents);
  pass.indices = q.indices;
  pass.output = decode(model, q.quantized);
  auto recons = mse(pass.output, audio);
  const S beta = static_cast<S>(model.config.beta);
  pass.total_loss = add(add(recons, q.codebook_loss), scale(q.commit, beta));
  pass.losses.recons = recons.item();
  pass.losses.codebook_loss = q.codebook_loss.item();
  pass.losses.commit = q.commit.item();
  pass.losses.total = pass.total_loss.item();
  return pass;
}

template <class S>
BasicTensor<S> audio_tensor(std::span<const float> samples) {
  if (samples.empty()) throw PreconditionError("audio_tensor: empty signal");
  return BasicTensor<S>::from_data({1, samples.size()}, std::vector<S>(samples.begin(), samples.end()));
}

#define STEMVQ_INSTANTIATE_VQVAE(S)                                                                         \
  template struct ResidualBlock<S>;                                                                         \
  template class Encoder<S>;                                                                                \
  template class Decoder<S>;                                                                                \
  template struct VqVae<S>;                                                                                 \
  template Codebook<S> make_codebook(std::size_t, std::size_t, Rng&, bool);                                 \
  template VqVae<S> build_vqvae(const ModelConfig&, std::uint64_t);                                         \
  template Encoder<S> build_encoder(const ModelConfig&, std::uint64_t);                                     \
  template LatentSequence<S> encode(const Encoder<S>&, const BasicTensor<S>&);                              \
  template std::vector<std::int32_t> nearest_prototypes(const Codebook<S>&, std::span<const S>, std::size_t); \
  template QuantizeResult<S> quantize(const Codebook<S>&, const LatentSequence<S>&);                        \
  template BasicTensor<S> decode(const Decoder<S>&, const LatentSequence<S>&);                              \
  template ForwardPass<S> forward_with_losses(const VqVae<S>&, const BasicTensor<S>&);                      \
  template BasicTensor<S> audio_tensor<S>(std::span<const float>);

STEMVQ_INSTANTIATE_VQVAE(float)
STEMVQ_INSTANTIATE_VQVAE(double)

#undef STEMVQ_INSTANTIATE_VQVAE

}  // namespace stemvq
