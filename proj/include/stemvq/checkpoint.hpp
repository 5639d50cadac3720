#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stemvq/errors.hpp"
#include "stemvq/model_config.hpp"
#include "stemvq/vqvae.hpp"

namespace stemvq {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

class CheckpointMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

// Role tags: "SE" (stem VQ-VAE), "ME" (mixture encoder only), "FULL"
// (VQ-VAE trained on mixtures, used as a generic initialization).
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string stem;
  std::string role;
  std::uint64_t step = 0;
  ModelConfig config;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const;
};

// Little-endian: "SVQ1", u32 version, stem and role strings (u32 length +
// bytes), u64 step, u32 count of config key=value lines, u32 tensor count,
// then per tensor: name, u32 ndim, u32 dims, float32 data.
std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::vector<unsigned char>& bytes, const std::string& origin = "checkpoint");

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
// Validates magic, version, framing and that tensor shapes agree with the
// architecture the embedded ModelConfig describes.
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const VqVae<float>& model, const std::string& stem, const std::string& role,
                           std::uint64_t step);
Checkpoint make_checkpoint(const Encoder<float>& encoder, const std::string& stem, std::uint64_t step);

// Rebuilds a model from a checkpoint holding encoder, codebook and decoder.
VqVae<float> restore_vqvae(const Checkpoint& ckpt, bool requires_grad = true);
// Rebuilds the encoder from any checkpoint that contains "encoder." tensors.
Encoder<float> restore_encoder(const Checkpoint& ckpt, bool requires_grad = true);

// Copies values by name; throws CheckpointError on missing names or shape
// mismatches.
void load_parameters(const ParameterList<float>& params, const Checkpoint& ckpt);

}  // namespace stemvq
