#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "stemvq/adam.hpp"
#include "stemvq/checkpoint.hpp"
#include "stemvq/dataset.hpp"
#include "stemvq/model_config.hpp"
#include "stemvq/vqvae.hpp"

namespace stemvq {

struct TrainConfig {
  std::size_t batch_size = 4;
  std::size_t steps = 8000;
  AdamOptions adam;
  std::uint64_t seed = 0;
  std::size_t log_every = 100;
  std::size_t checkpoint_every = 1000;
  double clip_norm = 1.0;  // <= 0 disables clipping
  // Prototypes unused for this many consecutive steps are re-seeded from
  // encoder outputs of the current batch; 0 disables.
  std::size_t dead_code_steps = 256;
  bool data_init_codebook = true;  // seed prototypes from encoder outputs before step 1
  // Periodic checkpoints go here when set.
  std::optional<std::filesystem::path> checkpoint_dir;
  // Phase 1 starts from these weights instead of random init.
  std::optional<std::filesystem::path> init_checkpoint;
  // Phase 2 regresses onto quantized SE latents instead of continuous ones.
  bool post_quantization_target = false;

  void validate() const;
};

struct TrainRecord {
  std::size_t step = 0;
  // Phase 1 fills all four; phase 2 uses `total` for the alignment MSE.
  double recons = 0;
  double codebook_loss = 0;
  double commit = 0;
  double total = 0;
  double grad_norm = 0;
  double seconds = 0;  // wall time since the run started
};

struct TrainLog {
  std::vector<TrainRecord> records;
  std::size_t dead_code_resets = 0;
  double seconds = 0;

  // Median of `total` over the first / last `fraction` of records.
  double head_median(double fraction = 0.1) const;
  double tail_median(double fraction = 0.1) const;
};

struct TrainHooks {
  // Called after every optimizer step with the updated model.
  std::function<void(std::size_t step, const VqVae<float>& model)> on_phase1_step;
  std::function<void(std::size_t step, const Encoder<float>& encoder)> on_phase2_step;
  // Progress lines every log_every steps; null for silence.
  std::ostream* progress = nullptr;
};

struct Phase1Result {
  VqVae<float> model;
  TrainLog log;
};

struct Phase2Result {
  Encoder<float> encoder;
  TrainLog log;
};

// Role tag written for a phase-1 model trained on `label`.
std::string phase1_role(const std::string& label);

// Trains encoder, codebook and decoder on isolated `label` chunks ("mixture"
// trains a generic model) with L = recons + codebook + beta * commit.
Phase1Result train_stem_phase1(const std::vector<SongFolder>& songs, const std::string& label,
                               const ModelConfig& config, const TrainConfig& train, const TrainHooks& hooks = {});

// Trains a fresh mixture encoder so ME(x_mt) matches the frozen SE(x_st).
Phase2Result train_mixture_phase2(const std::vector<SongFolder>& songs, const std::string& label,
                                  const Checkpoint& stem_ckpt, const ModelConfig& config, const TrainConfig& train,
                                  const TrainHooks& hooks = {});

// Deterministic set of mono chunks of `label` for held-out loss tracking.
std::vector<std::vector<float>> fixed_chunks(const std::vector<SongFolder>& songs, const std::string& label,
                                             std::size_t chunk_len, std::size_t count, std::uint64_t seed);

// Mean reconstruction MSE of `model` over `chunks`, without recording a graph.
double evaluate_recons(const VqVae<float>& model, const std::vector<std::vector<float>>& chunks);

}  // namespace stemvq
