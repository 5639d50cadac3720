#include "stemvq/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "stemvq/errors.hpp"

namespace stemvq {

namespace {

using Clock = std::chrono::steady_clock;

// Salts separating the random streams derived from one seed.
constexpr std::uint64_t kDataSalt = 0x64617461;   // "data"
constexpr std::uint64_t kResetSalt = 0x72657365;  // "rese"
constexpr std::uint64_t kMixEncoderSalt = 0x6d697865;
constexpr std::uint64_t kCodebookInitSalt = 0x696e6974;  // "init"

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void check_songs(const std::vector<SongFolder>& songs, const std::string& label, const ModelConfig& config) {
  if (songs.empty()) throw DataError("training set is empty");
  if (label != "mixture" && !is_stem_name(label)) {
    throw PreconditionError("unknown training source '" + label + "'");
  }
  for (const auto& s : songs) {
    if (s.sample_rate() != config.sample_rate) {
      throw DataError(s.name + ": sample rate " + std::to_string(s.sample_rate()) + " Hz does not match model rate " +
                      std::to_string(config.sample_rate) + " Hz (resampling is not supported)");
    }
    if (s.length() < config.chunk_len) {
      throw DataError(s.name + ": " + std::to_string(s.length()) + " samples is shorter than chunk_len " +
                      std::to_string(config.chunk_len));
    }
  }
}

std::vector<BasicTensor<float>> tensors_of(const ParameterList<float>& params) {
  std::vector<BasicTensor<float>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

void zero_grads(std::vector<BasicTensor<float>>& params) {
  for (auto& p : params) p.zero_grad();
}

// Overwrites every prototype with a distinct encoder output drawn from random
// training chunks, so quantization starts where the encoder puts its latents.
void init_codebook_from_data(VqVae<float>& model, const std::vector<SongFolder>& songs, const std::string& label,
                             std::size_t batch_size, std::uint64_t seed) {
  const ModelConfig& config = model.config;
  const std::size_t n_codes = config.codebook_size, d = config.latent_dim;
  const std::size_t rows_per_chunk = config.chunk_len / config.hop_length();
  const std::size_t chunks = std::max(batch_size, (n_codes + rows_per_chunk - 1) / rows_per_chunk);
  Rng rng(Rng::mix(seed ^ kCodebookInitSalt));
  std::vector<float> pool;
  {
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < chunks; ++i) {
      const auto& song = songs[rng.below(songs.size())];
      const auto chunk = sample_training_chunk(song, label, config.chunk_len, rng);
      const auto latents = encode(model, audio_tensor<float>(chunk.source));
      const auto e = latents.values.data();
      pool.insert(pool.end(), e.begin(), e.end());
    }
  }
  const std::size_t rows = pool.size() / d;
  std::vector<std::size_t> order(rows);
  for (std::size_t i = 0; i < rows; ++i) order[i] = i;
  auto protos = model.codebook.prototypes.mutable_data();
  for (std::size_t k = 0; k < n_codes; ++k) {
    const std::size_t j = k + rng.below(rows - k);
    std::swap(order[k], order[j]);
    std::copy_n(pool.data() + order[k] * d, d, protos.data() + k * d);
  }
}

double elapsed(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

void maybe_checkpoint(const TrainConfig& train, std::size_t step, const std::string& file_stem,
                      const std::function<Checkpoint()>& make) {
  if (!train.checkpoint_dir || train.checkpoint_every == 0 || step % train.checkpoint_every != 0) return;
  std::filesystem::create_directories(*train.checkpoint_dir);
  save_checkpoint(make(), *train.checkpoint_dir / (file_stem + ".step" + std::to_string(step) + ".svq"));
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw PreconditionError("batch_size must be >= 1");
  if (!(adam.lr > 0)) throw PreconditionError("learning rate must be positive");
}

double TrainLog::head_median(double fraction) const {
  const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(records.size() * fraction));
  std::vector<double> v;
  for (std::size_t i = 0; i < std::min(n, records.size()); ++i) v.push_back(records[i].total);
  return median_of(std::move(v));
}

double TrainLog::tail_median(double fraction) const {
  const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(records.size() * fraction));
  std::vector<double> v;
  for (std::size_t i = records.size() - std::min(n, records.size()); i < records.size(); ++i) {
    v.push_back(records[i].total);
  }
  return median_of(std::move(v));
}

std::string phase1_role(const std::string& label) { return label == "mixture" ? "FULL" : "SE"; }

Phase1Result train_stem_phase1(const std::vector<SongFolder>& songs, const std::string& label,
                               const ModelConfig& config, const TrainConfig& train, const TrainHooks& hooks) {
  config.validate();
  train.validate();
  check_songs(songs, label, config);

  Phase1Result result;
  if (train.init_checkpoint) {
    const Checkpoint init = load_checkpoint(*train.init_checkpoint);
    if (!(init.config == config)) {
      throw PreconditionError("init checkpoint " + train.init_checkpoint->string() +
                              " was trained with a different model config");
    }
    result.model = restore_vqvae(init);
  } else {
    result.model = build_vqvae<float>(config, train.seed);
  }
  auto& model = result.model;
  model.role = EncoderRole::stem;
  auto params = tensors_of(model.parameters());
  AdamState<float> adam(train.adam);
  Rng data_rng(Rng::mix(train.seed ^ kDataSalt));
  Rng reset_rng(Rng::mix(train.seed ^ kResetSalt));

  const std::size_t n_codes = config.codebook_size;
  const std::size_t d = config.latent_dim;
  std::vector<std::size_t> last_used(n_codes, 0);
  std::vector<float> batch_latents;
  const float inv_batch = 1.0f / static_cast<float>(train.batch_size);
  const auto start = Clock::now();
  const std::string role = phase1_role(label);

  if (train.data_init_codebook && !train.init_checkpoint && train.steps > 0) {
    init_codebook_from_data(model, songs, label, train.batch_size, train.seed);
  }

  for (std::size_t step = 1; step <= train.steps; ++step) {
    zero_grads(params);
    TrainRecord rec;
    rec.step = step;
    batch_latents.clear();
    for (std::size_t b = 0; b < train.batch_size; ++b) {
      const auto& song = songs[data_rng.below(songs.size())];
      const auto chunk = sample_training_chunk(song, label, config.chunk_len, data_rng);
      auto pass = forward_with_losses(model, audio_tensor<float>(chunk.source));
      backward(scale(pass.total_loss, inv_batch));
      rec.recons += pass.losses.recons / train.batch_size;
      rec.codebook_loss += pass.losses.codebook_loss / train.batch_size;
      rec.commit += pass.losses.commit / train.batch_size;
      rec.total += pass.losses.total / train.batch_size;
      for (auto k : pass.indices) last_used[static_cast<std::size_t>(k)] = step;
      const auto e = pass.latents.values.data();
      batch_latents.insert(batch_latents.end(), e.begin(), e.end());
    }
    if (!std::isfinite(rec.total)) {
      char msg[256];
      std::snprintf(msg, sizeof msg, "non-finite loss at step %zu (recons=%g codebook=%g commit=%g)", step,
                    rec.recons, rec.codebook_loss, rec.commit);
      throw NumericError(msg);
    }
    rec.grad_norm = clip_grad_norm(params, train.clip_norm);
    if (!std::isfinite(rec.grad_norm)) {
      throw NumericError("non-finite gradient norm at step " + std::to_string(step));
    }
    adam.step(params);

    if (train.dead_code_steps > 0) {
      auto protos = model.codebook.prototypes.mutable_data();
      const std::size_t rows = batch_latents.size() / d;
      for (std::size_t k = 0; k < n_codes; ++k) {
        if (step - last_used[k] < train.dead_code_steps) continue;
        const std::size_t src = reset_rng.below(rows);
        std::copy_n(batch_latents.data() + src * d, d, protos.data() + k * d);
        last_used[k] = step;
        ++result.log.dead_code_resets;
      }
    }

    rec.seconds = elapsed(start);
    result.log.records.push_back(rec);
    if (hooks.progress && train.log_every > 0 && (step % train.log_every == 0 || step == train.steps)) {
      char line[256];
      std::snprintf(line, sizeof line, "[%s %s] step %zu/%zu recons %.6g codebook %.4g commit %.4g |g| %.3g %.1fs\n",
                    label.c_str(), role.c_str(), step, train.steps, rec.recons, rec.codebook_loss, rec.commit,
                    rec.grad_norm, rec.seconds);
      *hooks.progress << line << std::flush;
    }
    maybe_checkpoint(train, step, label + "." + (role == "FULL" ? "full" : "se"),
                     [&] { return make_checkpoint(model, label, role, step); });
    if (hooks.on_phase1_step) hooks.on_phase1_step(step, model);
  }
  result.log.seconds = elapsed(start);
  return result;
}

Phase2Result train_mixture_phase2(const std::vector<SongFolder>& songs, const std::string& label,
                                  const Checkpoint& stem_ckpt, const ModelConfig& config, const TrainConfig& train,
                                  const TrainHooks& hooks) {
  config.validate();
  train.validate();
  check_songs(songs, label, config);
  if (!(stem_ckpt.config == config)) {
    throw PreconditionError("stem checkpoint for '" + stem_ckpt.stem +
                            "' has a different architecture than the mixture encoder config");
  }
  if (stem_ckpt.role == "ME") throw PreconditionError("phase 2 needs an SE checkpoint, got an ME checkpoint");
  const VqVae<float> stem_model = restore_vqvae(stem_ckpt, /*requires_grad=*/false);

  Phase2Result result;
  result.encoder = build_encoder<float>(config, Rng::mix(train.seed ^ kMixEncoderSalt));
  auto params = tensors_of(result.encoder.parameters());
  AdamState<float> adam(train.adam);
  Rng data_rng(Rng::mix(train.seed ^ kDataSalt));
  const float inv_batch = 1.0f / static_cast<float>(train.batch_size);
  const auto start = Clock::now();

  for (std::size_t step = 1; step <= train.steps; ++step) {
    zero_grads(params);
    TrainRecord rec;
    rec.step = step;
    for (std::size_t b = 0; b < train.batch_size; ++b) {
      const auto& song = songs[data_rng.below(songs.size())];
      const auto chunk = sample_training_chunk(song, label, config.chunk_len, data_rng);
      BasicTensor<float> target;
      {
        NoGradGuard no_grad;
        auto e_st = encode(stem_model, audio_tensor<float>(chunk.source));
        target = train.post_quantization_target ? quantize(stem_model.codebook, e_st).quantized.values : e_st.values;
      }
      auto e_mt = encode(result.encoder, audio_tensor<float>(chunk.mixture));
      auto loss = mse(e_mt.values, target);
      backward(scale(loss, inv_batch));
      rec.total += static_cast<double>(loss.item()) / train.batch_size;
    }
    if (!std::isfinite(rec.total)) throw NumericError("non-finite alignment loss at step " + std::to_string(step));
    rec.grad_norm = clip_grad_norm(params, train.clip_norm);
    if (!std::isfinite(rec.grad_norm)) {
      throw NumericError("non-finite gradient norm at step " + std::to_string(step));
    }
    adam.step(params);

    rec.seconds = elapsed(start);
    result.log.records.push_back(rec);
    if (hooks.progress && train.log_every > 0 && (step % train.log_every == 0 || step == train.steps)) {
      char line[192];
      std::snprintf(line, sizeof line, "[%s ME] step %zu/%zu align %.6g |g| %.3g %.1fs\n", label.c_str(), step,
                    train.steps, rec.total, rec.grad_norm, rec.seconds);
      *hooks.progress << line << std::flush;
    }
    maybe_checkpoint(train, step, label + ".me", [&] { return make_checkpoint(result.encoder, label, step); });
    if (hooks.on_phase2_step) hooks.on_phase2_step(step, result.encoder);
  }
  result.log.seconds = elapsed(start);
  return result;
}

std::vector<std::vector<float>> fixed_chunks(const std::vector<SongFolder>& songs, const std::string& label,
                                             std::size_t chunk_len, std::size_t count, std::uint64_t seed) {
  if (songs.empty()) throw DataError("no songs to draw chunks from");
  Rng rng(Rng::mix(seed));
  std::vector<std::vector<float>> chunks;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& song = songs[i % songs.size()];
    chunks.push_back(sample_training_chunk(song, label, chunk_len, rng).source);
  }
  return chunks;
}

double evaluate_recons(const VqVae<float>& model, const std::vector<std::vector<float>>& chunks) {
  if (chunks.empty()) throw PreconditionError("evaluate_recons: no chunks");
  NoGradGuard no_grad;
  double sum = 0;
  for (const auto& c : chunks) sum += forward_with_losses(model, audio_tensor<float>(c)).losses.recons;
  return sum / static_cast<double>(chunks.size());
}

}  // namespace stemvq
