#include "stemvq/cli.hpp"

#include <malloc.h>

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "stemvq/checkpoint.hpp"
#include "stemvq/dataset.hpp"
#include "stemvq/errors.hpp"
#include "stemvq/gradcheck.hpp"
#include "stemvq/kv.hpp"
#include "stemvq/metrics.hpp"
#include "stemvq/separation.hpp"
#include "stemvq/wav.hpp"

namespace stemvq {

namespace fs = std::filesystem;

const std::vector<std::string>& config_file_keys() {
  static const std::vector<std::string> keys = {
      "sample_rate", "chunk_len", "n_down",     "stride", "latent_dim", "codebook_size", "width", "depth",
      "dilation_growth", "beta",  "lr",         "batch_size", "steps",  "seed",          "overlap"};
  return keys;
}

void apply_setting(RunSettings& s, const std::string& key, const std::string& value) {
  if (key == "lr") {
    s.train.adam.lr = parse_double(key, value);
  } else if (key == "batch_size") {
    s.train.batch_size = parse_size(key, value);
  } else if (key == "steps") {
    s.train.steps = parse_size(key, value);
  } else if (key == "seed") {
    s.train.seed = parse_u64(key, value);
  } else if (key == "overlap") {
    s.overlap = parse_size(key, value);
  } else {
    auto kv = s.model.to_map();
    if (!kv.count(key)) throw ConfigError("unknown setting '" + key + "'");
    kv[key] = value;
    s.model = ModelConfig::from_map(kv);
  }
}

void apply_config_text(RunSettings& settings, const std::string& text, const std::string& origin) {
  const auto& keys = config_file_keys();
  for (const auto& e : parse_kv_text(text, origin)) {
    const std::string where = origin + ":" + std::to_string(e.line) + ": ";
    if (std::find(keys.begin(), keys.end(), e.key) == keys.end()) {
      throw ConfigError(where + "unknown key '" + e.key + "'");
    }
    try {
      apply_setting(settings, e.key, e.value);
    } catch (const ConfigError& err) {
      throw ConfigError(where + err.what());
    }
  }
}

void tune_allocator() {
  // Activation buffers are a few hundred KB to a few MB and are freed every
  // step; serving them from mmap means page faults on every allocation.
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
  mallopt(M_TOP_PAD, 64 * 1024 * 1024);
}

namespace {

// Config-key flags (--chunk-len for chunk_len, ...) layered over --config.
class SettingsOptions {
 public:
  void attach(CLI::App* app, bool with_config) {
    if (with_config) app->add_option("--config", config_path_, "key=value config file")->check(CLI::ExistingFile);
    for (const auto& key : config_file_keys()) {
      std::string flag = key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      options_.push_back({key, app->add_option("--" + flag, values_[key], "overrides config key " + key)});
    }
  }

  RunSettings resolve() const {
    RunSettings s;
    if (!config_path_.empty()) apply_config_text(s, read_text_file(config_path_), config_path_);
    for (const auto& [key, opt] : options_) {
      if (opt->count() > 0) {
        try {
          apply_setting(s, key, values_.at(key));
        } catch (const ConfigError& e) {
          throw ConfigError("--" + opt->get_name().substr(2) + ": " + e.what());
        }
      }
    }
    s.model.validate();
    s.train.validate();
    return s;
  }

 private:
  std::string config_path_;
  std::map<std::string, std::string> values_;
  std::vector<std::pair<std::string, CLI::Option*>> options_;
};

std::vector<SongFolder> load_split(const fs::path& root, const std::string& split, std::ostream& err) {
  std::vector<std::string> warnings;
  const auto entries = load_musdb_layout(root, split, &warnings);
  for (const auto& w : warnings) err << w << '\n';
  if (entries.empty()) throw DataError("no songs in " + (root / split).string());
  err << "loading " << entries.size() << " " << split << " songs from " << root.string() << '\n';
  return load_songs(entries);
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-phase VQ-VAE music source separation", "stemvq"};
  app.require_subcommand(1);

  // synth-data
  SynthSpec synth;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth-data", "Write a deterministic synthetic 4-stem corpus");
  synth_cmd->add_option("--out", synth_out, "output root")->required();
  synth_cmd->add_option("--songs", synth.songs, "total number of songs");
  synth_cmd->add_option("--test-songs", synth.test_songs, "songs placed in test/ (default: songs / 4)");
  synth_cmd->add_option("--seed", synth.seed, "generator seed");
  synth_cmd->add_option("--sample-rate", synth.sample_rate, "Hz");
  synth_cmd->add_option("--duration", synth.duration, "seconds per song");

  // train-stem
  std::string data_dir, stem, out_path, init_path, ckpt_dir;
  std::size_t log_every = 100, checkpoint_every = 1000;
  SettingsOptions stem_settings;
  auto* stem_cmd = app.add_subcommand("train-stem", "Phase 1: train a VQ-VAE on one isolated stem");
  stem_cmd->add_option("--data", data_dir, "dataset root (MUSDB layout)")->required();
  stem_cmd->add_option("--stem", stem, "drums|bass|vocals|other, or mixture for a generic model")->required();
  stem_cmd->add_option("--out", out_path, "output checkpoint")->required();
  stem_cmd->add_option("--init", init_path, "initialize from this checkpoint")->check(CLI::ExistingFile);
  stem_cmd->add_option("--checkpoint-dir", ckpt_dir, "directory for periodic checkpoints");
  stem_cmd->add_option("--checkpoint-every", checkpoint_every, "steps between periodic checkpoints");
  stem_cmd->add_option("--log-every", log_every, "steps between progress lines");
  stem_settings.attach(stem_cmd, true);

  // train-mix
  std::string stem_ckpt_path;
  bool post_quant = false;
  SettingsOptions mix_settings;
  auto* mix_cmd = app.add_subcommand("train-mix", "Phase 2: align a mixture encoder to a frozen stem encoder");
  mix_cmd->add_option("--data", data_dir, "dataset root (MUSDB layout)")->required();
  mix_cmd->add_option("--stem", stem, "drums|bass|vocals|other")->required();
  mix_cmd->add_option("--stem-ckpt", stem_ckpt_path, "phase-1 checkpoint")->required()->check(CLI::ExistingFile);
  mix_cmd->add_option("--out", out_path, "output checkpoint")->required();
  mix_cmd->add_option("--checkpoint-dir", ckpt_dir, "directory for periodic checkpoints");
  mix_cmd->add_option("--checkpoint-every", checkpoint_every, "steps between periodic checkpoints");
  mix_cmd->add_option("--log-every", log_every, "steps between progress lines");
  mix_cmd->add_flag("--post-quant", post_quant, "regress onto quantized stem latents");
  mix_settings.attach(mix_cmd, true);

  // separate
  std::string mixture_path, out_dir;
  std::size_t overlap = 0;
  auto* sep_cmd = app.add_subcommand("separate", "Split a mixture WAV into four stem WAVs");
  sep_cmd->add_option("--mixture", mixture_path, "input WAV")->required();
  sep_cmd->add_option("--ckpt-dir", ckpt_dir, "directory with <stem>.se.svq and <stem>.me.svq")->required();
  sep_cmd->add_option("--out-dir", out_dir, "output directory");
  sep_cmd->add_option("--overlap", overlap, "samples of crossfade between chunks");

  // evaluate
  std::string split = "test", report_path;
  double alpha = 0.25;
  auto* eval_cmd = app.add_subcommand("evaluate", "SDR of the separator on a dataset split");
  eval_cmd->add_option("--data", data_dir, "dataset root (MUSDB layout)")->required();
  eval_cmd->add_option("--split", split, "train|test");
  eval_cmd->add_option("--ckpt-dir", ckpt_dir, "directory with <stem>.se.svq and <stem>.me.svq")->required();
  eval_cmd->add_option("--report", report_path, "key=value report output")->required();
  eval_cmd->add_option("--overlap", overlap, "samples of crossfade between chunks");
  eval_cmd->add_option("--alpha", alpha, "scale of the scaled-mixture reference row");

  // gradcheck
  std::uint64_t gc_seed = 1;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc_cmd->add_option("--seed", gc_seed, "graph seed");

  if (!args.empty() && !args[0].empty() && args[0][0] != '-') {
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == args[0];
    if (!known) {
      err << "error: unknown subcommand '" << args[0] << "'\n\n" << app.help();
      return kExitUsage;
    }
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*synth_cmd) {
      if (synth_cmd->count("--test-songs") == 0) synth.test_songs = synth.songs / 4;
      synthesize_corpus(synth, synth_out);
      err << "wrote " << synth.songs << " songs (" << synth.test_songs << " test) to " << synth_out << '\n';
    } else if (*stem_cmd) {
      RunSettings s = stem_settings.resolve();
      s.train.log_every = log_every;
      s.train.checkpoint_every = checkpoint_every;
      if (!ckpt_dir.empty()) s.train.checkpoint_dir = ckpt_dir;
      if (!init_path.empty()) s.train.init_checkpoint = init_path;
      if (stem != "mixture") stem_index(stem);
      const auto songs = load_split(data_dir, "train", err);
      TrainHooks hooks;
      hooks.progress = &err;
      auto result = train_stem_phase1(songs, stem, s.model, s.train, hooks);
      ensure_parent(out_path);
      save_checkpoint(make_checkpoint(result.model, stem, phase1_role(stem), s.train.steps), out_path);
      err << "saved " << out_path << '\n';
    } else if (*mix_cmd) {
      RunSettings s = mix_settings.resolve();
      s.train.log_every = log_every;
      s.train.checkpoint_every = checkpoint_every;
      s.train.post_quantization_target = post_quant;
      if (!ckpt_dir.empty()) s.train.checkpoint_dir = ckpt_dir;
      stem_index(stem);
      const Checkpoint stem_ckpt = load_checkpoint(stem_ckpt_path);
      if (!(stem_ckpt.config == s.model)) {
        throw DataError(stem_ckpt_path + ": architecture differs from the configured mixture encoder");
      }
      const auto songs = load_split(data_dir, "train", err);
      TrainHooks hooks;
      hooks.progress = &err;
      auto result = train_mixture_phase2(songs, stem, stem_ckpt, s.model, s.train, hooks);
      ensure_parent(out_path);
      save_checkpoint(make_checkpoint(result.encoder, stem, s.train.steps), out_path);
      err << "saved " << out_path << '\n';
    } else if (*sep_cmd) {
      const Separator sep = load_separator(ckpt_dir, {overlap});
      const StereoTrack mixture = read_wav(mixture_path);
      if (mixture.sample_rate != sep.stems[0].config.sample_rate) {
        throw DataError(mixture_path + ": " + std::to_string(mixture.sample_rate) + " Hz, models expect " +
                        std::to_string(sep.stems[0].config.sample_rate) + " Hz");
      }
      const auto result = separate_track(sep, mixture);
      const fs::path dir = out_dir.empty() ? fs::path(".") : fs::path(out_dir);
      fs::create_directories(dir);
      for (std::size_t s = 0; s < kStemCount; ++s) {
        write_wav(result.stems[s], dir / (std::string(kStemNames[s]) + ".wav"));
      }
      err << "wrote 4 stems to " << dir.string() << '\n';
    } else if (*eval_cmd) {
      const Separator sep = load_separator(ckpt_dir, {overlap});
      const auto songs = load_split(data_dir, split, err);
      std::vector<TrackSdr> ours, floor;
      for (const auto& song : songs) {
        if (song.sample_rate() != sep.stems[0].config.sample_rate) {
          throw DataError(song.name + ": sample rate does not match the models");
        }
        const auto result = separate_track(sep, song.mixture);
        ours.push_back(evaluate_track(song.name, song.stems, result.stems));
        floor.push_back(evaluate_track(song.name, song.stems, scaled_mixture_baseline(song.mixture, alpha)));
        err << song.name << ": total " << fixed3(ours.back().total) << " dB\n";
      }
      const SdrReport report = aggregate_report(std::move(ours));
      const SdrReport baseline = aggregate_report(std::move(floor));
      ensure_parent(report_path);
      std::ofstream f(report_path, std::ios::binary | std::ios::trunc);
      if (!f) throw DataError("cannot write " + report_path);
      f << render_kv(report);
      if (!f) throw DataError("write failed for " + report_path);
      out << render_table({{"ScaledMixture(alpha=" + format_double(alpha) + ")", &baseline}, {"Ours", &report}});
    } else if (*gc_cmd) {
      const auto report = run_gradcheck_suite(gc_seed);
      for (const auto& c : report.cases) {
        out << (c.passed ? "PASS " : "FAIL ") << c.precision << " " << c.name << " rel_err=" << c.relative_error
            << " tol=" << c.tolerance << '\n';
      }
      if (!report.passed()) {
        err << "gradient check failed\n";
        return kExitNumeric;
      }
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace stemvq
