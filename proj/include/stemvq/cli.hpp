#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "stemvq/model_config.hpp"
#include "stemvq/training.hpp"

namespace stemvq {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

// Settings shared by the training and inference subcommands.
struct RunSettings {
  ModelConfig model;
  TrainConfig train;
  std::size_t overlap = 0;
};

// Keys accepted in a config file.
const std::vector<std::string>& config_file_keys();

// Applies key=value lines to `settings`; unknown keys raise ConfigError
// naming the line.
void apply_config_text(RunSettings& settings, const std::string& text, const std::string& origin);
void apply_setting(RunSettings& settings, const std::string& key, const std::string& value);

// argv[0] is the subcommand. Progress and diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Allocator tuning for long training runs: keep freed activations in the
// heap instead of returning them to the kernel.
void tune_allocator();

}  // namespace stemvq
