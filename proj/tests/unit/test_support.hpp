#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "stemvq/model_config.hpp"

namespace stemvq::test_support {

// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("stemvq_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.latent_dim = 8;
  c.codebook_size = 16;
  c.width = 8;
  c.depth = 1;
  c.chunk_len = 256;
  return c;
}

}  // namespace stemvq::test_support
