#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stemvq/errors.hpp"

namespace stemvq {

// Malformed or unknown entry in a key=value text.
class ConfigError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

struct KvEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;  // 1-based
};

// Parses `key = value` lines; blank lines and '#' comments are skipped and
// surrounding whitespace is trimmed. `origin` prefixes error messages.
std::vector<KvEntry> parse_kv_text(const std::string& text, const std::string& origin);

std::string read_text_file(const std::string& path);

std::uint64_t parse_u64(const std::string& key, const std::string& text);
std::size_t parse_size(const std::string& key, const std::string& text);
double parse_double(const std::string& key, const std::string& text);
// Shortest text that parses back to exactly `value`.
std::string format_double(double value);

}  // namespace stemvq
