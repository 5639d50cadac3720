#include "stemvq/wav.hpp"

#include <cmath>
#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>

namespace stemvq {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

struct FormatChunk {
  std::uint16_t tag = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits = 0;
};

}  // namespace

std::int32_t quantize_sample(float sample, int bits) {
  const double full = std::ldexp(1.0, bits - 1);
  double x = static_cast<double>(sample);
  if (std::isnan(x)) throw DataError("cannot quantize a NaN sample");
  x = std::clamp(x, -1.0, 1.0 - 1.0 / full);
  return static_cast<std::int32_t>(std::round(x * full));
}

StereoTrack read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";

  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw WavMalformedError(where + "not a RIFF/WAVE file");
  }

  std::optional<FormatChunk> fmt;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* header = bytes.data() + pos;
    const std::size_t size = read_u32(header + 4);
    const std::size_t body = pos + 8;
    if (size > bytes.size() - body) {
      throw WavMalformedError(where + "chunk '" + std::string(reinterpret_cast<const char*>(header), 4) +
                              "' runs past end of file");
    }
    if (std::memcmp(header, "fmt ", 4) == 0) {
      if (size < 16) throw WavMalformedError(where + "fmt chunk too short");
      const unsigned char* f = bytes.data() + body;
      FormatChunk c;
      c.tag = read_u16(f);
      c.channels = read_u16(f + 2);
      c.sample_rate = read_u32(f + 4);
      c.bits = read_u16(f + 14);
      if (c.tag == kFormatExtensible) {
        // Sub-format GUID starts with the real format tag.
        if (size < 40) throw WavMalformedError(where + "extensible fmt chunk too short");
        c.tag = read_u16(f + 24);
      }
      fmt = c;
    } else if (std::memcmp(header, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = size;
    }
    pos = body + size + (size & 1);
  }
  if (!fmt) throw WavMalformedError(where + "missing fmt chunk");
  if (!data) throw WavMalformedError(where + "missing data chunk");
  if (fmt->tag != kFormatPcm) {
    throw WavNotPcmError(where + "format tag " + std::to_string(fmt->tag) + " is not integer PCM");
  }
  if (fmt->bits != 16 && fmt->bits != 24) {
    throw WavBitDepthError(where + std::to_string(fmt->bits) + "-bit PCM is not supported (16 or 24)");
  }
  if (fmt->channels != 1 && fmt->channels != 2) {
    throw WavMalformedError(where + std::to_string(fmt->channels) + " channels (expected 1 or 2)");
  }
  if (fmt->sample_rate == 0) throw WavMalformedError(where + "sample rate is zero");

  const std::size_t width = fmt->bits / 8;
  const std::size_t frame = width * fmt->channels;
  if (data_size % frame != 0) throw WavMalformedError(where + "data chunk is not a whole number of frames");
  const std::size_t frames = data_size / frame;
  const float scale = static_cast<float>(1.0 / std::ldexp(1.0, fmt->bits - 1));

  StereoTrack track;
  track.sample_rate = fmt->sample_rate;
  track.left.resize(frames);
  track.right.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t c = 0; c < fmt->channels; ++c) {
      const unsigned char* p = data + i * frame + c * width;
      std::int32_t code;
      if (width == 2) {
        code = static_cast<std::int16_t>(read_u16(p));
      } else {
        code = static_cast<std::int32_t>(static_cast<std::uint32_t>(p[0]) << 8 | static_cast<std::uint32_t>(p[1]) << 16 |
                                         static_cast<std::uint32_t>(p[2]) << 24) >>
               8;
      }
      track.channel(c)[i] = static_cast<float>(code) * scale;
    }
  }
  if (fmt->channels == 1) track.right = track.left;
  return track;
}

void write_wav(const StereoTrack& track, const std::filesystem::path& path, int bits) {
  if (bits != 16 && bits != 24) throw WavBitDepthError("cannot write " + std::to_string(bits) + "-bit PCM");
  if (track.left.size() != track.right.size()) throw DataError("write_wav: channel lengths differ");
  const std::size_t width = static_cast<std::size_t>(bits) / 8;
  const std::size_t frames = track.length();
  const std::size_t data_size = frames * 2 * width;
  if (data_size > 0xFFFFFFFFu - 36) throw DataError("write_wav: track too long for RIFF");

  std::vector<unsigned char> out;
  out.reserve(44 + data_size);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, static_cast<std::uint32_t>(36 + data_size));
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 2);
  put_u32(out, static_cast<std::uint32_t>(track.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(track.sample_rate * 2 * width));
  put_u16(out, static_cast<std::uint16_t>(2 * width));
  put_u16(out, static_cast<std::uint16_t>(bits));
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, static_cast<std::uint32_t>(data_size));
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      const auto code = static_cast<std::uint32_t>(quantize_sample(track.channel(c)[i], bits));
      for (std::size_t b = 0; b < width; ++b) out.push_back(static_cast<unsigned char>(code >> (8 * b)));
    }
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw DataError("cannot write " + path.string());
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw DataError("write failed for " + path.string());
}

}  // namespace stemvq
