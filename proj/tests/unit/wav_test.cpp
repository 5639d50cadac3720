#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <fstream>

#include "stemvq/random.hpp"
#include "stemvq/wav.hpp"
#include "test_support.hpp"

using namespace stemvq;

namespace {

void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
void put_u16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(static_cast<unsigned char>(v));
  b.push_back(static_cast<unsigned char>(v >> 8));
}

// Hand-built RIFF file; data_size_override lets a header claim more data than present.
std::vector<unsigned char> riff(std::uint16_t format, std::uint16_t channels, std::uint32_t rate, std::uint16_t bits,
                                const std::vector<unsigned char>& payload, std::int64_t data_size_override = -1) {
  std::vector<unsigned char> b{'R', 'I', 'F', 'F'};
  put_u32(b, static_cast<std::uint32_t>(36 + payload.size()));
  for (char c : std::string("WAVEfmt ")) b.push_back(static_cast<unsigned char>(c));
  put_u32(b, 16);
  put_u16(b, format);
  put_u16(b, channels);
  put_u32(b, rate);
  put_u32(b, rate * channels * bits / 8);
  put_u16(b, static_cast<std::uint16_t>(channels * bits / 8));
  put_u16(b, bits);
  for (char c : std::string("data")) b.push_back(static_cast<unsigned char>(c));
  put_u32(b, data_size_override >= 0 ? static_cast<std::uint32_t>(data_size_override)
                                     : static_cast<std::uint32_t>(payload.size()));
  b.insert(b.end(), payload.begin(), payload.end());
  return b;
}

void write_file(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

class Wav : public ::testing::Test {
 protected:
  test_support::TempDir dir{"wav"};
};

TEST_F(Wav, MinimumSixteenBitCodeIsMinusOne) {
  std::vector<unsigned char> payload;
  put_u16(payload, 0x8000);
  put_u16(payload, 0x7fff);
  write_file(dir / "a.wav", riff(1, 2, 8000, 16, payload));
  auto t = read_wav(dir / "a.wav");
  ASSERT_EQ(t.length(), 1u);
  EXPECT_EQ(t.left[0], -1.0f);
  EXPECT_EQ(t.right[0], 32767.0f / 32768.0f);
  EXPECT_EQ(t.sample_rate, 8000u);
}

TEST_F(Wav, TwentyFourBitSignExtends) {
  std::vector<unsigned char> payload{0x00, 0x00, 0x80, 0xff, 0xff, 0x7f};
  write_file(dir / "a.wav", riff(1, 2, 44100, 24, payload));
  auto t = read_wav(dir / "a.wav");
  EXPECT_EQ(t.left[0], -1.0f);
  EXPECT_EQ(t.right[0], static_cast<float>(8388607.0 / 8388608.0));
}

TEST_F(Wav, MonoIsDuplicated) {
  std::vector<unsigned char> payload;
  put_u16(payload, 16384);
  put_u16(payload, static_cast<std::uint16_t>(-8192));
  write_file(dir / "m.wav", riff(1, 1, 8000, 16, payload));
  auto t = read_wav(dir / "m.wav");
  ASSERT_EQ(t.length(), 2u);
  EXPECT_EQ(t.left, t.right);
  EXPECT_EQ(t.left[0], 0.5f);
  EXPECT_EQ(t.left[1], -0.25f);
}

TEST_F(Wav, NonPcmFormatIsDistinctError) {
  std::vector<unsigned char> payload(8, 0);
  write_file(dir / "f.wav", riff(3, 2, 8000, 32, payload));
  EXPECT_THROW(read_wav(dir / "f.wav"), WavNotPcmError);
}

TEST_F(Wav, UnsupportedBitDepthIsDistinctError) {
  std::vector<unsigned char> payload(4, 0);
  write_file(dir / "b.wav", riff(1, 2, 8000, 8, payload));
  EXPECT_THROW(read_wav(dir / "b.wav"), WavBitDepthError);
}

TEST_F(Wav, TruncatedDataIsMalformed) {
  std::vector<unsigned char> payload(8, 0);
  write_file(dir / "t.wav", riff(1, 2, 8000, 16, payload, 400));
  EXPECT_THROW(read_wav(dir / "t.wav"), WavMalformedError);
}

TEST_F(Wav, GarbageHeaderIsMalformed) {
  write_file(dir / "g.wav", {'R', 'I', 'F', 'X', 0, 0});
  EXPECT_THROW(read_wav(dir / "g.wav"), WavMalformedError);
  write_file(dir / "e.wav", {});
  EXPECT_THROW(read_wav(dir / "e.wav"), WavMalformedError);
}

TEST_F(Wav, MissingFileIsDataError) {
  EXPECT_THROW(read_wav(dir / "none.wav"), DataError);
}

TEST_F(Wav, SilentTrackWritesZeroPayload) {
  write_wav(StereoTrack::silent(100, 8000), dir / "z.wav");
  auto bytes = read_file(dir / "z.wav");
  ASSERT_EQ(bytes.size(), 44u + 400u);
  for (std::size_t i = 44; i < bytes.size(); ++i) ASSERT_EQ(bytes[i], 0);
}

TEST_F(Wav, HeaderCarriesSampleRate) {
  write_wav(StereoTrack::silent(4, 22050), dir / "r.wav");
  auto bytes = read_file(dir / "r.wav");
  const std::uint32_t rate = bytes[24] | (bytes[25] << 8) | (bytes[26] << 16) | (static_cast<std::uint32_t>(bytes[27]) << 24);
  EXPECT_EQ(rate, 22050u);
}

TEST_F(Wav, OutOfRangeSamplesClamp) {
  EXPECT_EQ(quantize_sample(2.0f, 16), 32767);
  EXPECT_EQ(quantize_sample(-2.0f, 16), -32768);
  EXPECT_EQ(quantize_sample(2.0f, 24), 8388607);
  EXPECT_EQ(quantize_sample(0.5f / 32768.0f, 16), 1);   // half rounds away from zero
  EXPECT_EQ(quantize_sample(-0.5f / 32768.0f, 16), -1);
  auto t = StereoTrack::from_mono({2.0f}, 8000);
  write_wav(t, dir / "c.wav");
  EXPECT_EQ(read_wav(dir / "c.wav").left[0], 32767.0f / 32768.0f);
}

TEST_F(Wav, RandomRoundTripsStayWithinOneStep) {
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 1 + rng.below(500);
    StereoTrack t;
    t.sample_rate = 8000 + rng.below(40000);
    for (std::size_t j = 0; j < n; ++j) {
      t.left.push_back(static_cast<float>(rng.uniform(-1, 1)));
      t.right.push_back(static_cast<float>(rng.uniform(-1, 1)));
    }
    const int bits = i % 2 == 0 ? 16 : 24;
    write_wav(t, dir / "rt.wav", bits);
    auto back = read_wav(dir / "rt.wav");
    ASSERT_EQ(back.length(), n);
    ASSERT_EQ(back.sample_rate, t.sample_rate);
    const double step = std::ldexp(1.0, -(bits - 1));
    for (std::size_t j = 0; j < n; ++j) {
      ASSERT_LE(std::abs(back.left[j] - t.left[j]), step);
      ASSERT_LE(std::abs(back.right[j] - t.right[j]), step);
    }
  }
}

TEST_F(Wav, WriteRejectsUnsupportedBits) {
  EXPECT_ANY_THROW(write_wav(StereoTrack::silent(4, 8000), dir / "x.wav", 8));
}

TEST_F(Wav, WriteToMissingDirectoryFails) {
  EXPECT_THROW(write_wav(StereoTrack::silent(4, 8000), dir / "no" / "x.wav"), DataError);
}
