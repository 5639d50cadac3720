#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "stemvq/dataset.hpp"
#include "stemvq/errors.hpp"
#include "stemvq/wav.hpp"
#include "test_support.hpp"

using namespace stemvq;
namespace fs = std::filesystem;

namespace {

SynthSpec short_spec(std::size_t songs = 3, std::size_t test_songs = 1) {
  SynthSpec spec;
  spec.seed = 21;
  spec.songs = songs;
  spec.test_songs = test_songs;
  spec.duration = 1.5;
  return spec;
}

std::vector<unsigned char> file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void write_song(const fs::path& dir, const std::vector<std::string>& labels) {
  fs::create_directories(dir);
  for (const auto& l : labels) write_wav(StereoTrack::silent(64, 8000), dir / (l + ".wav"));
}

}  // namespace

TEST(Stems, NamesAndIndices) {
  EXPECT_EQ(kStemNames[stem_index("drums")], "drums");
  EXPECT_EQ(stem_index("other"), 3u);
  EXPECT_TRUE(is_stem_name("vocals"));
  EXPECT_FALSE(is_stem_name("mixture"));
  EXPECT_THROW(stem_index("piano"), PreconditionError);
}

TEST(StereoTrackType, ValidateRejectsUnequalChannels) {
  StereoTrack t;
  t.left = {0, 0};
  t.right = {0};
  t.sample_rate = 8000;
  EXPECT_THROW(t.validate(), DataError);
  t.right = {0, NAN};
  EXPECT_THROW(t.validate(), DataError);
}

class Layout : public ::testing::Test {
 protected:
  test_support::TempDir dir{"layout"};
};

TEST_F(Layout, MissingStemNamesSongAndStem) {
  write_song(dir / "train" / "song_a", {"mixture", "drums", "bass", "vocals"});
  auto songs = load_musdb_layout(dir.path(), "train");
  ASSERT_EQ(songs.size(), 1u);
  try {
    load_song(songs[0]);
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("missing stem: other"), std::string::npos);
    EXPECT_NE(msg.find("song_a"), std::string::npos);
  }
}

TEST_F(Layout, HundredFoldersListed) {
  for (int i = 0; i < 100; ++i) fs::create_directories(dir / "train" / ("s" + std::to_string(1000 + i)));
  auto songs = load_musdb_layout(dir.path(), "train");
  ASSERT_EQ(songs.size(), 100u);
  EXPECT_EQ(songs.front().name, "s1000");
  EXPECT_EQ(songs.back().name, "s1099");
}

TEST_F(Layout, EmptyRootWarnsWithoutThrowing) {
  std::vector<std::string> warnings;
  auto split = load_dataset_split(dir.path(), &warnings);
  EXPECT_TRUE(split.train.empty());
  EXPECT_TRUE(split.test.empty());
  EXPECT_EQ(warnings.size(), 2u);
}

TEST_F(Layout, BadSplitNameRejected) {
  EXPECT_THROW(load_musdb_layout(dir.path(), "valid"), PreconditionError);
}

TEST_F(Layout, StemLengthMismatchRejected) {
  write_song(dir / "test" / "x", {"mixture", "drums", "bass", "vocals"});
  write_wav(StereoTrack::silent(65, 8000), dir / "test" / "x" / "other.wav");
  EXPECT_THROW(load_songs(load_musdb_layout(dir.path(), "test")), DataError);
}

class Synth : public ::testing::Test {
 protected:
  test_support::TempDir dir{"synth"};
};

TEST_F(Synth, SongCountsAndSplit) {
  auto spec = short_spec(5, 2);
  synthesize_corpus(spec, dir.path());
  auto split = load_dataset_split(dir.path());
  EXPECT_EQ(split.train.size(), 3u);
  EXPECT_EQ(split.test.size(), 2u);
  for (const auto& a : split.train)
    for (const auto& b : split.test) EXPECT_NE(a.name, b.name);
  auto song = load_song(split.test[0]);
  EXPECT_EQ(song.sample_rate(), 8000u);
  EXPECT_EQ(song.length(), 12000u);
}

TEST_F(Synth, SameSpecGivesByteIdenticalCorpus) {
  auto spec = short_spec();
  synthesize_corpus(spec, dir / "a");
  synthesize_corpus(spec, dir / "b");
  std::size_t files = 0;
  for (const auto& item : fs::recursive_directory_iterator(dir / "a")) {
    if (!item.is_regular_file()) continue;
    const auto rel = fs::relative(item.path(), dir / "a");
    EXPECT_EQ(file_bytes(item.path()), file_bytes(dir / "b" / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 3u * 5u + 1u);
}

TEST_F(Synth, SpecTextRoundTrips) {
  auto spec = short_spec();
  spec.vibrato_depth = 0.037;
  synthesize_corpus(spec, dir.path());
  std::ifstream f(dir / "synth_spec.txt");
  std::string text((std::istreambuf_iterator<char>(f)), {});
  EXPECT_EQ(text, spec.to_text());
  EXPECT_EQ(SynthSpec::from_map(spec.to_map()).to_text(), spec.to_text());
}

TEST_F(Synth, DifferentSeedsDiffer) {
  auto a = short_spec(), b = short_spec();
  b.seed = 22;
  EXPECT_NE(synthesize_song(a, 0).mixture.left, synthesize_song(b, 0).mixture.left);
}

TEST_F(Synth, MixtureIsHalfSumOfStems) {
  auto spec = short_spec();
  auto song = synthesize_song(spec, 1);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t n = 0; n < song.length(); ++n) {
      double sum = 0;
      for (const auto& s : song.stems) sum += s.channel(c)[n];
      const auto expected = static_cast<float>(std::clamp(0.5 * sum, -1.0, 1.0));
      ASSERT_EQ(song.mixture.channel(c)[n], expected);
    }

  synthesize_corpus(spec, dir.path());
  auto stored = load_song(load_musdb_layout(dir.path(), "train")[1]);
  const double step = 1.0 / 32768.0;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t n = 0; n < stored.length(); ++n) {
      double sum = 0;
      for (const auto& s : stored.stems) sum += s.channel(c)[n];
      if (std::abs(0.5 * sum) >= 1.0) continue;
      ASSERT_LE(std::abs(stored.mixture.channel(c)[n] - 0.5 * sum), step);
    }
}

TEST_F(Synth, EveryStemCarriesSignal) {
  auto song = synthesize_song(short_spec(), 0);
  for (const auto& s : song.stems) {
    double energy = 0;
    for (float v : s.left) energy += v * v;
    EXPECT_GT(energy, 0.0);
  }
}

TEST(ChunkSampling, ChunksShareOffsetAndChannel) {
  auto song = synthesize_song(short_spec(), 2);
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    auto chunk = sample_training_chunk(song, "vocals", 512, rng);
    ASSERT_EQ(chunk.source.size(), 512u);
    ASSERT_EQ(chunk.mixture.size(), 512u);
    ASSERT_LE(chunk.offset + 512, song.length());
    const auto& stem = song.stems[stem_index("vocals")].channel(chunk.channel);
    const auto& mix = song.mixture.channel(chunk.channel);
    for (std::size_t n = 0; n < 512; ++n) {
      ASSERT_EQ(chunk.source[n], stem[chunk.offset + n]);
      ASSERT_EQ(chunk.mixture[n], mix[chunk.offset + n]);
    }
  }
}

TEST(ChunkSampling, StemContributionCorrelatesExactly) {
  // With the other stems removed, the mixture is exactly half the stem, so the correlation is 1.
  auto song = synthesize_song(short_spec(), 0);
  const auto& bass = song.stems[stem_index("bass")];
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t n = 0; n < song.length(); ++n) song.mixture.channel(c)[n] = 0.5f * bass.channel(c)[n];
  Rng rng(6);
  auto chunk = sample_training_chunk(song, "bass", 1024, rng);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t n = 0; n < 1024; ++n) {
    sxy += double(chunk.source[n]) * chunk.mixture[n];
    sxx += double(chunk.source[n]) * chunk.source[n];
    syy += double(chunk.mixture[n]) * chunk.mixture[n];
  }
  EXPECT_NEAR(sxy / std::sqrt(sxx * syy), 1.0, 1e-12);
}

TEST(ChunkSampling, SeededRngReproducesOffsets) {
  auto song = synthesize_song(short_spec(), 0);
  Rng a(9), b(9);
  for (int i = 0; i < 20; ++i) {
    auto x = sample_training_chunk(song, "drums", 256, a);
    auto y = sample_training_chunk(song, "drums", 256, b);
    EXPECT_EQ(x.offset, y.offset);
    EXPECT_EQ(x.channel, y.channel);
  }
}

TEST(ChunkSampling, SongTooShortIsError) {
  auto song = synthesize_song(short_spec(), 0);
  Rng rng(1);
  EXPECT_THROW(sample_training_chunk(song, "bass", song.length() + 1, rng), DataError);
  EXPECT_NO_THROW(sample_training_chunk(song, "bass", song.length(), rng));
}
