#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stemvq/audio.hpp"
#include "stemvq/random.hpp"

namespace stemvq {

// A song folder as listed; tracks are read and validated by load_song().
struct SongEntry {
  std::string name;
  std::filesystem::path path;
};

struct SongFolder {
  std::string name;
  std::filesystem::path path;
  StereoTrack mixture;
  std::array<StereoTrack, kStemCount> stems;  // kStemNames order

  std::size_t length() const { return mixture.length(); }
  std::size_t sample_rate() const { return mixture.sample_rate; }
  // "mixture" or one of the stem names.
  const StereoTrack& track(std::string_view label) const;
};

struct DatasetSplit {
  std::vector<SongEntry> train;
  std::vector<SongEntry> test;
};

// Song folders under root/<split>/, sorted by name. An absent or empty split
// directory yields an empty list and a warning (appended to `warnings`, or
// printed to stderr when null).
std::vector<SongEntry> load_musdb_layout(const std::filesystem::path& root, const std::string& split,
                                         std::vector<std::string>* warnings = nullptr);
DatasetSplit load_dataset_split(const std::filesystem::path& root, std::vector<std::string>* warnings = nullptr);

// Reads mixture.wav and the four stem files. Throws DataError
// ("<song>: missing stem: <stem>") or on inconsistent lengths/rates.
SongFolder load_song(const SongEntry& entry);
std::vector<SongFolder> load_songs(const std::vector<SongEntry>& entries);

// Deterministic desk-scale stand-in for MUSDB18-HQ.
struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t songs = 16;       // total; the last test_songs go to test/
  std::size_t test_songs = 4;
  double duration = 30.0;       // seconds
  std::size_t sample_rate = 8000;
  // drums: white-noise bursts on an eighth-note grid
  double drum_decay = 30.0;     // envelope rate, 1/s
  double drum_density = 0.6;    // probability a grid slot carries a burst
  // bass: one tone per beat
  double bass_low = 40.0;
  double bass_high = 120.0;
  // vocals: vibrato tones
  double vocal_low = 200.0;
  double vocal_high = 600.0;
  double vibrato_rate = 5.5;    // Hz
  double vibrato_depth = 0.02;  // relative frequency swing
  // other: 3-note chords held for a bar
  double chord_low = 130.0;
  double chord_high = 400.0;
  double bpm_low = 90.0;
  double bpm_high = 140.0;

  std::map<std::string, std::string> to_map() const;
  static SynthSpec from_map(const std::map<std::string, std::string>& kv);
  std::string to_text() const;  // key=value lines
  void validate() const;
};

// Float tracks of one synthetic song, before PCM quantization. The mixture is
// clip(0.5 * sum of stems) per channel.
SongFolder synthesize_song(const SynthSpec& spec, std::size_t index);

// Writes out_root/{train,test}/songNNN/*.wav (16-bit) and out_root/synth_spec.txt.
void synthesize_corpus(const SynthSpec& spec, const std::filesystem::path& out_root);

struct TrainingChunk {
  std::vector<float> source;   // x_st: the requested track
  std::vector<float> mixture;  // x_mt: same offset and channel
  std::size_t channel = 0;     // 0 = left, 1 = right
  std::size_t offset = 0;
};

// Uniform start offset, then uniform channel, both drawn from `rng`.
TrainingChunk sample_training_chunk(const SongFolder& song, std::string_view label, std::size_t chunk_len, Rng& rng);

}  // namespace stemvq
