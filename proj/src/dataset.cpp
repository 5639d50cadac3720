#include "stemvq/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>

#include "stemvq/errors.hpp"
#include "stemvq/kv.hpp"
#include "stemvq/wav.hpp"

namespace stemvq {

namespace fs = std::filesystem;

const StereoTrack& SongFolder::track(std::string_view label) const {
  if (label == "mixture") return mixture;
  return stems[stem_index(label)];
}

std::vector<SongEntry> load_musdb_layout(const fs::path& root, const std::string& split,
                                         std::vector<std::string>* warnings) {
  if (split != "train" && split != "test") {
    throw PreconditionError("split must be 'train' or 'test', got '" + split + "'");
  }
  std::vector<SongEntry> songs;
  const fs::path dir = root / split;
  std::error_code ec;
  if (fs::is_directory(dir, ec)) {
    for (const auto& item : fs::directory_iterator(dir)) {
      if (item.is_directory()) songs.push_back({item.path().filename().string(), item.path()});
    }
  }
  std::sort(songs.begin(), songs.end(), [](const SongEntry& a, const SongEntry& b) { return a.name < b.name; });
  if (songs.empty()) {
    const std::string msg = "warning: no songs found under " + dir.string();
    if (warnings) {
      warnings->push_back(msg);
    } else {
      std::cerr << msg << '\n';
    }
  }
  return songs;
}

DatasetSplit load_dataset_split(const fs::path& root, std::vector<std::string>* warnings) {
  return {load_musdb_layout(root, "train", warnings), load_musdb_layout(root, "test", warnings)};
}

SongFolder load_song(const SongEntry& entry) {
  SongFolder song;
  song.name = entry.name;
  song.path = entry.path;
  auto read = [&](std::string_view label) {
    const fs::path file = entry.path / (std::string(label) + ".wav");
    if (!fs::exists(file)) {
      if (label == "mixture") throw DataError(entry.name + ": missing mixture");
      throw DataError(entry.name + ": missing stem: " + std::string(label));
    }
    return read_wav(file);
  };
  song.mixture = read("mixture");
  for (std::size_t i = 0; i < kStemCount; ++i) {
    song.stems[i] = read(kStemNames[i]);
    const auto& s = song.stems[i];
    if (s.length() != song.mixture.length() || s.sample_rate != song.mixture.sample_rate) {
      throw DataError(entry.name + ": stem " + std::string(kStemNames[i]) + " has " + std::to_string(s.length()) +
                      " samples at " + std::to_string(s.sample_rate) + " Hz, mixture has " +
                      std::to_string(song.mixture.length()) + " at " + std::to_string(song.mixture.sample_rate));
    }
  }
  return song;
}

std::vector<SongFolder> load_songs(const std::vector<SongEntry>& entries) {
  std::vector<SongFolder> songs;
  songs.reserve(entries.size());
  for (const auto& e : entries) songs.push_back(load_song(e));
  return songs;
}

std::map<std::string, std::string> SynthSpec::to_map() const {
  return {
      {"seed", std::to_string(seed)},
      {"songs", std::to_string(songs)},
      {"test_songs", std::to_string(test_songs)},
      {"duration", format_double(duration)},
      {"sample_rate", std::to_string(sample_rate)},
      {"drum_decay", format_double(drum_decay)},
      {"drum_density", format_double(drum_density)},
      {"bass_low", format_double(bass_low)},
      {"bass_high", format_double(bass_high)},
      {"vocal_low", format_double(vocal_low)},
      {"vocal_high", format_double(vocal_high)},
      {"vibrato_rate", format_double(vibrato_rate)},
      {"vibrato_depth", format_double(vibrato_depth)},
      {"chord_low", format_double(chord_low)},
      {"chord_high", format_double(chord_high)},
      {"bpm_low", format_double(bpm_low)},
      {"bpm_high", format_double(bpm_high)},
  };
}

SynthSpec SynthSpec::from_map(const std::map<std::string, std::string>& kv) {
  SynthSpec s;
  std::map<std::string, double*> reals = {
      {"duration", &s.duration},         {"drum_decay", &s.drum_decay}, {"drum_density", &s.drum_density},
      {"bass_low", &s.bass_low},         {"bass_high", &s.bass_high},   {"vocal_low", &s.vocal_low},
      {"vocal_high", &s.vocal_high},     {"vibrato_rate", &s.vibrato_rate},
      {"vibrato_depth", &s.vibrato_depth}, {"chord_low", &s.chord_low}, {"chord_high", &s.chord_high},
      {"bpm_low", &s.bpm_low},           {"bpm_high", &s.bpm_high},
  };
  for (const auto& [key, value] : kv) {
    if (key == "seed") s.seed = parse_u64(key, value);
    else if (key == "songs") s.songs = parse_size(key, value);
    else if (key == "test_songs") s.test_songs = parse_size(key, value);
    else if (key == "sample_rate") s.sample_rate = parse_size(key, value);
    else if (auto it = reals.find(key); it != reals.end()) *it->second = parse_double(key, value);
    else throw ConfigError("synth spec: unknown key '" + key + "'");
  }
  return s;
}

std::string SynthSpec::to_text() const {
  std::string out;
  for (const auto& [key, value] : to_map()) out += key + "=" + value + "\n";
  return out;
}

void SynthSpec::validate() const {
  auto fail = [](const std::string& msg) { throw PreconditionError("invalid synth spec: " + msg); };
  if (songs < 1) fail("songs must be >= 1");
  if (test_songs > songs) fail("test_songs exceeds songs");
  if (!(duration > 0)) fail("duration must be positive");
  if (sample_rate < 1000) fail("sample_rate must be >= 1000");
  if (!(drum_decay > 0)) fail("drum_decay must be positive");
  if (!(drum_density >= 0 && drum_density <= 1)) fail("drum_density must be in [0, 1]");
  if (!(bass_low > 0 && bass_low <= bass_high)) fail("bass range");
  if (!(vocal_low > 0 && vocal_low <= vocal_high)) fail("vocal range");
  if (!(chord_low > 0 && chord_low <= chord_high)) fail("chord range");
  if (!(bpm_low > 0 && bpm_low <= bpm_high)) fail("bpm range");
  if (vocal_high * (1 + vibrato_depth) * 4 >= sample_rate / 2.0 || chord_high * 2 * 3 >= sample_rate / 2.0) {
    fail("tone ranges alias at sample_rate " + std::to_string(sample_rate));
  }
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double log_uniform(Rng& rng, double lo, double hi) { return lo * std::pow(hi / lo, rng.uniform()); }

// Attack/release gain for sample k of an n-sample note.
double note_envelope(std::size_t k, std::size_t n, double attack, double release) {
  const double a = attack > 0 ? std::min(1.0, static_cast<double>(k) / attack) : 1.0;
  const double r = release > 0 ? std::min(1.0, static_cast<double>(n - k) / release) : 1.0;
  return a * r;
}

std::vector<double> synth_drums(const SynthSpec& spec, Rng& rng, std::size_t n, double eighth) {
  std::vector<double> x(n, 0.0);
  const double sr = static_cast<double>(spec.sample_rate);
  for (std::size_t slot = 0;; ++slot) {
    const auto start = static_cast<std::size_t>(std::llround(slot * eighth * sr));
    if (start >= n) break;
    if (rng.uniform() >= spec.drum_density) continue;
    const double amp = rng.uniform(0.4, 1.0);
    const double rate = spec.drum_decay * rng.uniform(0.7, 1.4);
    const auto len = std::min(n - start, static_cast<std::size_t>(6.0 / rate * sr));
    for (std::size_t k = 0; k < len; ++k) {
      x[start + k] += amp * rng.uniform(-1.0, 1.0) * std::exp(-rate * static_cast<double>(k) / sr);
    }
  }
  for (auto& v : x) v *= 0.5;
  return x;
}

std::vector<double> synth_bass(const SynthSpec& spec, Rng& rng, std::size_t n, double beat) {
  std::vector<double> x(n, 0.0);
  const double sr = static_cast<double>(spec.sample_rate);
  double phase = 0;
  for (std::size_t b = 0;; ++b) {
    const auto start = static_cast<std::size_t>(std::llround(b * beat * sr));
    if (start >= n) break;
    const auto end = std::min(n, static_cast<std::size_t>(std::llround((b + 1) * beat * sr)));
    const double f = log_uniform(rng, spec.bass_low, spec.bass_high);
    const double amp = rng.uniform(0.35, 0.55);
    for (std::size_t k = start; k < end; ++k) {
      phase = std::fmod(phase + kTwoPi * f / sr, kTwoPi);
      const double env = note_envelope(k - start, end - start, 0.005 * sr, 0.02 * sr) *
                         std::exp(-3.0 * static_cast<double>(k - start) / sr);
      x[k] = amp * env * (std::sin(phase) + 0.3 * std::sin(2 * phase));
    }
  }
  return x;
}

std::vector<double> synth_vocals(const SynthSpec& spec, Rng& rng, std::size_t n) {
  std::vector<double> x(n, 0.0);
  const double sr = static_cast<double>(spec.sample_rate);
  double phase = 0;
  std::size_t pos = 0;
  while (pos < n) {
    const auto len = std::min(n - pos, static_cast<std::size_t>(rng.uniform(0.25, 1.0) * sr));
    if (rng.uniform() < 0.2) {  // rest
      pos += len;
      continue;
    }
    const double f0 = log_uniform(rng, spec.vocal_low, spec.vocal_high);
    const double vib_phase = rng.uniform(0.0, kTwoPi);
    const double amp = rng.uniform(0.25, 0.4);
    for (std::size_t k = 0; k < len; ++k) {
      const double t = static_cast<double>(k) / sr;
      const double f = f0 * (1.0 + spec.vibrato_depth * std::sin(kTwoPi * spec.vibrato_rate * t + vib_phase));
      phase = std::fmod(phase + kTwoPi * f / sr, kTwoPi);
      double v = 0;
      for (int h = 1; h <= 4; ++h) v += std::sin(h * phase) / (h * h);
      x[pos + k] = amp * note_envelope(k, len, 0.03 * sr, 0.05 * sr) * v;
    }
    pos += len;
  }
  return x;
}

std::vector<double> synth_chords(const SynthSpec& spec, Rng& rng, std::size_t n, double bar) {
  std::vector<double> x(n, 0.0);
  const double sr = static_cast<double>(spec.sample_rate);
  std::array<double, 3> phase{};
  for (std::size_t b = 0;; ++b) {
    const auto start = static_cast<std::size_t>(std::llround(b * bar * sr));
    if (start >= n) break;
    const auto end = std::min(n, static_cast<std::size_t>(std::llround((b + 1) * bar * sr)));
    const double root = log_uniform(rng, spec.chord_low, spec.chord_high);
    const double third = rng.uniform() < 0.5 ? 4.0 : 3.0;  // major or minor
    const std::array<double, 3> freqs = {root, root * std::exp2(third / 12), root * std::exp2(7.0 / 12)};
    const double amp = rng.uniform(0.12, 0.2);
    for (std::size_t k = start; k < end; ++k) {
      const double env = note_envelope(k - start, end - start, 0.02 * sr, 0.03 * sr) *
                         std::exp(-0.8 * static_cast<double>(k - start) / sr);
      double v = 0;
      for (std::size_t j = 0; j < 3; ++j) {
        phase[j] = std::fmod(phase[j] + kTwoPi * freqs[j] / sr, kTwoPi);
        v += std::sin(phase[j]) + 0.2 * std::sin(3 * phase[j]);
      }
      x[k] = amp * env * v;
    }
  }
  return x;
}

}  // namespace

SongFolder synthesize_song(const SynthSpec& spec, std::size_t index) {
  spec.validate();
  Rng song_rng(Rng::mix(spec.seed) ^ Rng::mix(index + 1));
  const double sr = static_cast<double>(spec.sample_rate);
  const auto n = static_cast<std::size_t>(std::llround(spec.duration * sr));
  const double bpm = song_rng.uniform(spec.bpm_low, spec.bpm_high);
  const double beat = 60.0 / bpm;

  std::array<std::vector<double>, kStemCount> mono;
  std::array<double, kStemCount> pan{};
  for (std::size_t s = 0; s < kStemCount; ++s) {
    Rng rng = song_rng.fork(s);
    pan[s] = rng.uniform(0.3, 0.7);
    switch (s) {
      case 0: mono[s] = synth_drums(spec, rng, n, beat / 2); break;
      case 1: mono[s] = synth_bass(spec, rng, n, beat); break;
      case 2: mono[s] = synth_vocals(spec, rng, n); break;
      default: mono[s] = synth_chords(spec, rng, n, 4 * beat); break;
    }
  }

  char name[32];
  std::snprintf(name, sizeof name, "song%03zu", index);
  SongFolder song;
  song.name = name;
  song.mixture = StereoTrack::silent(n, spec.sample_rate);
  std::vector<double> sum_l(n, 0.0), sum_r(n, 0.0);
  for (std::size_t s = 0; s < kStemCount; ++s) {
    const double gl = std::cos(pan[s] * std::numbers::pi / 2) * std::numbers::sqrt2;
    const double gr = std::sin(pan[s] * std::numbers::pi / 2) * std::numbers::sqrt2;
    auto& t = song.stems[s];
    t = StereoTrack::silent(n, spec.sample_rate);
    for (std::size_t k = 0; k < n; ++k) {
      t.left[k] = static_cast<float>(std::clamp(gl * mono[s][k], -1.0, 1.0));
      t.right[k] = static_cast<float>(std::clamp(gr * mono[s][k], -1.0, 1.0));
      sum_l[k] += t.left[k];
      sum_r[k] += t.right[k];
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    song.mixture.left[k] = static_cast<float>(std::clamp(0.5 * sum_l[k], -1.0, 1.0));
    song.mixture.right[k] = static_cast<float>(std::clamp(0.5 * sum_r[k], -1.0, 1.0));
  }
  return song;
}

void synthesize_corpus(const SynthSpec& spec, const fs::path& out_root) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_root, ec);
  if (ec) throw DataError("cannot create " + out_root.string() + ": " + ec.message());
  {
    std::ofstream f(out_root / "synth_spec.txt", std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + (out_root / "synth_spec.txt").string());
    f << spec.to_text();
  }
  for (std::size_t i = 0; i < spec.songs; ++i) {
    const SongFolder song = synthesize_song(spec, i);
    const bool is_test = i >= spec.songs - spec.test_songs;
    const fs::path dir = out_root / (is_test ? "test" : "train") / song.name;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
    write_wav(song.mixture, dir / "mixture.wav");
    for (std::size_t s = 0; s < kStemCount; ++s) {
      write_wav(song.stems[s], dir / (std::string(kStemNames[s]) + ".wav"));
    }
  }
}

TrainingChunk sample_training_chunk(const SongFolder& song, std::string_view label, std::size_t chunk_len, Rng& rng) {
  const StereoTrack& source = song.track(label);
  const std::size_t len = song.length();
  if (chunk_len < 1 || len < chunk_len) {
    throw DataError(song.name + ": " + std::to_string(len) + " samples is shorter than chunk length " +
                    std::to_string(chunk_len));
  }
  TrainingChunk chunk;
  chunk.offset = static_cast<std::size_t>(rng.below(len - chunk_len + 1));
  chunk.channel = static_cast<std::size_t>(rng.below(2));
  const auto& src = source.channel(chunk.channel);
  const auto& mix = song.mixture.channel(chunk.channel);
  chunk.source.assign(src.begin() + chunk.offset, src.begin() + chunk.offset + chunk_len);
  chunk.mixture.assign(mix.begin() + chunk.offset, mix.begin() + chunk.offset + chunk_len);
  return chunk;
}

}  // namespace stemvq
