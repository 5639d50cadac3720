#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "stemvq/audio.hpp"

namespace stemvq {

inline constexpr double kSdrEps = 1e-12;

// 10 log10((sum sL^2 + sum sR^2 + eps) / (sum (sL-ŝL)^2 + sum (sR-ŝR)^2 + eps)),
// summed over whole tracks in double precision.
double sdr_stem(const StereoTrack& reference, const StereoTrack& estimate, double eps = kSdrEps);

// Arithmetic mean of exactly four stem values.
double total_sdr(std::span<const double> per_stem);

bool is_silent(const StereoTrack& track);

// Four identical estimates alpha * mixture.
std::array<StereoTrack, kStemCount> scaled_mixture_baseline(const StereoTrack& mixture, double alpha = 0.25);

struct TrackSdr {
  std::string name;
  std::array<double, kStemCount> stems{};  // kStemNames order
  std::array<bool, kStemCount> silent_reference{};
  double total = 0;
};

struct SdrReport {
  std::array<double, kStemCount> stems{};  // mean over tracks, kStemNames order
  // A stem is flagged when any track's reference for it is all zeros.
  std::array<bool, kStemCount> silent_reference{};
  double total = 0;
  std::vector<TrackSdr> tracks;
};

// Per-track SDRs for one song. A silent reference paired with a silent
// estimate scores 0 dB.
TrackSdr evaluate_track(const std::string& name, const std::array<StereoTrack, kStemCount>& references,
                        const std::array<StereoTrack, kStemCount>& estimates, double eps = kSdrEps);

// Stem values are means over tracks; total is their mean.
SdrReport aggregate_report(std::vector<TrackSdr> tracks);

struct TableRow {
  std::string method;
  const SdrReport* report;
};

// Plain-text table with columns Drum, Bass, Other, Vocal, Total.
std::string render_table(const std::vector<TableRow>& rows);

// drums=, bass=, vocals=, other=, total= lines with round-trip precision,
// plus a silent_stems= line when any stem is flagged.
std::string render_kv(const SdrReport& report);

}  // namespace stemvq
