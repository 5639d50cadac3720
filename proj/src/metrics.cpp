#include "stemvq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "stemvq/errors.hpp"
#include "stemvq/kv.hpp"

namespace stemvq {

double sdr_stem(const StereoTrack& reference, const StereoTrack& estimate, double eps) {
  if (reference.left.size() != reference.right.size() || estimate.left.size() != estimate.right.size()) {
    throw PreconditionError("sdr: channel lengths differ");
  }
  if (reference.length() != estimate.length()) {
    throw PreconditionError("sdr: reference has " + std::to_string(reference.length()) + " samples, estimate " +
                            std::to_string(estimate.length()));
  }
  if (reference.sample_rate != estimate.sample_rate) throw PreconditionError("sdr: sample rates differ");
  // Per-channel sums combined once, so swapping channels gives the same bits.
  double signal[2] = {0, 0}, noise[2] = {0, 0};
  for (std::size_t c = 0; c < 2; ++c) {
    const auto& s = reference.channel(c);
    const auto& e = estimate.channel(c);
    for (std::size_t n = 0; n < s.size(); ++n) {
      const double sv = s[n];
      const double d = sv - static_cast<double>(e[n]);
      signal[c] += sv * sv;
      noise[c] += d * d;
    }
  }
  return 10.0 * std::log10((signal[0] + signal[1] + eps) / (noise[0] + noise[1] + eps));
}

double total_sdr(std::span<const double> per_stem) {
  if (per_stem.size() != kStemCount) {
    throw PreconditionError("total_sdr needs exactly 4 stem values, got " + std::to_string(per_stem.size()));
  }
  return (per_stem[0] + per_stem[1] + per_stem[2] + per_stem[3]) / 4.0;
}

bool is_silent(const StereoTrack& track) {
  for (std::size_t c = 0; c < 2; ++c) {
    for (float v : track.channel(c)) {
      if (v != 0.0f) return false;
    }
  }
  return true;
}

std::array<StereoTrack, kStemCount> scaled_mixture_baseline(const StereoTrack& mixture, double alpha) {
  if (!std::isfinite(alpha)) throw PreconditionError("baseline alpha must be finite");
  StereoTrack scaled = mixture;
  const auto a = static_cast<float>(alpha);
  for (std::size_t c = 0; c < 2; ++c) {
    for (auto& v : scaled.channel(c)) v *= a;
  }
  return {scaled, scaled, scaled, scaled};
}

TrackSdr evaluate_track(const std::string& name, const std::array<StereoTrack, kStemCount>& references,
                        const std::array<StereoTrack, kStemCount>& estimates, double eps) {
  TrackSdr t;
  t.name = name;
  for (std::size_t s = 0; s < kStemCount; ++s) {
    t.silent_reference[s] = is_silent(references[s]);
    if (t.silent_reference[s] && is_silent(estimates[s])) {
      if (references[s].length() != estimates[s].length()) throw PreconditionError("sdr: length mismatch");
      t.stems[s] = 0.0;
    } else {
      t.stems[s] = sdr_stem(references[s], estimates[s], eps);
    }
  }
  t.total = total_sdr(t.stems);
  return t;
}

SdrReport aggregate_report(std::vector<TrackSdr> tracks) {
  if (tracks.empty()) throw PreconditionError("cannot aggregate an empty SDR report");
  SdrReport r;
  for (const auto& t : tracks) {
    for (std::size_t s = 0; s < kStemCount; ++s) {
      r.stems[s] += t.stems[s];
      r.silent_reference[s] = r.silent_reference[s] || t.silent_reference[s];
    }
  }
  for (auto& v : r.stems) v /= static_cast<double>(tracks.size());
  r.total = total_sdr(r.stems);
  r.tracks = std::move(tracks);
  return r;
}

std::string render_table(const std::vector<TableRow>& rows) {
  // Table column order: Drum, Bass, Other, Vocal.
  constexpr std::array<std::size_t, kStemCount> order = {0, 1, 3, 2};
  std::size_t width = 6;
  for (const auto& row : rows) width = std::max(width, row.method.size());
  std::string out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(width), "Method");
  out += buf;
  for (const char* col : {"Drum", "Bass", "Other", "Vocal", "Total"}) {
    std::snprintf(buf, sizeof buf, " %8s", col);
    out += buf;
  }
  out += '\n';
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(width), row.method.c_str());
    out += buf;
    for (auto s : order) {
      std::snprintf(buf, sizeof buf, " %8.3f", row.report->stems[s]);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, " %8.3f\n", row.report->total);
    out += buf;
  }
  return out;
}

std::string render_kv(const SdrReport& report) {
  std::string out;
  std::string silent;
  for (std::size_t s = 0; s < kStemCount; ++s) {
    out += std::string(kStemNames[s]) + "=" + format_double(report.stems[s]) + "\n";
    if (report.silent_reference[s]) silent += (silent.empty() ? "" : ",") + std::string(kStemNames[s]);
  }
  out += "total=" + format_double(report.total) + "\n";
  if (!silent.empty()) out += "silent_stems=" + silent + "\n";
  return out;
}

}  // namespace stemvq
