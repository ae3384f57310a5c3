#pragma once

// Per-utterance feature pipeline: frame-level LLD matrix, silence ratio, and
// the HSF vector [means..., stds..., silence_ratio].

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepser/csv.hpp"
#include "deepser/dsp.hpp"
#include "deepser/error.hpp"

namespace deepser {

enum class Descriptor { RmsLoudness, SlopeLow, SlopeHigh, Flux, Mfcc, F0 };

struct LldConfig {
  std::vector<Descriptor> descriptors{Descriptor::RmsLoudness, Descriptor::SlopeLow, Descriptor::SlopeHigh,
                                      Descriptor::Flux,        Descriptor::Mfcc,     Descriptor::F0};
  double win_ms = 25.0;
  double hop_ms = 10.0;
  std::size_t n_mels = 26;
  std::size_t n_mfcc = 4;
  PitchConfig pitch{};
};

/// Column names produced by a config, in column order.
inline std::vector<std::string> descriptor_names(const LldConfig& cfg) {
  std::vector<std::string> names;
  for (auto d : cfg.descriptors) {
    switch (d) {
      case Descriptor::RmsLoudness: names.emplace_back("rms"); break;
      case Descriptor::SlopeLow: names.emplace_back("slope_0_500"); break;
      case Descriptor::SlopeHigh: names.emplace_back("slope_500_1500"); break;
      case Descriptor::Flux: names.emplace_back("flux"); break;
      case Descriptor::Mfcc:
        for (std::size_t i = 1; i <= cfg.n_mfcc; ++i) names.push_back("mfcc" + std::to_string(i));
        break;
      case Descriptor::F0: names.emplace_back("f0"); break;
    }
  }
  return names;
}

/// Frames x K descriptor matrix for one utterance (row-major).
struct LLDMatrix {
  std::string utterance_id;
  std::vector<std::string> descriptor_names;
  std::vector<double> values;

  std::size_t cols() const { return descriptor_names.size(); }
  std::size_t rows() const { return cols() == 0 ? 0 : values.size() / cols(); }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols(), cols()}; }
};

struct HsfVector {
  std::string utterance_id;
  std::vector<double> values;
};

/// Named collection of HSF vectors sharing one layout.
struct FeatureTable {
  std::vector<std::string> names;
  std::vector<HsfVector> rows;
};

struct SilenceConfig {
  double factor = 0.3;
  double win_ms = 25.0;
  double hop_ms = 10.0;
};

inline LLDMatrix extract_llds(const AudioBuffer& audio, const LldConfig& cfg = {}, std::string utterance_id = {}) {
  if (cfg.descriptors.empty()) throw std::invalid_argument("extract_llds: no descriptors selected");
  const FrameSeries frames = frame_signal(audio, cfg.win_ms, cfg.hop_ms);
  if (frames.size() == 0) throw Error("utterance too short: " + utterance_id);

  LLDMatrix out;
  out.utterance_id = std::move(utterance_id);
  out.descriptor_names = descriptor_names(cfg);
  out.values.reserve(frames.size() * out.cols());

  Spectrum previous;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const auto& frame = frames.frames[k];
    const Spectrum spectrum = magnitude_spectrum(frame, audio.sample_rate);
    for (auto d : cfg.descriptors) {
      switch (d) {
        case Descriptor::RmsLoudness: out.values.push_back(rms(frame)); break;
        case Descriptor::SlopeLow: out.values.push_back(spectral_slope(spectrum, 0.0, 500.0)); break;
        case Descriptor::SlopeHigh: out.values.push_back(spectral_slope(spectrum, 500.0, 1500.0)); break;
        case Descriptor::Flux: out.values.push_back(k == 0 ? 0.0 : spectral_flux(spectrum, previous)); break;
        case Descriptor::Mfcc: {
          const auto c = mfcc(spectrum, cfg.n_mels, cfg.n_mfcc);
          out.values.insert(out.values.end(), c.begin(), c.end());
          break;
        }
        case Descriptor::F0: out.values.push_back(f0_autocorrelation(frame, audio.sample_rate, cfg.pitch)); break;
      }
    }
    previous = spectrum;
  }
  return out;
}

/// Fraction of frames whose RMS is strictly below factor * mean frame RMS.
inline double silence_ratio(const AudioBuffer& audio, const SilenceConfig& cfg = {}) {
  if (!(cfg.factor > 0.0)) throw std::invalid_argument("silence_ratio: factor must be positive");
  const FrameSeries frames = frame_signal(audio, cfg.win_ms, cfg.hop_ms);
  if (frames.size() == 0) throw Error("utterance too short");
  std::vector<double> energy;
  energy.reserve(frames.size());
  double total = 0.0;
  for (const auto& f : frames.frames) {
    energy.push_back(rms(f));
    total += energy.back();
  }
  const double threshold = cfg.factor * total / static_cast<double>(energy.size());
  std::size_t silent = 0;
  for (double e : energy) silent += e < threshold ? 1 : 0;
  return static_cast<double>(silent) / static_cast<double>(energy.size());
}

inline std::vector<std::string> hsf_names(std::span<const std::string> lld_names) {
  std::vector<std::string> names;
  names.reserve(2 * lld_names.size() + 1);
  for (const auto& n : lld_names) names.push_back("mean_" + n);
  for (const auto& n : lld_names) names.push_back("std_" + n);
  names.emplace_back("silence_ratio");
  return names;
}

/// Column means and population standard deviations, then the silence ratio.
inline HsfVector aggregate_hsf(const LLDMatrix& llds, double silence) {
  const std::size_t rows = llds.rows(), cols = llds.cols();
  if (rows == 0 || cols == 0) throw Error("aggregate_hsf: empty LLD matrix for " + llds.utterance_id);
  if (!(silence >= 0.0 && silence <= 1.0)) throw std::invalid_argument("aggregate_hsf: silence ratio outside [0,1]");
  HsfVector out;
  out.utterance_id = llds.utterance_id;
  out.values.assign(2 * cols + 1, 0.0);
  const auto n = static_cast<double>(rows);
  for (std::size_t c = 0; c < cols; ++c) {
    double sum = 0.0;
    for (std::size_t r = 0; r < rows; ++r) sum += llds.at(r, c);
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) ss += (llds.at(r, c) - mean) * (llds.at(r, c) - mean);
    out.values[c] = mean;
    out.values[cols + c] = std::sqrt(ss / n);
  }
  out.values[2 * cols] = silence;
  return out;
}

/// Reads a frame-level LLD table: header "utterance_id,<names...>", one row
/// per frame. Consecutive rows sharing an id form one utterance; matrices are
/// returned in order of first appearance. A non-empty expected_names must all
/// be present in the header; the matrix then keeps only those columns, in the
/// expected order.
inline std::vector<LLDMatrix> ingest_lld_table(const std::filesystem::path& path,
                                               std::span<const std::string> expected_names = {}) {
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw Error("empty LLD table: " + path.string());
  const auto header = csv::split(lines[0]);
  if (header.size() < 2) throw Error("LLD table needs an id column and at least one descriptor: " + path.string());

  std::vector<std::string> names;
  for (std::size_t i = 1; i < header.size(); ++i) names.emplace_back(csv::trim(header[i]));

  std::vector<std::size_t> columns;
  if (expected_names.empty()) {
    for (std::size_t i = 0; i < names.size(); ++i) columns.push_back(i);
  } else {
    std::string missing;
    for (const auto& want : expected_names) {
      const auto it = std::find(names.begin(), names.end(), want);
      if (it == names.end()) missing += (missing.empty() ? "" : ", ") + want;
      else columns.push_back(static_cast<std::size_t>(it - names.begin()));
    }
    if (!missing.empty()) throw Error("LLD table header missing: " + missing);
    names.assign(expected_names.begin(), expected_names.end());
  }

  std::vector<LLDMatrix> out;
  std::map<std::string, std::size_t, std::less<>> index;
  for (std::size_t row = 1; row < lines.size(); ++row) {
    const auto cells = csv::split(lines[row]);
    if (cells.size() != header.size())
      throw Error("LLD table row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                  " cells, got " + std::to_string(cells.size()));
    const std::string id(csv::trim(cells[0]));
    auto it = index.find(id);
    if (it == index.end()) {
      it = index.emplace(id, out.size()).first;
      out.push_back(LLDMatrix{id, names, {}});
    } else if (it->second + 1 != out.size()) {
      throw Error("LLD table row " + std::to_string(row) + ": rows of utterance '" + id + "' are not contiguous");
    }
    for (auto c : columns) {
      const auto v = csv::parse_double(cells[c + 1]);
      if (!v)
        throw Error("LLD table row " + std::to_string(row) + ": missing or non-finite value in column '" +
                    std::string(csv::trim(header[c + 1])) + "'");
      out[it->second].values.push_back(*v);
    }
  }
  return out;
}

inline void write_feature_cache(const FeatureTable& table, const std::filesystem::path& path) {
  for (const auto& r : table.rows)
    if (r.values.size() != table.names.size())
      throw Error("write_feature_cache: vector '" + r.utterance_id + "' has " + std::to_string(r.values.size()) +
                  " values, expected " + std::to_string(table.names.size()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write feature cache: " + path.string());
  out << "utterance_id";
  for (const auto& n : table.names) out << ',' << n;
  out << '\n';
  for (const auto& r : table.rows) {
    out << r.utterance_id;
    for (double v : r.values) out << ',' << csv::format_double(v);
    out << '\n';
  }
  if (!out) throw Error("failed writing feature cache: " + path.string());
}

inline FeatureTable read_feature_cache(const std::filesystem::path& path) {
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw Error("empty feature cache: " + path.string());
  const auto header = csv::split(lines[0]);
  if (csv::trim(header[0]) != "utterance_id") throw Error("feature cache header must start with utterance_id");
  FeatureTable table;
  for (std::size_t i = 1; i < header.size(); ++i) table.names.emplace_back(csv::trim(header[i]));
  std::set<std::string, std::less<>> seen;
  for (std::size_t row = 1; row < lines.size(); ++row) {
    const auto cells = csv::split(lines[row]);
    if (cells.size() != header.size())
      throw Error("feature cache row " + std::to_string(row) + ": wrong cell count");
    HsfVector v;
    v.utterance_id = std::string(csv::trim(cells[0]));
    if (!seen.insert(v.utterance_id).second)
      throw Error("feature cache row " + std::to_string(row) + ": duplicate id '" + v.utterance_id + "'");
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const auto x = csv::parse_double(cells[c]);
      if (!x) throw Error("feature cache row " + std::to_string(row) + ": bad value in column " + std::to_string(c));
      v.values.push_back(*x);
    }
    table.rows.push_back(std::move(v));
  }
  return table;
}

}  // namespace deepser
