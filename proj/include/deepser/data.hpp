#pragma once

// Manifests, label normalization, scalers and the partitioning protocols
// (speaker-dependent, leave-one-session-out, mixed-corpus).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "deepser/csv.hpp"
#include "deepser/error.hpp"
#include "deepser/features.hpp"
#include "deepser/random.hpp"

namespace deepser {

using Matrix = Eigen::MatrixXd;
using Labels = std::array<double, 3>;  // valence, arousal, dominance

enum class Corpus { Iemocap, Improv, Synth };

inline std::string to_string(Corpus c) {
  switch (c) {
    case Corpus::Iemocap: return "IEMOCAP";
    case Corpus::Improv: return "IMPROV";
    case Corpus::Synth: return "SYNTH";
  }
  return "?";
}

inline Corpus parse_corpus(std::string_view s) {
  if (s == "IEMOCAP") return Corpus::Iemocap;
  if (s == "IMPROV" || s == "MSP-IMPROV") return Corpus::Improv;
  if (s == "SYNTH") return Corpus::Synth;
  throw Error("unknown corpus '" + std::string(s) + "'");
}

struct UtteranceRecord {
  std::string utterance_id;
  Corpus corpus = Corpus::Synth;
  int session = 1;
  std::string speaker;
  std::string audio_path;
  Labels labels_raw{3.0, 3.0, 3.0};
};

/// Records in canonical (sorted-by-id) order with unique ids.
class Manifest {
 public:
  Manifest() = default;
  explicit Manifest(std::vector<UtteranceRecord> records) : records_(std::move(records)) {
    std::sort(records_.begin(), records_.end(),
              [](const auto& a, const auto& b) { return a.utterance_id < b.utterance_id; });
    for (std::size_t i = 0; i < records_.size(); ++i) {
      if (!index_.emplace(records_[i].utterance_id, i).second)
        throw Error("duplicate utterance id '" + records_[i].utterance_id + "'");
    }
  }

  const std::vector<UtteranceRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  const UtteranceRecord& at(const std::string& id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw Error("unknown utterance id '" + id + "'");
    return records_[it->second];
  }

 private:
  std::vector<UtteranceRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline bool labels_in_range(const Labels& l) {
  return std::all_of(l.begin(), l.end(), [](double x) { return x >= 1.0 && x <= 5.0; });
}

inline constexpr const char* kManifestHeader = "utterance_id,corpus,session,speaker,audio_path,valence,arousal,dominance";

/// Loads a manifest; relative audio paths are resolved against the file's directory.
inline Manifest load_manifest(const std::filesystem::path& path) {
  const auto lines = csv::read_lines(path);
  if (lines.empty() || csv::trim(lines[0]) != kManifestHeader)
    throw Error("manifest " + path.string() + ": header must be '" + kManifestHeader + "'");
  std::vector<UtteranceRecord> records;
  std::set<std::string> seen;
  const auto base = path.parent_path();
  for (std::size_t row = 1; row < lines.size(); ++row) {
    const auto where = "manifest row " + std::to_string(row) + ": ";
    const auto cells = csv::split(lines[row]);
    if (cells.size() != 8) throw Error(where + "expected 8 cells, got " + std::to_string(cells.size()));
    UtteranceRecord r;
    r.utterance_id = std::string(csv::trim(cells[0]));
    if (r.utterance_id.empty()) throw Error(where + "empty utterance id");
    if (!seen.insert(r.utterance_id).second) throw Error(where + "duplicate utterance id '" + r.utterance_id + "'");
    try {
      r.corpus = parse_corpus(csv::trim(cells[1]));
    } catch (const Error& e) {
      throw Error(where + e.what());
    }
    const auto session = csv::parse_long(cells[2]);
    if (!session || *session < 1) throw Error(where + "session must be a positive integer");
    r.session = static_cast<int>(*session);
    r.speaker = std::string(csv::trim(cells[3]));
    r.audio_path = std::string(csv::trim(cells[4]));
    if (!r.audio_path.empty() && std::filesystem::path(r.audio_path).is_relative())
      r.audio_path = (base / r.audio_path).lexically_normal().string();
    for (int k = 0; k < 3; ++k) {
      const auto v = csv::parse_double(cells[5 + k]);
      if (!v) throw Error(where + "malformed label");
      r.labels_raw[k] = *v;
    }
    if (!labels_in_range(r.labels_raw)) throw Error(where + "label outside [1, 5]");
    records.push_back(std::move(r));
  }
  return Manifest(std::move(records));
}

/// Writes a manifest; audio paths are written relative to `relative_to` when given.
inline void write_manifest(const Manifest& manifest, const std::filesystem::path& path,
                           const std::filesystem::path& relative_to = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << kManifestHeader << '\n';
  for (const auto& r : manifest.records()) {
    std::string audio = r.audio_path;
    if (!relative_to.empty() && !audio.empty()) audio = std::filesystem::path(audio).lexically_relative(relative_to).string();
    out << r.utterance_id << ',' << to_string(r.corpus) << ',' << r.session << ',' << r.speaker << ',' << audio;
    for (double l : r.labels_raw) out << ',' << csv::format_double(l);
    out << '\n';
  }
  if (!out) throw Error("failed writing manifest " + path.string());
}

/// [1, 5] -> [-1, 1] via (x - 3) / 2.
inline Labels normalize_labels(const Labels& raw) {
  if (!labels_in_range(raw)) throw std::invalid_argument("normalize_labels: component outside [1, 5]");
  return {(raw[0] - 3.0) / 2.0, (raw[1] - 3.0) / 2.0, (raw[2] - 3.0) / 2.0};
}

inline Labels denormalize_labels(const Labels& n) { return {2.0 * n[0] + 3.0, 2.0 * n[1] + 3.0, 2.0 * n[2] + 3.0}; }

enum class ScalerKind { ZScore, MinMax };

/// Per-column affine map (x - offset) / scale, fitted on training rows.
struct Scaler {
  ScalerKind kind = ScalerKind::ZScore;
  Eigen::VectorXd offset;
  Eigen::VectorXd scale;
  std::size_t fitted_rows = 0;

  Eigen::Index dims() const { return offset.size(); }
};

inline Scaler fit_scaler(ScalerKind kind, const Matrix& train) {
  if (train.rows() == 0 || train.cols() == 0) throw std::invalid_argument("fit_scaler: empty training matrix");
  Scaler s;
  s.kind = kind;
  s.fitted_rows = static_cast<std::size_t>(train.rows());
  if (kind == ScalerKind::ZScore) {
    s.offset = train.colwise().mean().transpose();
    s.scale = ((train.rowwise() - s.offset.transpose()).array().square().colwise().mean()).sqrt().transpose();
    for (Eigen::Index c = 0; c < s.scale.size(); ++c)
      if (s.scale[c] < 1e-12) s.scale[c] = 1.0;
  } else {
    s.offset = train.colwise().minCoeff().transpose();
    s.scale = train.colwise().maxCoeff().transpose() - s.offset;
    for (Eigen::Index c = 0; c < s.scale.size(); ++c)
      if (!(s.scale[c] > 0.0)) s.scale[c] = 1.0;
  }
  return s;
}

inline Matrix apply_scaler(const Scaler& s, const Matrix& x) {
  if (x.cols() != s.dims()) throw std::invalid_argument("apply_scaler: dimensionality mismatch");
  return ((x.rowwise() - s.offset.transpose()).array().rowwise() / s.scale.transpose().array()).matrix();
}

inline Matrix invert_scaler(const Scaler& s, const Matrix& x) {
  if (x.cols() != s.dims()) throw std::invalid_argument("invert_scaler: dimensionality mismatch");
  return ((x.array().rowwise() * s.scale.transpose().array()).rowwise() + s.offset.transpose().array()).matrix();
}

struct Partition {
  std::vector<std::string> train, dev, test;
};

/// Checks pairwise disjointness and that the union covers the manifest exactly.
inline void validate_partition(const Partition& p, const Manifest& m) {
  std::set<std::string> all;
  for (const auto* set : {&p.train, &p.dev, &p.test})
    for (const auto& id : *set) {
      if (!m.contains(id)) throw Error("partition id '" + id + "' not in manifest");
      if (!all.insert(id).second) throw Error("partition sets overlap at '" + id + "'");
    }
  if (all.size() != m.size()) throw Error("partition does not cover the manifest");
}

namespace detail {

// Development rows carved from the training side: ceil(fraction * n), which
// reproduces the published IEMOCAP / MSP-IMPROV partition sizes.
inline std::size_t dev_count(std::size_t remainder, double dev_fraction) {
  return static_cast<std::size_t>(std::ceil(dev_fraction * static_cast<double>(remainder) - 1e-9));
}

inline void carve_dev(std::vector<std::string> pool, double dev_fraction, Rng& rng, Partition& out) {
  rng.shuffle(std::span<std::string>(pool));
  const std::size_t dev = dev_count(pool.size(), dev_fraction);
  if (dev >= pool.size()) throw Error("split leaves an empty training set");
  const auto cut = pool.end() - static_cast<std::ptrdiff_t>(dev);
  out.train.assign(pool.begin(), cut);
  out.dev.assign(cut, pool.end());
}

}  // namespace detail

/// Speaker-dependent split: seeded shuffle of the canonical order, the last
/// test_count ids become test, then dev is carved from the remainder.
inline Partition split_sd(const Manifest& m, std::size_t test_count, double dev_fraction, std::uint64_t seed) {
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) throw std::invalid_argument("split_sd: dev_fraction must lie in (0, 1)");
  if (test_count >= m.size()) throw Error("split_sd: test_count must be smaller than the manifest");
  std::vector<std::string> ids;
  ids.reserve(m.size());
  for (const auto& r : m.records()) ids.push_back(r.utterance_id);
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(ids));
  Partition p;
  const auto cut = ids.end() - static_cast<std::ptrdiff_t>(test_count);
  p.test.assign(cut, ids.end());
  ids.erase(cut, ids.end());
  detail::carve_dev(std::move(ids), dev_fraction, rng, p);
  return p;
}

/// Leave-one-session-out: the held-out session is the test set.
inline Partition split_loso(const Manifest& m, int holdout_session, double dev_fraction, std::uint64_t seed) {
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) throw std::invalid_argument("split_loso: dev_fraction must lie in (0, 1)");
  Partition p;
  std::vector<std::string> rest;
  for (const auto& r : m.records()) (r.session == holdout_session ? p.test : rest).push_back(r.utterance_id);
  if (p.test.empty()) throw Error("split_loso: session " + std::to_string(holdout_session) + " not in manifest");
  if (rest.empty()) throw Error("split_loso: holding out session " + std::to_string(holdout_session) + " leaves no training data");
  Rng rng(seed);
  detail::carve_dev(std::move(rest), dev_fraction, rng, p);
  return p;
}

inline nlohmann::json to_json(const Partition& p) {
  return {{"train", p.train}, {"dev", p.dev}, {"test", p.test}};
}

inline Partition partition_from_json(const nlohmann::json& j) {
  Partition p;
  p.train = j.at("train").get<std::vector<std::string>>();
  p.dev = j.at("dev").get<std::vector<std::string>>();
  p.test = j.at("test").get<std::vector<std::string>>();
  return p;
}

inline void save_partition(const Partition& p, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write split file " + path.string());
  out << to_json(p).dump(1) << '\n';
}

inline Partition load_partition(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open split file " + path.string());
  try {
    return partition_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed split file " + path.string() + ": " + e.what());
  }
}

/// Feature rows and raw labels for one partition set.
struct LabeledSet {
  std::vector<std::string> ids;
  std::vector<Corpus> corpora;
  Matrix features;  // rows x feature_dim
  Matrix labels;    // rows x 3, raw [1, 5] scale

  std::size_t size() const { return ids.size(); }
};

struct SplitData {
  LabeledSet train, dev, test;
};

/// Gathers feature rows and labels for every id of a partition.
inline SplitData assemble(const Partition& p, const Manifest& m, const FeatureTable& features) {
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < features.rows.size(); ++i) row_of.emplace(features.rows[i].utterance_id, i);
  const auto dim = static_cast<Eigen::Index>(features.names.size());
  auto build = [&](const std::vector<std::string>& ids) {
    LabeledSet s;
    s.ids = ids;
    s.features.resize(static_cast<Eigen::Index>(ids.size()), dim);
    s.labels.resize(static_cast<Eigen::Index>(ids.size()), 3);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto it = row_of.find(ids[i]);
      if (it == row_of.end()) throw Error("no features for utterance '" + ids[i] + "'");
      const auto& rec = m.at(ids[i]);
      s.corpora.push_back(rec.corpus);
      const auto& values = features.rows[it->second].values;
      for (Eigen::Index c = 0; c < dim; ++c) s.features(static_cast<Eigen::Index>(i), c) = values[static_cast<std::size_t>(c)];
      for (Eigen::Index c = 0; c < 3; ++c) s.labels(static_cast<Eigen::Index>(i), c) = rec.labels_raw[static_cast<std::size_t>(c)];
    }
    return s;
  };
  return {build(p.train), build(p.dev), build(p.test)};
}

namespace detail {

inline LabeledSet concat(const LabeledSet& a, const LabeledSet& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  LabeledSet out;
  out.ids = a.ids;
  out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  out.corpora = a.corpora;
  out.corpora.insert(out.corpora.end(), b.corpora.begin(), b.corpora.end());
  out.features.resize(a.features.rows() + b.features.rows(), a.features.cols());
  out.features << a.features, b.features;
  out.labels.resize(a.labels.rows() + b.labels.rows(), 3);
  out.labels << a.labels, b.labels;
  return out;
}

inline Eigen::Index feature_dim(const SplitData& s) {
  for (const auto* set : {&s.train, &s.dev, &s.test})
    if (set->size() != 0) return set->features.cols();
  return -1;
}

}  // namespace detail

/// Set-wise concatenation of two corpora's partitions (train with train, ...).
/// Ids must not collide across the two inputs.
inline SplitData mix_corpora(const SplitData& a, const SplitData& b) {
  const auto da = detail::feature_dim(a), db = detail::feature_dim(b);
  if (da >= 0 && db >= 0 && da != db)
    throw Error("mix_corpora: feature dimensionality mismatch (" + std::to_string(da) + " vs " + std::to_string(db) + ")");
  std::set<std::string> ids;
  for (const auto* s : {&a.train, &a.dev, &a.test, &b.train, &b.dev, &b.test})
    for (const auto& id : s->ids)
      if (!ids.insert(id).second) throw Error("mix_corpora: utterance id '" + id + "' appears in both corpora");
  return {detail::concat(a.train, b.train), detail::concat(a.dev, b.dev), detail::concat(a.test, b.test)};
}

}  // namespace deepser
