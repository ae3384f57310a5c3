#pragma once

// Experiment orchestration: synthetic corpora, feature resolution, the
// end-to-end SD / LOSO / mixed-corpus runs, and result tables.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "deepser/checkpoint.hpp"
#include "deepser/csv.hpp"
#include "deepser/data.hpp"
#include "deepser/dsp.hpp"
#include "deepser/error.hpp"
#include "deepser/features.hpp"
#include "deepser/nn.hpp"
#include "deepser/objectives.hpp"
#include "deepser/random.hpp"
#include "deepser/wav.hpp"

namespace deepser {

// ---------------------------------------------------------------------------
// Synthetic corpus

/// Acoustic parameters that drive one synthetic utterance and its labels.
struct SynthParams {
  double f0 = 0.0;         // Hz, [80, 300]
  double amplitude = 0.0;  // peak, [0.1, 1]
  double silence = 0.0;    // fraction of samples that are silent, [0, 0.6]
  double duration = 0.0;   // seconds, [1, 3]
};

struct SyntheticCorpus {
  Manifest manifest;
  std::vector<SynthParams> params;  // parallel to manifest.records()
  std::filesystem::path manifest_path;
};

namespace detail {

inline double clip01(double x) { return std::clamp(x, 0.0, 1.0); }

// Splits `total` samples into `parts` lengths with random positive weights.
inline std::vector<std::size_t> random_lengths(std::size_t total, std::size_t parts, Rng& rng) {
  std::vector<double> w(parts);
  double sum = 0.0;
  for (auto& x : w) sum += (x = rng.uniform(0.5, 1.5));
  std::vector<std::size_t> out(parts);
  std::size_t used = 0;
  for (std::size_t i = 0; i + 1 < parts; ++i) used += (out[i] = static_cast<std::size_t>(total * w[i] / sum));
  out.back() = total - used;
  return out;
}

}  // namespace detail

/// Harmonic tone bursts (four harmonics, 1/h amplitudes, peak <= amplitude)
/// separated by exact silence, with 5 ms raised-cosine edges.
inline AudioBuffer synthesize_utterance(const SynthParams& p, int sample_rate, Rng& rng) {
  const auto n = static_cast<std::size_t>(std::lround(p.duration * sample_rate));
  const auto silent = static_cast<std::size_t>(std::lround(p.silence * static_cast<double>(n)));
  const std::size_t bursts = 1 + static_cast<std::size_t>(rng.below(3));
  const auto gaps = detail::random_lengths(silent, bursts + 1, rng);
  const auto tones = detail::random_lengths(n - silent, bursts, rng);
  std::array<double, 4> phase{};
  for (auto& ph : phase) ph = rng.uniform(0.0, 2.0 * std::numbers::pi);

  const double norm = 1.0 + 1.0 / 2 + 1.0 / 3 + 1.0 / 4;
  const auto ramp = static_cast<std::size_t>(0.005 * sample_rate);
  AudioBuffer audio;
  audio.sample_rate = sample_rate;
  audio.samples.reserve(n);
  std::size_t t = 0;
  for (std::size_t b = 0; b <= bursts; ++b) {
    audio.samples.insert(audio.samples.end(), gaps[b], 0.0);
    t += gaps[b];
    if (b == bursts) break;
    const std::size_t len = tones[b];
    for (std::size_t i = 0; i < len; ++i, ++t) {
      const double time = static_cast<double>(t) / sample_rate;
      double x = 0.0;
      for (int h = 1; h <= 4; ++h) x += std::sin(2.0 * std::numbers::pi * h * p.f0 * time + phase[h - 1]) / h;
      double env = 1.0;
      const std::size_t edge = std::min(i, len - 1 - i);
      if (edge < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(edge) / static_cast<double>(ramp));
      audio.samples.push_back(p.amplitude * env * x / norm);
    }
  }
  return audio;
}

/// Labels on [1, 5] from the generator parameters plus N(0, 0.05) noise.
inline Labels synthetic_labels(const SynthParams& p, Rng& rng) {
  const double pitch = (p.f0 - 80.0) / 220.0;
  const double valence = detail::clip01(0.6 * pitch + 0.4 * (1.0 - p.silence) + rng.normal(0.0, 0.05));
  const double arousal = detail::clip01(0.8 * p.amplitude + 0.2 * (1.0 - p.silence) + rng.normal(0.0, 0.05));
  const double dominance = detail::clip01(0.7 * p.amplitude + 0.3 * pitch + rng.normal(0.0, 0.05));
  return {1.0 + 4.0 * valence, 1.0 + 4.0 * arousal, 1.0 + 4.0 * dominance};
}

/// Writes <out_dir>/wav/<id>.wav for n utterances plus <out_dir>/manifest.csv.
/// Sessions are assigned round-robin.
inline SyntheticCorpus gen_synthetic_corpus(std::size_t n, std::size_t sessions, std::uint64_t seed,
                                            const std::filesystem::path& out_dir, const std::string& id_prefix = "synth",
                                            int sample_rate = 16000) {
  if (sessions == 0 || n < sessions) throw std::invalid_argument("gen_synthetic_corpus: need n >= sessions >= 1");
  std::filesystem::create_directories(out_dir / "wav");
  Rng rng(seed);
  SyntheticCorpus corpus;
  std::vector<UtteranceRecord> records;
  for (std::size_t i = 0; i < n; ++i) {
    SynthParams p;
    p.f0 = rng.uniform(80.0, 300.0);
    p.amplitude = rng.uniform(0.1, 1.0);
    p.silence = rng.uniform(0.0, 0.6);
    p.duration = rng.uniform(1.0, 3.0);

    char id[64];
    std::snprintf(id, sizeof id, "%s_%05zu", id_prefix.c_str(), i);
    UtteranceRecord r;
    r.utterance_id = id;
    r.corpus = Corpus::Synth;
    r.session = static_cast<int>(i % sessions) + 1;
    r.speaker = "S" + std::to_string(r.session) + ((i / sessions) % 2 ? "F" : "M");
    const auto wav = out_dir / "wav" / (r.utterance_id + ".wav");
    write_wav(wav, synthesize_utterance(p, sample_rate, rng));
    r.audio_path = wav.string();
    r.labels_raw = synthetic_labels(p, rng);
    records.push_back(std::move(r));
    corpus.params.push_back(p);
  }
  corpus.manifest = Manifest(std::move(records));
  corpus.manifest_path = out_dir / "manifest.csv";
  write_manifest(corpus.manifest, corpus.manifest_path, out_dir);
  return corpus;
}

// ---------------------------------------------------------------------------
// Feature resolution

namespace detail {

template <typename Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < count; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = count;
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

inline std::size_t default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

/// HSF vectors for every manifest record, computed from its audio.
inline FeatureTable extract_features(const Manifest& m, const LldConfig& lld = {}, const SilenceConfig& silence = {},
                                     std::size_t workers = default_workers()) {
  FeatureTable table;
  table.names = hsf_names(descriptor_names(lld));
  table.rows.resize(m.size());
  detail::parallel_for(m.size(), workers, [&](std::size_t i) {
    const auto& r = m.records()[i];
    if (r.audio_path.empty()) throw Error("utterance '" + r.utterance_id + "' has no audio path");
    const AudioBuffer audio = read_wav(r.audio_path);
    table.rows[i] = aggregate_hsf(extract_llds(audio, lld, r.utterance_id), silence_ratio(audio, silence));
  });
  return table;
}

/// HSF vectors from an externally extracted LLD table; the silence ratio is
/// computed from each record's audio.
inline FeatureTable features_from_lld_table(const Manifest& m, const std::filesystem::path& lld_path,
                                            const SilenceConfig& silence = {}, std::size_t workers = default_workers()) {
  const auto llds = ingest_lld_table(lld_path);
  std::map<std::string, const LLDMatrix*> by_id;
  for (const auto& l : llds) by_id.emplace(l.utterance_id, &l);
  FeatureTable table;
  if (!llds.empty()) table.names = hsf_names(llds.front().descriptor_names);
  table.rows.resize(m.size());
  detail::parallel_for(m.size(), workers, [&](std::size_t i) {
    const auto& r = m.records()[i];
    const auto it = by_id.find(r.utterance_id);
    if (it == by_id.end()) throw Error("LLD table has no rows for '" + r.utterance_id + "'");
    if (r.audio_path.empty()) throw Error("utterance '" + r.utterance_id + "' needs audio for the silence ratio");
    table.rows[i] = aggregate_hsf(*it->second, silence_ratio(read_wav(r.audio_path), silence));
  });
  return table;
}

// ---------------------------------------------------------------------------
// Experiment configuration

enum class Scenario { SD, LOSO, MixedSD, MixedLOSO };

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::SD: return "SD";
    case Scenario::LOSO: return "LOSO";
    case Scenario::MixedSD: return "MIXED-SD";
    case Scenario::MixedLOSO: return "MIXED-LOSO";
  }
  return "?";
}

/// Accepts SD, LOSO, MIXED-SD, MIXED-LOSO in any case, with '-' or '_'.
inline Scenario parse_scenario(std::string_view s) {
  std::string key(s);
  for (auto& c : key) c = c == '_' ? '-' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (auto sc : {Scenario::SD, Scenario::LOSO, Scenario::MixedSD, Scenario::MixedLOSO})
    if (key == to_string(sc)) return sc;
  throw Error("unknown scenario '" + std::string(s) + "'");
}

inline bool is_mixed(Scenario s) { return s == Scenario::MixedSD || s == Scenario::MixedLOSO; }
inline bool is_loso(Scenario s) { return s == Scenario::LOSO || s == Scenario::MixedLOSO; }

/// Per-corpus inputs: manifest, where features come from, and split sizing.
struct CorpusSource {
  std::filesystem::path manifest;
  std::string features = "native";  // native | ingest:<lld table> | cache:<feature cache>
  std::size_t test_count = 0;       // SD
  int holdout_session = 0;          // LOSO
};

struct ExperimentConfig {
  std::string name = "MLP";
  Scenario scenario = Scenario::SD;
  std::vector<CorpusSource> corpora;
  double dev_fraction = 0.2;
  TrainConfig train{};
  std::vector<std::size_t> hidden_sizes = default_hidden_sizes();
  Activation activation = Activation::Relu;
  SilenceConfig silence{};
  bool per_corpus_norm = false;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  std::size_t workers = default_workers();

  void validate() const {
    const std::size_t want = is_mixed(scenario) ? 2 : 1;
    if (corpora.size() != want)
      throw Error("scenario " + to_string(scenario) + " needs " + std::to_string(want) + " manifest(s), got " +
                  std::to_string(corpora.size()));
    for (const auto& c : corpora) {
      if (is_loso(scenario) && c.holdout_session < 1) throw Error("LOSO scenario needs holdout_session for every corpus");
      if (!is_loso(scenario) && c.test_count == 0) throw Error("SD scenario needs test_count for every corpus");
    }
    if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) throw Error("dev_fraction must lie in (0, 1)");
    if (per_corpus_norm && !is_mixed(scenario)) throw Error("per_corpus_norm only applies to mixed scenarios");
    train.validate();
  }

  /// Resolved settings that determine the result, as sorted key=value lines.
  /// Output directory and worker count are excluded.
  std::string canonical() const {
    std::map<std::string, std::string> kv;
    kv["name"] = name;
    kv["scenario"] = to_string(scenario);
    for (std::size_t i = 0; i < corpora.size(); ++i) {
      const auto p = "corpus" + std::to_string(i) + ".";
      kv[p + "manifest"] = corpora[i].manifest.string();
      kv[p + "features"] = corpora[i].features;
      kv[p + "test_count"] = std::to_string(corpora[i].test_count);
      kv[p + "holdout_session"] = std::to_string(corpora[i].holdout_session);
    }
    kv["dev_fraction"] = csv::format_double(dev_fraction);
    kv["batch_size"] = std::to_string(train.batch_size);
    kv["max_epochs"] = std::to_string(train.max_epochs);
    kv["patience"] = std::to_string(train.patience);
    kv["learning_rate"] = csv::format_double(train.learning_rate);
    kv["loss"] = to_string(train.loss);
    kv["alpha"] = csv::format_double(train.weights.alpha);
    kv["beta"] = csv::format_double(train.weights.beta);
    std::string hidden;
    for (auto s : hidden_sizes) hidden += (hidden.empty() ? "" : ",") + std::to_string(s);
    kv["hidden_sizes"] = hidden;
    kv["activation"] = to_string(activation);
    kv["silence_factor"] = csv::format_double(silence.factor);
    kv["per_corpus_norm"] = per_corpus_norm ? "true" : "false";
    kv["seed"] = std::to_string(seed);
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
  }
};

/// 64-bit FNV-1a, rendered as 16 hex digits.
inline std::string fingerprint(std::string_view text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  for (auto part : csv::split(s, ',')) {
    part = csv::trim(part);
    if (!part.empty()) out.emplace_back(part);
  }
  return out;
}

inline std::string unquote(std::string_view v) {
  v = csv::trim(v);
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) v = v.substr(1, v.size() - 2);
  return std::string(v);
}

}  // namespace detail

/// Parses `key = value` lines ('#' starts a comment). Relative paths are
/// resolved against `base_dir`. Comma-separated lists carry one entry per corpus.
inline ExperimentConfig parse_experiment_config(std::string_view text, const std::filesystem::path& base_dir = {}) {
  ExperimentConfig cfg;
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto trimmed = csv::trim(line);
    if (trimmed.empty() || trimmed.front() == '[') continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string_view::npos) throw Error("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key(csv::trim(trimmed.substr(0, eq)));
    if (!kv.emplace(key, detail::unquote(trimmed.substr(eq + 1))).second)
      throw Error("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }

  auto take = [&](const std::string& key) -> std::optional<std::string> {
    const auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    auto v = it->second;
    kv.erase(it);
    return v;
  };
  auto number = [](const std::string& key, const std::string& v) {
    const auto d = csv::parse_double(v);
    if (!d) throw Error("config key '" + key + "': not a number: " + v);
    return *d;
  };
  auto count = [](const std::string& key, const std::string& v) {
    const auto n = csv::parse_long(v);
    if (!n || *n < 0) throw Error("config key '" + key + "': not a non-negative integer: " + v);
    return static_cast<std::size_t>(*n);
  };
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? (base_dir / path).lexically_normal() : path;
  };

  if (auto v = take("name")) cfg.name = *v;
  if (auto v = take("scenario")) cfg.scenario = parse_scenario(*v);
  const auto manifests = detail::split_list(take("manifest").value_or(""));
  if (manifests.empty()) throw Error("config: 'manifest' is required");
  cfg.corpora.resize(manifests.size());
  for (std::size_t i = 0; i < manifests.size(); ++i) cfg.corpora[i].manifest = resolve(manifests[i]);
  auto per_corpus = [&](const std::string& key, auto assign) {
    const auto v = take(key);
    if (!v) return;
    const auto items = detail::split_list(*v);
    if (items.size() != cfg.corpora.size())
      throw Error("config key '" + key + "': expected " + std::to_string(cfg.corpora.size()) + " comma-separated values");
    for (std::size_t i = 0; i < items.size(); ++i) assign(cfg.corpora[i], items[i]);
  };
  per_corpus("features", [&](CorpusSource& c, const std::string& v) {
    if (v.rfind("ingest:", 0) == 0) c.features = "ingest:" + resolve(v.substr(7)).string();
    else if (v.rfind("cache:", 0) == 0) c.features = "cache:" + resolve(v.substr(6)).string();
    else if (v == "native") c.features = v;
    else throw Error("config key 'features': expected native, ingest:PATH or cache:PATH, got " + v);
  });
  per_corpus("test_count", [&](CorpusSource& c, const std::string& v) { c.test_count = count("test_count", v); });
  per_corpus("holdout_session",
             [&](CorpusSource& c, const std::string& v) { c.holdout_session = static_cast<int>(count("holdout_session", v)); });

  if (auto v = take("dev_fraction")) cfg.dev_fraction = number("dev_fraction", *v);
  if (auto v = take("loss")) cfg.train.loss = parse_loss_kind(*v);
  if (auto v = take("alpha")) cfg.train.weights.alpha = number("alpha", *v);
  if (auto v = take("beta")) cfg.train.weights.beta = number("beta", *v);
  if (auto v = take("learning_rate")) cfg.train.learning_rate = number("learning_rate", *v);
  if (auto v = take("batch_size")) cfg.train.batch_size = count("batch_size", *v);
  if (auto v = take("max_epochs")) cfg.train.max_epochs = count("max_epochs", *v);
  if (auto v = take("patience")) cfg.train.patience = count("patience", *v);
  if (auto v = take("hidden_sizes")) {
    cfg.hidden_sizes.clear();
    for (const auto& s : detail::split_list(*v)) cfg.hidden_sizes.push_back(count("hidden_sizes", s));
  }
  if (auto v = take("activation")) cfg.activation = parse_activation(*v);
  if (auto v = take("silence_factor")) cfg.silence.factor = number("silence_factor", *v);
  if (auto v = take("per_corpus_norm")) cfg.per_corpus_norm = *v == "true" || *v == "1";
  if (auto v = take("seed")) cfg.seed = count("seed", *v);
  if (auto v = take("out_dir")) cfg.out_dir = resolve(*v);
  if (auto v = take("workers")) cfg.workers = std::max<std::size_t>(1, count("workers", *v));
  cfg.train.seed = cfg.seed;

  if (!kv.empty()) throw Error("config: unknown key '" + kv.begin()->first + "'");
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str(), path.parent_path());
}

// ---------------------------------------------------------------------------
// Reports

struct Report {
  std::string name;
  std::string scenario;
  EvalTriple triple;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  double wall_seconds = 0.0;
  std::string fingerprint;
};

/// Everything except timing, as JSON text; identical configs give identical bodies.
inline std::string report_body(const Report& r) {
  nlohmann::ordered_json j;
  j["name"] = r.name;
  j["scenario"] = r.scenario;
  j["ccc_v"] = r.triple.ccc_v;
  j["ccc_a"] = r.triple.ccc_a;
  j["ccc_d"] = r.triple.ccc_d;
  j["mean"] = r.triple.mean;
  j["epochs"] = r.epochs;
  j["best_epoch"] = r.best_epoch + 1;
  j["fingerprint"] = r.fingerprint;
  return j.dump(1);
}

inline std::string format3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

/// "V  A  D  Mean" cells, three decimals, two-space separated.
inline std::string format_scores(const EvalTriple& t) {
  const double recomputed = (t.ccc_v + t.ccc_a + t.ccc_d) / 3.0;
  if (std::abs(recomputed - t.mean) > 5e-4) throw Error("report mean disagrees with its components");
  return format3(t.ccc_v) + "  " + format3(t.ccc_a) + "  " + format3(t.ccc_d) + "  " + format3(recomputed);
}

/// Writes an aligned text table to `path` and the same rows as CSV to
/// `path` with extension .csv.
inline void emit_report(const std::vector<Report>& reports, const std::filesystem::path& path) {
  if (reports.empty()) throw Error("emit_report: no reports");
  std::size_t width = std::string("Method/Scenario").size();
  std::vector<std::string> labels;
  for (const auto& r : reports) {
    labels.push_back(r.name + "/" + r.scenario);
    width = std::max(width, labels.back().size());
  }
  auto pad = [&](std::string s) {
    s.resize(width, ' ');
    return s;
  };
  std::ostringstream text, table;
  text << pad("Method/Scenario") << "  CCC_V  CCC_A  CCC_D  Mean\n";
  table << "method_scenario,ccc_v,ccc_a,ccc_d,mean\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& t = reports[i].triple;
    text << pad(labels[i]) << "  " << format_scores(t) << '\n';
    table << labels[i] << ',' << format3(t.ccc_v) << ',' << format3(t.ccc_a) << ',' << format3(t.ccc_d) << ','
          << format3((t.ccc_v + t.ccc_a + t.ccc_d) / 3.0) << '\n';
  }
  auto csv_path = path;
  csv_path.replace_extension(".csv");
  if (csv_path == path) csv_path += ".csv";
  for (const auto& [p, body] : {std::pair{path, text.str()}, std::pair{csv_path, table.str()}}) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write report " + p.string());
    out << body;
    if (!out) throw Error("failed writing report " + p.string());
  }
}

// ---------------------------------------------------------------------------
// End-to-end pipeline

/// Intermediate products of one run, exposed for provenance checks.
struct ExperimentArtifacts {
  SplitData data;
  std::vector<std::string> feature_names;
  std::vector<Scaler> feature_scalers;  // one, or one per corpus with per_corpus_norm
  Scaler label_scaler;
  TrainResult trained;
  Matrix test_predictions;  // rows x 3, normalized [-1, 1] label space
};

namespace detail {

[[noreturn]] inline void stage_error(const std::string& stage, const std::exception& e) {
  throw Error("stage '" + stage + "': " + e.what());
}

template <typename Fn>
auto stage(const std::string& name, Fn fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    stage_error(name, e);
  }
}

inline FeatureTable resolve_features(const Manifest& m, const CorpusSource& src, const ExperimentConfig& cfg) {
  if (src.features == "native") return extract_features(m, LldConfig{}, cfg.silence, cfg.workers);
  if (src.features.rfind("ingest:", 0) == 0)
    return features_from_lld_table(m, src.features.substr(7), cfg.silence, cfg.workers);
  if (src.features.rfind("cache:", 0) == 0) return read_feature_cache(src.features.substr(6));
  throw Error("unknown feature source '" + src.features + "'");
}

inline Matrix normalized_labels(const Matrix& raw) {
  Matrix out(raw.rows(), 3);
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const auto l = normalize_labels({raw(i, 0), raw(i, 1), raw(i, 2)});
    out.row(i) << l[0], l[1], l[2];
  }
  return out;
}

}  // namespace detail

/// Runs the full pipeline without touching the filesystem beyond reading inputs.
inline ExperimentArtifacts run_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentArtifacts art;
  std::vector<SplitData> parts;
  std::vector<std::string> feature_names;
  for (const auto& src : cfg.corpora) {
    const Manifest m = detail::stage("load manifest", [&] { return load_manifest(src.manifest); });
    const FeatureTable features = detail::stage("features", [&] { return detail::resolve_features(m, src, cfg); });
    if (!feature_names.empty() && feature_names != features.names)
      throw Error("stage 'features': corpora have different feature layouts");
    feature_names = features.names;
    const Partition p = detail::stage("split", [&] {
      return is_loso(cfg.scenario) ? split_loso(m, src.holdout_session, cfg.dev_fraction, cfg.seed)
                                   : split_sd(m, src.test_count, cfg.dev_fraction, cfg.seed);
    });
    parts.push_back(detail::stage("assemble", [&] { return assemble(p, m, features); }));
  }
  art.feature_names = feature_names;
  art.data = detail::stage("mix", [&] { return parts.size() == 2 ? mix_corpora(parts[0], parts[1]) : parts[0]; });
  auto& d = art.data;

  // Labels: [1, 5] -> [-1, 1] -> minmax [0, 1] fitted on train only.
  const Matrix train_labels = detail::normalized_labels(d.train.labels);
  const Matrix dev_labels = detail::normalized_labels(d.dev.labels);
  art.label_scaler = fit_scaler(ScalerKind::MinMax, train_labels);

  // Features: z-score fitted on train rows (globally, or per corpus).
  Matrix train_x, dev_x, test_x;
  if (cfg.per_corpus_norm) {
    train_x = d.train.features;
    dev_x = d.dev.features;
    test_x = d.test.features;
    std::vector<Corpus> seen;
    for (auto c : d.train.corpora)
      if (std::find(seen.begin(), seen.end(), c) == seen.end()) seen.push_back(c);
    for (auto c : seen) {
      auto rows_of = [c](const LabeledSet& s) {
        std::vector<Eigen::Index> idx;
        for (std::size_t i = 0; i < s.corpora.size(); ++i)
          if (s.corpora[i] == c) idx.push_back(static_cast<Eigen::Index>(i));
        return idx;
      };
      const auto tr = rows_of(d.train);
      const Scaler s = fit_scaler(ScalerKind::ZScore, d.train.features(tr, Eigen::all));
      art.feature_scalers.push_back(s);
      train_x(tr, Eigen::all) = apply_scaler(s, d.train.features(tr, Eigen::all));
      for (auto [set, x] : {std::pair{&d.dev, &dev_x}, std::pair{&d.test, &test_x}}) {
        const auto idx = rows_of(*set);
        if (!idx.empty()) (*x)(idx, Eigen::all) = apply_scaler(s, set->features(idx, Eigen::all));
      }
    }
  } else {
    art.feature_scalers.push_back(fit_scaler(ScalerKind::ZScore, d.train.features));
    train_x = apply_scaler(art.feature_scalers[0], d.train.features);
    dev_x = apply_scaler(art.feature_scalers[0], d.dev.features);
    test_x = apply_scaler(art.feature_scalers[0], d.test.features);
  }

  art.trained = detail::stage("train", [&] {
    const MlpModel init = init_model(static_cast<std::size_t>(train_x.cols()), cfg.hidden_sizes, cfg.activation, cfg.seed);
    return train(init, train_x, apply_scaler(art.label_scaler, train_labels), dev_x,
                 apply_scaler(art.label_scaler, dev_labels), cfg.train);
  });
  art.test_predictions = invert_scaler(art.label_scaler, forward(art.trained.model, test_x));
  return art;
}

/// Per-dimension CCC of predictions against the normalized gold labels of a set.
inline EvalTriple evaluate_set(const Matrix& predictions, const Matrix& raw_labels) {
  const Matrix gold = detail::normalized_labels(raw_labels);
  return evaluate(detail::column(predictions, 0), detail::column(predictions, 1), detail::column(predictions, 2),
                  detail::column(gold, 0), detail::column(gold, 1), detail::column(gold, 2));
}

/// Runs the pipeline and writes report.txt / report.csv / report.json (and
/// model.ckpt when a single feature scaler is used) into cfg.out_dir.
/// On failure, files written by this run are removed.
inline Report run_experiment(const ExperimentConfig& cfg, ExperimentArtifacts* artifacts = nullptr) {
  const auto started = std::chrono::steady_clock::now();
  ExperimentArtifacts art = run_pipeline(cfg);

  Report report;
  report.name = cfg.name;
  report.scenario = to_string(cfg.scenario);
  report.triple = detail::stage("evaluate", [&] { return evaluate_set(art.test_predictions, art.data.test.labels); });
  report.epochs = art.trained.history.epochs();
  report.best_epoch = art.trained.history.best_epoch;
  report.fingerprint = fingerprint(cfg.canonical());
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  if (!cfg.out_dir.empty()) {
    std::vector<std::filesystem::path> written;
    try {
      std::filesystem::create_directories(cfg.out_dir);
      const auto txt = cfg.out_dir / "report.txt";
      written = {txt, cfg.out_dir / "report.csv"};
      emit_report({report}, txt);
      const auto json = cfg.out_dir / "report.json";
      written.push_back(json);
      auto body = nlohmann::ordered_json::parse(report_body(report));
      body["wall_seconds"] = report.wall_seconds;
      std::ofstream(json) << body.dump(1) << '\n';
      if (art.feature_scalers.size() == 1) {
        const auto ck = cfg.out_dir / "model.ckpt";
        written.push_back(ck);
        save_checkpoint({art.trained.model, art.feature_scalers[0], art.label_scaler, art.feature_names}, ck);
      }
    } catch (const std::exception& e) {
      std::error_code ec;
      for (const auto& p : written) std::filesystem::remove(p, ec);
      detail::stage_error("write outputs", e);
    }
  }
  if (artifacts) *artifacts = std::move(art);
  return report;
}

// ---------------------------------------------------------------------------
// Stand-alone train / evaluate on prepared files (used by the CLI)

struct TrainedCheckpoint {
  Checkpoint checkpoint;
  TrainHistory history;
};

/// Fits scalers on the partition's train rows and trains a fresh model.
inline TrainedCheckpoint train_checkpoint(const Manifest& m, const FeatureTable& features, const Partition& p,
                                          const TrainConfig& cfg, const std::vector<std::size_t>& hidden_sizes,
                                          Activation activation, std::uint64_t seed) {
  const SplitData d = assemble(p, m, features);
  const Matrix train_y = detail::normalized_labels(d.train.labels);
  const Matrix dev_y = detail::normalized_labels(d.dev.labels);
  TrainedCheckpoint out;
  auto& ck = out.checkpoint;
  ck.feature_names = features.names;
  ck.feature_scaler = fit_scaler(ScalerKind::ZScore, d.train.features);
  ck.label_scaler = fit_scaler(ScalerKind::MinMax, train_y);
  auto result = train(init_model(features.names.size(), hidden_sizes, activation, seed),
                      apply_scaler(ck.feature_scaler, d.train.features), apply_scaler(ck.label_scaler, train_y),
                      apply_scaler(ck.feature_scaler, d.dev.features), apply_scaler(ck.label_scaler, dev_y), cfg);
  ck.model = std::move(result.model);
  out.history = std::move(result.history);
  return out;
}

/// Predictions in normalized [-1, 1] label space for raw feature rows.
inline Matrix predict(const Checkpoint& ck, const Matrix& raw_features) {
  return invert_scaler(ck.label_scaler, forward(ck.model, apply_scaler(ck.feature_scaler, raw_features)));
}

/// CCC triple of a checkpoint on the partition's test set.
inline EvalTriple evaluate_checkpoint(const Checkpoint& ck, const Manifest& m, const FeatureTable& features,
                                      const Partition& p) {
  if (features.names.size() != ck.model.input_dim)
    throw Error("feature width " + std::to_string(features.names.size()) + " does not match the model input " +
                std::to_string(ck.model.input_dim));
  const SplitData d = assemble(p, m, features);
  return evaluate_set(predict(ck, d.test.features), d.test.labels);
}

}  // namespace deepser
