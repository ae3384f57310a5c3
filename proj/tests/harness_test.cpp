#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "deepser/harness.hpp"
#include "test_util.hpp"

namespace deepser {
namespace {

using testing::TempDir;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

double sample_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i] / n, my += y[i] / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// Small corpus + cached features shared by the pipeline tests.
class SmallCorpus : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("harness_corpus");
    corpus_ = new SyntheticCorpus(gen_synthetic_corpus(120, 4, 11, dir_->path()));
    write_feature_cache(extract_features(corpus_->manifest), *dir_ / "features.csv");
  }
  static void TearDownTestSuite() {
    delete corpus_;
    delete dir_;
  }

  static ExperimentConfig base_config() {
    ExperimentConfig cfg;
    cfg.scenario = Scenario::SD;
    cfg.corpora = {{corpus_->manifest_path, "cache:" + (*dir_ / "features.csv").string(), 24, 0}};
    cfg.hidden_sizes = {16, 8};
    cfg.train.max_epochs = 15;
    cfg.train.batch_size = 32;
    cfg.seed = 3;
    cfg.train.seed = 3;
    return cfg;
  }

  static TempDir* dir_;
  static SyntheticCorpus* corpus_;
};

TempDir* SmallCorpus::dir_ = nullptr;
SyntheticCorpus* SmallCorpus::corpus_ = nullptr;

TEST(SyntheticCorpus, RoundRobinSessions) {
  TempDir dir("synth_rr");
  const auto c = gen_synthetic_corpus(10, 5, 1, dir.path());
  std::map<int, int> per_session;
  for (const auto& r : c.manifest.records()) ++per_session[r.session];
  EXPECT_EQ(per_session, (std::map<int, int>{{1, 2}, {2, 2}, {3, 2}, {4, 2}, {5, 2}}));
  EXPECT_EQ(load_manifest(c.manifest_path).size(), 10u);
}

TEST(SyntheticCorpus, UtterancesRespectTheGeneratorRanges) {
  TempDir dir("synth_ranges");
  const auto c = gen_synthetic_corpus(20, 2, 2, dir.path());
  ASSERT_EQ(c.params.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& p = c.params[i];
    const auto& r = c.manifest.records()[i];
    EXPECT_TRUE(labels_in_range(r.labels_raw));
    const auto audio = read_wav(r.audio_path);
    EXPECT_EQ(audio.sample_rate, 16000);
    const double secs = static_cast<double>(audio.samples.size()) / 16000.0;
    EXPECT_GE(secs, 1.0 - 1e-3);
    EXPECT_LE(secs, 3.0 + 1e-3);
    double peak = 0.0;
    std::size_t zeros = 0;
    for (double s : audio.samples) {
      peak = std::max(peak, std::abs(s));
      zeros += s == 0.0;
    }
    EXPECT_LE(peak, p.amplitude + 1e-4);
    EXPECT_GE(static_cast<double>(zeros) / static_cast<double>(audio.samples.size()), p.silence - 0.01);
  }
}

TEST(SyntheticCorpus, SeedDeterminesManifestAndAudioBytes) {
  TempDir a("synth_det_a"), b("synth_det_b"), c("synth_det_c");
  const auto ca = gen_synthetic_corpus(6, 3, 9, a.path());
  const auto cb = gen_synthetic_corpus(6, 3, 9, b.path());
  const auto cc = gen_synthetic_corpus(6, 3, 10, c.path());
  EXPECT_EQ(slurp(ca.manifest_path), slurp(cb.manifest_path));
  bool any_diff = false;
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(slurp(ca.manifest.records()[i].audio_path), slurp(cb.manifest.records()[i].audio_path));
    any_diff |= slurp(ca.manifest.records()[i].audio_path) != slurp(cc.manifest.records()[i].audio_path);
  }
  EXPECT_TRUE(any_diff);
}

TEST(SyntheticCorpus, ArousalTracksAmplitude) {
  TempDir dir("synth_corr");
  const auto c = gen_synthetic_corpus(1000, 5, 12, dir.path());
  std::vector<double> amp, arousal;
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    amp.push_back(c.params[i].amplitude);
    arousal.push_back(c.manifest.records()[i].labels_raw[1]);
  }
  EXPECT_GT(sample_pearson(amp, arousal), 0.7);
}

TEST(SyntheticCorpus, RejectsInvalidCounts) {
  TempDir dir("synth_bad");
  EXPECT_THROW(gen_synthetic_corpus(3, 0, 1, dir.path()), std::invalid_argument);
  EXPECT_THROW(gen_synthetic_corpus(3, 4, 1, dir.path()), std::invalid_argument);
}

TEST(EmitReport, ThreeDecimalRowRendering) {
  TempDir dir("report");
  Report r;
  r.name = "MLP";
  r.scenario = "SD";
  r.triple = make_triple(0.335, 0.599, 0.473);
  EXPECT_EQ(format_scores(r.triple), "0.335  0.599  0.473  0.469");
  emit_report({r}, dir / "table.txt");
  const auto text = slurp(dir / "table.txt");
  EXPECT_NE(text.find("\nMLP/SD  "), std::string::npos) << text;
  EXPECT_NE(text.find("  0.335  0.599  0.473  0.469\n"), std::string::npos) << text;
  EXPECT_EQ(slurp(dir / "table.csv"), "method_scenario,ccc_v,ccc_a,ccc_d,mean\nMLP/SD,0.335,0.599,0.473,0.469\n");
}

TEST(EmitReport, AlignsRowsOfDifferentLabelWidths) {
  TempDir dir("report_align");
  Report a{"MLP", "SD", make_triple(0.1, 0.2, 0.3)};
  Report b{"MLP-CCC", "MIXED-LOSO", make_triple(0.4, 0.5, 0.6)};
  emit_report({a, b}, dir / "t.txt");
  std::istringstream in(slurp(dir / "t.txt"));
  std::string line;
  std::getline(in, line);
  const auto col = line.find("CCC_V");
  int rows = 0;
  for (; std::getline(in, line); ++rows) EXPECT_EQ(line.find("0."), col) << line;
  EXPECT_EQ(rows, 2);
}

TEST(EmitReport, ErrorPaths) {
  TempDir dir("report_err");
  EXPECT_THROW(emit_report({}, dir / "t.txt"), Error);
  Report bad{"MLP", "SD", {0.3, 0.6, 0.5, 0.9}};
  EXPECT_THROW(emit_report({bad}, dir / "t.txt"), Error);
  Report ok{"MLP", "SD", make_triple(0.3, 0.6, 0.5)};
  EXPECT_THROW(emit_report({ok}, dir / "missing_dir" / "t.txt"), Error);
}

TEST(ExperimentConfigParse, ReadsKeysAndResolvesPaths) {
  const auto cfg = parse_experiment_config(
      "# comment\n"
      "name = MLP-CCC\n"
      "scenario = mixed-loso\n"
      "manifest = a/m.csv, /abs/b.csv\n"
      "features = native, cache:feat.csv\n"
      "holdout_session = 5, 6\n"
      "loss = ccc\n"
      "alpha = 0.5\n"
      "beta = 0.25\n"
      "hidden_sizes = 32,16\n"
      "activation = tanh\n"
      "per_corpus_norm = true\n"
      "seed = 7\n"
      "out_dir = out\n",
      "/base");
  EXPECT_EQ(cfg.name, "MLP-CCC");
  EXPECT_EQ(cfg.scenario, Scenario::MixedLOSO);
  ASSERT_EQ(cfg.corpora.size(), 2u);
  EXPECT_EQ(cfg.corpora[0].manifest, std::filesystem::path("/base/a/m.csv"));
  EXPECT_EQ(cfg.corpora[1].manifest, std::filesystem::path("/abs/b.csv"));
  EXPECT_EQ(cfg.corpora[1].features, "cache:/base/feat.csv");
  EXPECT_EQ(cfg.corpora[1].holdout_session, 6);
  EXPECT_EQ(cfg.train.loss, LossKind::CccMultitask);
  EXPECT_DOUBLE_EQ(cfg.train.weights.dominance(), 0.25);
  EXPECT_EQ(cfg.hidden_sizes, (std::vector<std::size_t>{32, 16}));
  EXPECT_EQ(cfg.activation, Activation::Tanh);
  EXPECT_TRUE(cfg.per_corpus_norm);
  EXPECT_EQ(cfg.train.seed, 7u);
  EXPECT_EQ(cfg.out_dir, std::filesystem::path("/base/out"));
}

TEST(ExperimentConfigParse, RejectsBadInput) {
  EXPECT_THROW(parse_experiment_config("scenario = sd\ntest_count = 5\n"), Error);            // no manifest
  EXPECT_THROW(parse_experiment_config("manifest = m.csv\nscenario = loso\n"), Error);        // no holdout
  EXPECT_THROW(parse_experiment_config("manifest = m.csv\ntest_count = 5\nbogus = 1\n"), Error);
  EXPECT_THROW(parse_experiment_config("manifest = m.csv\ntest_count = 5\ntest_count = 6\n"), Error);
  EXPECT_THROW(parse_experiment_config("manifest = m.csv, n.csv\nscenario = mixed-sd\ntest_count = 5\n"), Error);
  EXPECT_THROW(parse_experiment_config("manifest = m.csv\ntest_count = five\n"), Error);
  EXPECT_THROW(parse_experiment_config("manifest = m.csv\ntest_count = 5\nalpha = 0.8\nbeta = 0.5\n"),
               std::invalid_argument);
  EXPECT_THROW(parse_experiment_config("manifest = m.csv\ntest_count = 5\njunk line\n"), Error);
}

TEST(ExperimentConfigParse, FingerprintIgnoresOutputDirAndWorkers) {
  const std::string body = "manifest = /m.csv\ntest_count = 5\nseed = 1\n";
  const auto a = parse_experiment_config(body + "out_dir = /x\nworkers = 1\n");
  const auto b = parse_experiment_config(body + "out_dir = /y\nworkers = 4\n");
  const auto c = parse_experiment_config("manifest = /m.csv\ntest_count = 5\nseed = 2\n");
  EXPECT_EQ(fingerprint(a.canonical()), fingerprint(b.canonical()));
  EXPECT_NE(fingerprint(a.canonical()), fingerprint(c.canonical()));
  EXPECT_EQ(fingerprint(a.canonical()).size(), 16u);
  // FNV-1a reference vectors.
  EXPECT_EQ(fingerprint(""), "cbf29ce484222325");
  EXPECT_EQ(fingerprint("a"), "af63dc4c8601ec8c");
}

TEST_F(SmallCorpus, ScalersAreFittedOnTrainRowsOnly) {
  ExperimentArtifacts art;
  const auto cfg = base_config();
  run_experiment(cfg, &art);
  const auto& d = art.data;
  EXPECT_EQ(d.test.size(), 24u);
  EXPECT_EQ(d.train.size() + d.dev.size() + d.test.size(), 120u);
  ASSERT_EQ(art.feature_scalers.size(), 1u);
  const auto& fs = art.feature_scalers[0];
  EXPECT_EQ(fs.fitted_rows, d.train.size());
  EXPECT_EQ(art.label_scaler.fitted_rows, d.train.size());
  for (Eigen::Index c = 0; c < d.train.features.cols(); ++c) {
    double mean = 0.0;
    for (Eigen::Index r = 0; r < d.train.features.rows(); ++r) mean += d.train.features(r, c);
    mean /= static_cast<double>(d.train.features.rows());
    EXPECT_NEAR(fs.offset[c], mean, 1e-12 * std::max(1.0, std::abs(mean)));
  }
  for (int c = 0; c < 3; ++c) {
    double lo = 1e9;
    for (Eigen::Index r = 0; r < d.train.labels.rows(); ++r) lo = std::min(lo, (d.train.labels(r, c) - 3.0) / 2.0);
    EXPECT_DOUBLE_EQ(art.label_scaler.offset[c], lo);
  }
}

TEST_F(SmallCorpus, RunWritesReportsAndIsDeterministic) {
  TempDir out("harness_run");
  auto cfg = base_config();
  cfg.out_dir = out / "a";
  const Report a = run_experiment(cfg);
  cfg.out_dir = out / "b";
  cfg.workers = 1;
  const Report b = run_experiment(cfg);
  EXPECT_EQ(report_body(a), report_body(b));
  EXPECT_EQ(a.fingerprint, b.fingerprint);
  EXPECT_NEAR(a.triple.mean, (a.triple.ccc_v + a.triple.ccc_a + a.triple.ccc_d) / 3.0, 1e-15);
  EXPECT_LE(a.epochs, 15u);
  for (const char* f : {"report.txt", "report.csv", "report.json", "model.ckpt"})
    EXPECT_TRUE(std::filesystem::exists(out / "a" / f)) << f;
  EXPECT_EQ(slurp(out / "a" / "report.csv"), slurp(out / "b" / "report.csv"));
  EXPECT_EQ(slurp(out / "a" / "model.ckpt"), slurp(out / "b" / "model.ckpt"));
  const auto json = nlohmann::json::parse(slurp(out / "a" / "report.json"));
  EXPECT_EQ(json["fingerprint"], a.fingerprint);
  EXPECT_TRUE(json.contains("wall_seconds"));
}

TEST_F(SmallCorpus, CheckpointReproducesPipelinePredictions) {
  TempDir out("harness_ckpt");
  auto cfg = base_config();
  cfg.out_dir = out.path();
  ExperimentArtifacts art;
  run_experiment(cfg, &art);
  const auto ck = load_checkpoint(out / "model.ckpt");
  const Matrix again = predict(ck, art.data.test.features);
  EXPECT_LT((again - art.test_predictions).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(SmallCorpus, LosoTestHoldsOnlyTheHeldOutSession) {
  auto cfg = base_config();
  cfg.scenario = Scenario::LOSO;
  cfg.corpora[0].holdout_session = 4;
  ExperimentArtifacts art;
  run_experiment(cfg, &art);
  EXPECT_EQ(art.data.test.size(), 30u);
  for (const auto& id : art.data.test.ids) EXPECT_EQ(corpus_->manifest.at(id).session, 4);
  for (const auto* set : {&art.data.train, &art.data.dev})
    for (const auto& id : set->ids) EXPECT_NE(corpus_->manifest.at(id).session, 4);
}

TEST_F(SmallCorpus, MixedScenarioCombinesCorpora) {
  TempDir other("harness_other");
  const auto second = gen_synthetic_corpus(60, 3, 21, other.path(), "other");
  write_feature_cache(extract_features(second.manifest), other / "features.csv");
  auto records = second.manifest.records();
  for (auto& r : records) r.corpus = Corpus::Improv;
  write_manifest(Manifest(records), other / "improv.csv", other.path());
  auto cfg = base_config();
  cfg.scenario = Scenario::MixedSD;
  cfg.corpora.push_back({other / "improv.csv", "cache:" + (other / "features.csv").string(), 12, 0});
  ExperimentArtifacts art;
  run_experiment(cfg, &art);
  EXPECT_EQ(art.data.test.size(), 36u);
  EXPECT_EQ(art.data.train.size() + art.data.dev.size() + art.data.test.size(), 180u);
  EXPECT_EQ(art.feature_scalers.size(), 1u);

  cfg.per_corpus_norm = true;
  run_experiment(cfg, &art);
  ASSERT_EQ(art.feature_scalers.size(), 2u);
  EXPECT_EQ(art.feature_scalers[0].fitted_rows + art.feature_scalers[1].fitted_rows, art.data.train.size());
}

TEST_F(SmallCorpus, StageErrorsNameTheStageAndLeaveNoOutputs) {
  TempDir out("harness_fail");
  auto cfg = base_config();
  cfg.out_dir = out / "run";
  cfg.corpora[0].features = "cache:" + (out / "nope.csv").string();
  try {
    run_experiment(cfg);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("stage 'features'"), std::string::npos) << e.what();
  }
  EXPECT_FALSE(std::filesystem::exists(out / "run" / "report.txt"));

  // Output directory blocked by a regular file: nothing is left behind.
  std::ofstream(out / "blocked") << "x";
  cfg = base_config();
  cfg.out_dir = out / "blocked";
  try {
    run_experiment(cfg);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("stage 'write outputs'"), std::string::npos) << e.what();
  }
  EXPECT_EQ(slurp(out / "blocked"), "x");
}

TEST_F(SmallCorpus, IngestedLldTableMatchesNativeFeatures) {
  TempDir out("harness_ingest");
  const LldConfig lld;
  std::ofstream table(out / "llds.csv");
  table << "utterance_id";
  for (const auto& n : descriptor_names(lld)) table << ',' << n;
  table << '\n';
  const auto& records = corpus_->manifest.records();
  for (std::size_t i = 0; i < 5; ++i) {
    const auto m = extract_llds(read_wav(records[i].audio_path), lld, records[i].utterance_id);
    const std::size_t cols = m.descriptor_names.size();
    for (std::size_t r = 0; r < m.values.size() / cols; ++r) {
      table << records[i].utterance_id;
      for (std::size_t c = 0; c < cols; ++c) table << ',' << csv::format_double(m.values[r * cols + c]);
      table << '\n';
    }
  }
  table.close();
  const Manifest five(std::vector<UtteranceRecord>(records.begin(), records.begin() + 5));
  const auto ingested = features_from_lld_table(five, out / "llds.csv");
  const auto native = extract_features(five);
  ASSERT_EQ(ingested.names, native.names);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(ingested.rows[i].utterance_id, native.rows[i].utterance_id);
    for (std::size_t c = 0; c < native.names.size(); ++c)
      EXPECT_NEAR(ingested.rows[i].values[c], native.rows[i].values[c], 1e-12 * std::max(1.0, std::abs(native.rows[i].values[c])));
  }
}

}  // namespace
}  // namespace deepser
