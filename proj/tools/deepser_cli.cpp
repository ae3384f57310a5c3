// Command-line front end: synth, extract, split, train, evaluate, run.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deepser/deepser.hpp"

namespace fs = std::filesystem;
using namespace deepser;

namespace {

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  for (auto part : csv::split(text, ',')) {
    const auto v = csv::parse_long(part);
    if (!v || *v <= 0) throw Error("bad layer size '" + std::string(part) + "'");
    out.push_back(static_cast<std::size_t>(*v));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dimensional speech emotion recognition with HSF features and a deep MLP"};
  app.require_subcommand(1);

  // synth
  std::size_t synth_n = 1000, synth_sessions = 5;
  std::uint64_t synth_seed = 0;
  std::string synth_out, synth_prefix = "synth";
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labelled corpus (wav files + manifest.csv)");
  synth->add_option("--n", synth_n, "Number of utterances")->capture_default_str();
  synth->add_option("--sessions", synth_sessions, "Number of sessions (round-robin)")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Random seed")->capture_default_str();
  synth->add_option("--prefix", synth_prefix, "Utterance id prefix")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();

  // extract
  std::string ex_manifest, ex_out, ex_llds = "native";
  double ex_factor = 0.3;
  std::size_t ex_workers = default_workers();
  auto* extract = app.add_subcommand("extract", "Compute per-utterance HSF feature vectors");
  extract->add_option("--manifest", ex_manifest, "Manifest CSV")->required()->check(CLI::ExistingFile);
  extract->add_option("--out", ex_out, "Feature cache CSV")->required();
  extract->add_option("--silence-factor", ex_factor, "Silence threshold factor")->capture_default_str();
  extract->add_option("--llds", ex_llds, "native, or ingest:PATH for an external frame-level LLD table")
      ->capture_default_str();
  extract->add_option("--workers", ex_workers, "Extraction threads");

  // split
  std::string sp_manifest, sp_mode, sp_out;
  std::size_t sp_test = 0;
  int sp_holdout = 0;
  double sp_dev = 0.2;
  std::uint64_t sp_seed = 0;
  auto* split = app.add_subcommand("split", "Partition a manifest into train/dev/test");
  split->add_option("--manifest", sp_manifest, "Manifest CSV")->required()->check(CLI::ExistingFile);
  split->add_option("--mode", sp_mode, "sd or loso")->required()->check(CLI::IsMember({"sd", "loso"}));
  auto* test_opt = split->add_option("--test-count", sp_test, "Test utterances (sd)");
  auto* hold_opt = split->add_option("--holdout-session", sp_holdout, "Held-out session (loso)");
  test_opt->excludes(hold_opt);
  split->add_option("--dev-frac", sp_dev, "Development fraction of the non-test rows")->capture_default_str();
  split->add_option("--seed", sp_seed, "Random seed")->required();
  split->add_option("--out", sp_out, "Split JSON")->required();

  // train
  std::string tr_manifest, tr_features, tr_split, tr_out, tr_loss = "mse", tr_hidden = "256,128,64,32,16",
                                                             tr_activation = "relu";
  TrainConfig tr_cfg;
  auto* train_cmd = app.add_subcommand("train", "Train the MLP and write a checkpoint");
  train_cmd->add_option("--manifest", tr_manifest, "Manifest CSV (labels)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--features", tr_features, "Feature cache CSV")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--split", tr_split, "Split JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--loss", tr_loss, "mse or ccc")->check(CLI::IsMember({"mse", "ccc"}))->capture_default_str();
  train_cmd->add_option("--alpha", tr_cfg.weights.alpha, "Valence weight (ccc loss)");
  train_cmd->add_option("--beta", tr_cfg.weights.beta, "Arousal weight (ccc loss)");
  train_cmd->add_option("--lr", tr_cfg.learning_rate, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--batch", tr_cfg.batch_size, "Minibatch size")->capture_default_str();
  train_cmd->add_option("--epochs", tr_cfg.max_epochs, "Maximum epochs")->capture_default_str();
  train_cmd->add_option("--patience", tr_cfg.patience, "Early-stopping patience")->capture_default_str();
  train_cmd->add_option("--hidden", tr_hidden, "Hidden layer sizes")->capture_default_str();
  train_cmd->add_option("--activation", tr_activation, "relu or tanh")->check(CLI::IsMember({"relu", "tanh"}))
      ->capture_default_str();
  train_cmd->add_option("--seed", tr_cfg.seed, "Random seed")->required();
  train_cmd->add_option("--out", tr_out, "Checkpoint path")->required();

  // evaluate
  std::string ev_model, ev_manifest, ev_features, ev_split, ev_out, ev_name = "MLP";
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a checkpoint on a split's test set");
  evaluate_cmd->add_option("--model", ev_model, "Checkpoint")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--manifest", ev_manifest, "Manifest CSV (labels)")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--features", ev_features, "Feature cache CSV")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--split", ev_split, "Split JSON")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--name", ev_name, "Row label in the report")->capture_default_str();
  evaluate_cmd->add_option("--out", ev_out, "Report table (a .csv twin is written alongside)")->required();

  // run
  std::string run_config;
  auto* run = app.add_subcommand("run", "Run a full experiment from a key = value config file");
  run->add_option("--config", run_config, "Experiment config")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const auto corpus = gen_synthetic_corpus(synth_n, synth_sessions, synth_seed, synth_out, synth_prefix);
      std::cout << "wrote " << corpus.manifest.size() << " utterances to " << corpus.manifest_path.string() << '\n';
    } else if (*extract) {
      const Manifest m = load_manifest(ex_manifest);
      const SilenceConfig silence{ex_factor, 25.0, 10.0};
      FeatureTable table;
      if (ex_llds == "native") table = extract_features(m, LldConfig{}, silence, ex_workers);
      else if (ex_llds.rfind("ingest:", 0) == 0) table = features_from_lld_table(m, ex_llds.substr(7), silence, ex_workers);
      else throw Error("--llds must be native or ingest:PATH");
      write_feature_cache(table, ex_out);
      std::cout << "wrote " << table.rows.size() << " x " << table.names.size() << " features to " << ex_out << '\n';
    } else if (*split) {
      const Manifest m = load_manifest(sp_manifest);
      Partition p;
      if (sp_mode == "sd") {
        if (sp_test == 0) throw Error("--mode sd needs --test-count");
        p = split_sd(m, sp_test, sp_dev, sp_seed);
      } else {
        if (sp_holdout == 0) throw Error("--mode loso needs --holdout-session");
        p = split_loso(m, sp_holdout, sp_dev, sp_seed);
      }
      save_partition(p, sp_out);
      std::cout << "train " << p.train.size() << "  dev " << p.dev.size() << "  test " << p.test.size() << '\n';
    } else if (*train_cmd) {
      tr_cfg.loss = parse_loss_kind(tr_loss);
      const auto result = train_checkpoint(load_manifest(tr_manifest), read_feature_cache(tr_features),
                                           load_partition(tr_split), tr_cfg, parse_sizes(tr_hidden),
                                           parse_activation(tr_activation), tr_cfg.seed);
      save_checkpoint(result.checkpoint, tr_out);
      const auto& h = result.history;
      std::cout << "epochs " << h.epochs() << "  best epoch " << h.best_epoch + 1 << "  best dev loss "
                << h.best_dev_loss() << (h.stopped_early ? "  (early stop)" : "") << '\n';
    } else if (*evaluate_cmd) {
      const auto triple = evaluate_checkpoint(load_checkpoint(ev_model), load_manifest(ev_manifest),
                                              read_feature_cache(ev_features), load_partition(ev_split));
      Report r;
      r.name = ev_name;
      r.scenario = "test";
      r.triple = triple;
      emit_report({r}, ev_out);
      std::cout << ev_name << "  " << format_scores(triple) << '\n';
    } else if (*run) {
      const auto cfg = load_experiment_config(run_config);
      const Report r = run_experiment(cfg);
      std::cout << r.name << '/' << r.scenario << "  " << format_scores(r.triple) << "  epochs " << r.epochs << "  "
                << r.wall_seconds << " s  [" << r.fingerprint << "]\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
