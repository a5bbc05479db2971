// Command-line entry point: composes data generation, training, attacks and
// scoring into reproducible experiments driven by a JSON config.
//
// Exit codes: 0 success, 2 configuration/parse error, 3 numeric failure,
// 4 missing artifact.  MINV_OUTPUT_ROOT (when set) roots relative output
// directories.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "minv/dataset.hpp"
#include "minv/errors.hpp"
#include "minv/experiments.hpp"
#include "minv/training.hpp"

namespace fs = std::filesystem;
using namespace minv;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output_override;
  std::size_t jobs_override = 0;
  bool save_runs = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
  auto* opt = cmd->add_option("--config", args.config_path, "experiment config (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--set", args.overrides,
                  "override a config key by dotted path, e.g. --set inversion.steps=80");
  cmd->add_option("--output", args.output_override, "override the config's output_dir");
  cmd->add_option("--jobs", args.jobs_override, "attack fan-out threads (default from config)");
  cmd->add_flag("--save-runs", args.save_runs, "also write per-run JSON trajectories");
}

ExperimentConfig load_cfg(const CommonArgs& args, const char* expected_kind = nullptr) {
  ExperimentConfig cfg = load_experiment_config(args.config_path, args.overrides);
  if (!args.output_override.empty()) cfg.output_dir = args.output_override;
  if (args.jobs_override > 0) cfg.jobs = args.jobs_override;
  if (args.save_runs) cfg.save_runs = true;
  if (expected_kind != nullptr && cfg.kind != expected_kind) {
    throw ConfigError("config kind is '" + cfg.kind + "' but the subcommand expects '" +
                      expected_kind + "'");
  }
  return cfg;
}

fs::path out_dir(const ExperimentConfig& cfg) {
  const fs::path dir(resolve_output_dir(cfg));
  fs::create_directories(dir);
  return dir;
}

void write_summary(const fs::path& path, nlohmann::json j, const std::string& hash) {
  j["config_hash"] = hash;
  j["version"] = kArtifactVersion;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw MissingArtifactError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
}

int cmd_gen_data(const CommonArgs& args) {
  const ExperimentConfig cfg = load_cfg(args);
  const Generator oracle = experiment_oracle(cfg);
  const DatasetPair data = experiment_data(cfg, oracle, cfg.seed);
  const fs::path dir = out_dir(cfg);
  fs::create_directories(dir / "dataset_private");
  fs::create_directories(dir / "dataset_aux");
  save_dataset(data.priv, (dir / "dataset_private").string());
  save_dataset(data.aux, (dir / "dataset_aux").string());
  write_summary(dir / "gen_data_summary.json",
                {{"kind", "gen-data"},
                 {"private_samples", data.priv.size()},
                 {"aux_samples", data.aux.size()},
                 {"private_mean_separation", class_mean_separation(data.priv)}},
                config_hash(cfg));
  std::cout << "wrote datasets to " << dir << "\n";
  return 0;
}

int cmd_train_target(const CommonArgs& args) {
  const ExperimentConfig cfg = load_cfg(args);
  const Generator oracle = experiment_oracle(cfg);
  const DatasetPair data = experiment_data(cfg, oracle, cfg.seed);
  const ProjectorCache cache = experiment_projectors(cfg, oracle, data);
  const TrainResult res = train_variant(cfg, data, cache, cfg.seed, 0.0);
  const AlignmentMeasurement as_tr = measure_AS_tr(res.model, data.priv, cache);
  const fs::path dir = out_dir(cfg);
  save_mlp(res.model.net, (dir / "target.json").string());
  write_summary(dir / "target_summary.json",
                {{"kind", "train-target"},
                 {"epochs", res.history.size()},
                 {"train_loss", res.history.back().train_loss},
                 {"test_acc", res.history.back().test_acc},
                 {"as_tr", as_tr.mean}},
                config_hash(cfg));
  std::cout << "target test accuracy " << res.history.back().test_acc << ", AS_tr "
            << as_tr.mean << "\n";
  return 0;
}

int cmd_train_decoder(const CommonArgs& args) {
  const ExperimentConfig cfg = load_cfg(args);
  const Generator oracle = experiment_oracle(cfg);
  const DatasetPair data = experiment_data(cfg, oracle, cfg.seed);
  DecoderConfig dc = cfg.decoder;
  dc.train.seed = Rng::mix(data.aux.seed, 0xdec0);
  const DecoderResult res = train_decoder(data.aux, cfg.decoder_bottleneck, dc);
  const fs::path dir = out_dir(cfg);
  save_mlp(res.decoder.net, (dir / "decoder.json").string());
  save_mlp(res.encoder, (dir / "encoder.json").string());
  write_summary(dir / "decoder_summary.json",
                {{"kind", "train-decoder"},
                 {"bottleneck", cfg.decoder_bottleneck},
                 {"heldout_mse", res.heldout_mse}},
                config_hash(cfg));
  std::cout << "decoder held-out mse " << res.heldout_mse << "\n";
  return 0;
}

int cmd_train_aligned(const CommonArgs& args, double beta) {
  const ExperimentConfig cfg = load_cfg(args);
  const Generator oracle = experiment_oracle(cfg);
  const DatasetPair data = experiment_data(cfg, oracle, cfg.seed);
  const ProjectorCache cache = experiment_projectors(cfg, oracle, data);
  const TrainResult res = train_variant(cfg, data, cache, cfg.seed, beta);
  const AlignmentMeasurement as_tr = measure_AS_tr(res.model, data.priv, cache);
  const fs::path dir = out_dir(cfg);
  char tag[32];
  std::snprintf(tag, sizeof(tag), "%g", beta);
  save_mlp(res.model.net, (dir / ("aligned_beta" + std::string(tag) + ".json")).string());
  write_summary(dir / ("aligned_beta" + std::string(tag) + "_summary.json"),
                {{"kind", "train-aligned"},
                 {"beta", beta},
                 {"test_acc", res.history.back().test_acc},
                 {"as_tr", as_tr.mean}},
                config_hash(cfg));
  std::cout << "aligned (beta " << beta << ") test accuracy " << res.history.back().test_acc
            << ", AS_tr " << as_tr.mean << "\n";
  return 0;
}

int cmd_measure_alignment(const CommonArgs& args, bool train_from_scratch) {
  const ExperimentConfig cfg = load_cfg(args, "measure-alignment");
  const Generator oracle = experiment_oracle(cfg);
  const fs::path dir = out_dir(cfg);
  const fs::path checkpoint = dir / "target.json";

  Classifier target;
  if (fs::exists(checkpoint)) {
    target = Classifier{load_mlp(checkpoint.string())};
    if (target.input_dim() != cfg.data.oracle.ambient_dim ||
        target.num_classes() != cfg.data.private_classes) {
      throw ConfigError("checkpoint " + checkpoint.string() + " does not fit the config");
    }
  } else if (train_from_scratch) {
    const DatasetPair data = experiment_data(cfg, oracle, cfg.seed);
    const ProjectorCache cache = experiment_projectors(cfg, oracle, data);
    target = train_variant(cfg, data, cache, cfg.seed, 0.0).model;
    save_mlp(target.net, checkpoint.string());
  } else {
    throw MissingArtifactError("no target checkpoint at " + checkpoint.string() +
                               " (pass --train-from-scratch to train one)");
  }

  const MeasureReport report = measure_alignment_with(cfg, target, oracle);
  write_measure_report(cfg, report);
  std::cout << "AS_inv median " << report.distribution.median << " over " << report.n_runs
            << " runs (baseline " << report.baseline << ")\n";
  return 0;
}

int cmd_hypothesis(const CommonArgs& args) {
  const ExperimentConfig cfg = load_cfg(args, "hypothesis");
  const HypothesisReport report = run_hypothesis(cfg);
  write_hypothesis_report(cfg, report);
  std::cout << "hypothesis sweep: " << report.rows.size() << " model rows, vanilla AS_inv median "
            << report.vanilla_as_inv_median << "\n";
  return 0;
}

int cmd_alignmi(const CommonArgs& args) {
  const ExperimentConfig cfg = load_cfg(args, "alignmi-eval");
  const AlignmiReport report = run_alignmi(cfg);
  write_alignmi_report(cfg, report);
  std::cout << "smoothed-attack comparison: " << report.rows.size()
            << " rows, runtime ratios paa " << report.paa_runtime_ratio << " / taa "
            << report.taa_runtime_ratio << "\n";
  return 0;
}

int cmd_report(const CommonArgs& args) {
  const ExperimentConfig cfg = load_cfg(args);
  render_reports(cfg, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale model-inversion geometry experiments"};
  app.require_subcommand(1);

  CommonArgs gen_args, target_args, decoder_args, aligned_args, measure_args, hypo_args,
      alignmi_args, report_args;
  double beta = 1.0;
  bool train_from_scratch = false;

  add_common(app.add_subcommand("gen-data", "materialize the private/auxiliary datasets"),
             gen_args);
  add_common(app.add_subcommand("train-target", "train the vanilla target classifier"),
             target_args);
  add_common(app.add_subcommand("train-decoder", "train the auxiliary-set autoencoder"),
             decoder_args);
  auto* aligned = app.add_subcommand("train-aligned", "train an alignment-regularized classifier");
  add_common(aligned, aligned_args);
  aligned->add_option("--beta", beta, "alignment penalty weight")->capture_default_str();
  auto* measure =
      app.add_subcommand("measure-alignment", "attack a trained target and record AS_inv");
  add_common(measure, measure_args);
  measure->add_flag("--train-from-scratch", train_from_scratch,
                    "train the target when no checkpoint exists");
  add_common(app.add_subcommand("hypothesis", "vanilla-vs-aligned sweep with attacks"), hypo_args);
  add_common(app.add_subcommand("alignmi-eval", "unsmoothed vs PAA/TAA attack comparison"),
             alignmi_args);
  add_common(app.add_subcommand("report", "print a text rendering of existing summaries"),
             report_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);  // 0 for --help, non-zero otherwise
  }

  try {
    if (app.got_subcommand("gen-data")) return cmd_gen_data(gen_args);
    if (app.got_subcommand("train-target")) return cmd_train_target(target_args);
    if (app.got_subcommand("train-decoder")) return cmd_train_decoder(decoder_args);
    if (app.got_subcommand("train-aligned")) return cmd_train_aligned(aligned_args, beta);
    if (app.got_subcommand("measure-alignment")) {
      return cmd_measure_alignment(measure_args, train_from_scratch);
    }
    if (app.got_subcommand("hypothesis")) return cmd_hypothesis(hypo_args);
    if (app.got_subcommand("alignmi-eval")) return cmd_alignmi(alignmi_args);
    if (app.got_subcommand("report")) return cmd_report(report_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 1;
}
