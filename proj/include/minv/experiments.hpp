#pragma once

// Experiment orchestration: JSON configs with dotted-path overrides, derived
// seeds, attack fan-out, and deterministic report emission for the three
// experiment families (alignment measurement, the alignment/vulnerability
// hypothesis sweep, and smoothed-attack evaluation).
//
// Every artifact embeds a 64-bit FNV-1a hash of the canonical config together
// with an artifact version.  The hash covers the numeric experiment identity
// only: output_dir, jobs and save_runs change where/how results land, never
// their values, so they are excluded.  All emitted numbers are pure functions
// of (config, seeds); the one exception, wall-clock runtime ratios, goes to a
// dedicated runtime file that determinism checks must skip.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "minv/dataset.hpp"
#include "minv/inversion.hpp"
#include "minv/metrics.hpp"
#include "minv/models.hpp"
#include "minv/training.hpp"

namespace minv {

struct ExperimentConfig {
  std::string kind = "measure-alignment";  // measure-alignment | hypothesis | alignmi-eval
  std::uint64_t seed = 1;                  // global seed (single-model commands)
  std::vector<std::uint64_t> benchmark_seeds = {1, 2, 3, 4, 5};
  std::string output_dir = "out";

  DataConfig data;
  std::size_t target_hidden = 24;
  std::size_t eval_hidden = 40;
  double eval_floor = 0.9;
  std::size_t eval_epochs = 40;
  TrainConfig train;  // beta and seed are filled in per variant/per run

  std::vector<double> betas = {0.0, 0.1, 0.5, 1.0, 2.0};
  // Aligned variants start from the vanilla checkpoint and continue training
  // with the combined objective for finetune_epochs at finetune_lr; beta = 0
  // reduces to the plain objective, so that variant is trained from scratch
  // and reproduces the vanilla row exactly.
  std::size_t finetune_epochs = 2;
  double finetune_lr = 0.03;
  ProjectorSource projector_source = ProjectorSource::kOracle;
  std::size_t decoder_bottleneck = 4;
  DecoderConfig decoder;

  InversionConfig inversion;  // seed is filled in per attack run
  std::size_t runs_per_class = 4;

  std::size_t jobs = 1;
  bool save_runs = false;
};

// Tuned defaults for the three experiment kinds on the (k=4, d=64) oracle.
// measure-alignment and hypothesis use a lightly trained target whose attack
// gradients sit near the random-direction baseline; alignmi-eval uses a
// converged target where gradient smoothing has measurable effect.
ExperimentConfig default_experiment_config(const std::string& kind);

// Canonical JSON (every field present, object keys sorted by nlohmann).
nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
// Strict parse: unknown keys and malformed values raise ConfigError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& doc);

// Applies "a.b.c=value" onto the JSON document; the value is parsed as JSON
// when possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Reads the config file, applies overrides in order, and parses strictly.
ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides = {});

std::string fnv1a_hex(std::string_view bytes);
// Hash of the canonical config with the execution-only fields zeroed out.
std::string config_hash(const ExperimentConfig& cfg);

// Resolves output_dir against the MINV_OUTPUT_ROOT environment variable when
// the configured path is relative.
std::string resolve_output_dir(const ExperimentConfig& cfg);

// Independent sub-seeds for one benchmark repetition.
struct SeedPlan {
  std::uint64_t data = 0;
  std::uint64_t target_init = 0;
  std::uint64_t train = 0;
  std::uint64_t eval_init = 0;
  std::uint64_t eval_train = 0;
  std::uint64_t attack = 0;
};
SeedPlan seed_plan(std::uint64_t global_seed, std::uint64_t benchmark_seed);

// ---- pipeline building blocks ------------------------------------------

Generator experiment_oracle(const ExperimentConfig& cfg);
DatasetPair experiment_data(const ExperimentConfig& cfg, const Generator& oracle,
                            std::uint64_t benchmark_seed);

// Tangent projectors for the private set from the configured source (the
// oracle itself, or a decoder trained on the auxiliary set).
ProjectorCache experiment_projectors(const ExperimentConfig& cfg, const Generator& oracle,
                                     const DatasetPair& data);

// Trains one classifier variant. beta = 0 trains from scratch with the plain
// objective; beta > 0 fine-tunes the vanilla checkpoint (trained internally
// when the caller does not pass one) with the combined objective.
TrainResult train_variant(const ExperimentConfig& cfg, const DatasetPair& data,
                          const ProjectorCache& cache, std::uint64_t benchmark_seed, double beta,
                          const TrainResult* vanilla = nullptr);

// Held-out scoring model: different width and seeds, gated on its accuracy
// over the private test split.
EvalModel train_experiment_eval(const ExperimentConfig& cfg, const DatasetPair& data,
                                std::uint64_t benchmark_seed);

// runs_per_class attacks against every private class, fanned out over
// cfg.jobs threads; run order (and hence every aggregate) is deterministic.
std::vector<InversionRun> attack_classifier(const ExperimentConfig& cfg, const Classifier& target,
                                            const Generator& gen, std::uint64_t benchmark_seed,
                                            const InversionConfig& inv);

std::vector<Recon> recons_of(const std::vector<InversionRun>& runs);

// ---- experiment families ------------------------------------------------

struct MeasureReport {
  std::string hash;
  double baseline = 0.0;  // sqrt(k/d)
  AsSummary distribution;
  std::vector<DynamicsPoint> dynamics;
  std::size_t n_runs = 0;
  std::vector<InversionRun> runs;  // kept for optional per-run emission
};
// Attacks an already trained target.
MeasureReport measure_alignment_with(const ExperimentConfig& cfg, const Classifier& target,
                                     const Generator& oracle);
// Self-contained: trains the vanilla target for cfg.seed, then measures.
MeasureReport run_measure_alignment(const ExperimentConfig& cfg);
void write_measure_report(const ExperimentConfig& cfg, const MeasureReport& report);

struct ModelRow {
  std::uint64_t seed = 0;
  std::string tag;  // "vanilla" or "beta-<x>"
  double beta = 0.0;
  double as_tr = 0.0;
  double test_acc = 0.0;
  double acc1 = 0.0;
  double acc5 = 0.0;
  double knn = 0.0;
  double as_inv_median = 0.0;
  double as_inv_q25 = 0.0;
  double as_inv_q75 = 0.0;
  std::size_t as_inv_count = 0;
};
struct HypothesisReport {
  std::string hash;
  std::vector<ModelRow> rows;  // grouped by seed, ascending as_tr within
  std::vector<DynamicsPoint> vanilla_dynamics;  // pooled over seeds
  double vanilla_as_inv_median = 0.0;           // pooled over seeds
};
HypothesisReport run_hypothesis(const ExperimentConfig& cfg);
void write_hypothesis_report(const ExperimentConfig& cfg, const HypothesisReport& report);

struct MethodRow {
  std::uint64_t seed = 0;
  std::string method;  // none | paa | taa
  double acc1 = 0.0;
  double acc5 = 0.0;
  double knn = 0.0;
  double final_as_median = 0.0;  // median over runs of the last tracked score
};
struct AlignmiReport {
  std::string hash;
  std::vector<MethodRow> rows;
  double paa_runtime_ratio = 0.0;  // median of 3 timed runs vs. unsmoothed
  double taa_runtime_ratio = 0.0;
};
AlignmiReport run_alignmi(const ExperimentConfig& cfg);
// Timing is machine-dependent, so the ratios go to runtime_ratio.csv and all
// other files stay bitwise reproducible.
void write_alignmi_report(const ExperimentConfig& cfg, const AlignmiReport& report);

// Prints a one-screen text rendering of any summary JSONs under the output
// dir; throws MissingArtifactError when none exist.
void render_reports(const ExperimentConfig& cfg, std::ostream& out);

// CLI exit-code policy: 0 ok, 2 config/parse, 3 numeric, 4 missing artifact.
int exit_code_for(const std::exception& e);

}  // namespace minv
