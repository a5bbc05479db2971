#include "minv/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "minv/errors.hpp"
#include "minv/projector.hpp"
#include "minv/rng.hpp"

namespace minv {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kDataTag = 0xd47a;
constexpr std::uint64_t kTargetInitTag = 0x7a59;
constexpr std::uint64_t kTrainTag = 0x7e41;
constexpr std::uint64_t kEvalInitTag = 0xe5a1;
constexpr std::uint64_t kEvalTrainTag = 0xe5a2;
constexpr std::uint64_t kAttackTag = 0xa77c;
constexpr std::uint64_t kDecoderTag = 0xdec0;
constexpr std::uint64_t kFinetuneTag = 0xf17e;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

double median_of(std::vector<double> v) {
  if (v.empty()) throw DegenerateError("median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Re-throws library errors with a stage prefix while keeping their category
// (and hence the CLI exit code) intact.
template <typename Fn>
auto stage(const std::string& name, Fn&& fn) {
  const std::string prefix = "stage " + name + ": ";
  try {
    return fn();
  } catch (const MissingArtifactError& e) {
    throw MissingArtifactError(prefix + e.what());
  } catch (const NumericError& e) {
    throw NumericError(prefix + e.what());
  } catch (const DegenerateError& e) {
    throw DegenerateError(prefix + e.what());
  } catch (const ParseError& e) {
    throw ParseError(prefix + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(prefix + e.what());
  } catch (const CapacityError& e) {
    throw CapacityError(prefix + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  }
}

// Index fan-out over up to `jobs` threads.  Results must go to preallocated
// slots so aggregation order never depends on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t count = std::min(jobs, n);
  pool.reserve(count);
  for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

void check_keys(const nlohmann::json& j, const char* where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* key : allowed) ok = ok || item.key() == key;
    if (!ok) throw ConfigError("unknown key '" + item.key() + "' in " + where);
  }
}

template <typename T>
T field(const nlohmann::json& j, const char* key, const T& fallback) {
  try {
    return j.value(key, fallback);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad value for '" + std::string(key) + "': " + e.what());
  }
}

std::string comment_line(const std::string& hash) {
  return "# config_hash=" + hash + " version=" + kArtifactVersion + "\n";
}

std::ofstream open_artifact(const fs::path& path, const std::string& hash) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw MissingArtifactError("cannot open " + path.string() + " for writing");
  out << comment_line(hash);
  return out;
}

void write_json_artifact(const fs::path& path, nlohmann::json j, const std::string& hash) {
  j["config_hash"] = hash;
  j["version"] = kArtifactVersion;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw MissingArtifactError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
}

ManifoldDataset subset_dataset(const ManifoldDataset& ds, const std::vector<std::size_t>& idx) {
  ManifoldDataset out;
  out.role = ds.role;
  out.seed = ds.seed;
  out.noise_sigma = ds.noise_sigma;
  out.latent_dim = ds.latent_dim;
  out.ambient_dim = ds.ambient_dim;
  out.class_ids = ds.class_ids;
  for (std::size_t i : idx) {
    out.xs.push_back(ds.xs[i]);
    out.zs.push_back(ds.zs[i]);
    out.labels.push_back(ds.labels[i]);
  }
  return out;
}

Classifier make_target_init(const ExperimentConfig& cfg, std::uint64_t init_seed,
                            std::size_t hidden) {
  Rng rng(init_seed);
  const std::size_t d = cfg.data.oracle.ambient_dim;
  const std::size_t classes = cfg.data.private_classes;
  return Classifier{Mlp({{d, hidden, Activation::kTanh}, {hidden, classes, Activation::kNone}},
                        rng)};
}

double last_tracked_score(const InversionRun& run) {
  for (auto it = run.records.rbegin(); it != run.records.rend(); ++it) {
    if (it->has_as) return it->as_inv;
  }
  throw DegenerateError("run has no tracked alignment score");
}

std::vector<double> pooled_scores(const std::vector<InversionRun>& runs) {
  std::vector<double> scores;
  for (const InversionRun& run : runs) {
    for (const StepRecord& rec : run.records) {
      if (rec.has_as) scores.push_back(rec.as_inv);
    }
  }
  return scores;
}

nlohmann::json dynamics_to_json(const std::vector<DynamicsPoint>& dyn) {
  nlohmann::json arr = nlohmann::json::array();
  for (const DynamicsPoint& p : dyn) {
    arr.push_back({{"step", p.step},
                   {"mean_as", p.mean_as},
                   {"mean_conf", p.mean_conf},
                   {"count", p.as_count}});
  }
  return arr;
}

void write_dynamics_csv(const fs::path& path, const std::vector<DynamicsPoint>& dyn,
                        const std::string& hash) {
  std::ofstream out = open_artifact(path, hash);
  out << "step,mean_as,mean_conf,count\n";
  for (const DynamicsPoint& p : dyn) {
    out << p.step << "," << fmt(p.mean_as) << "," << fmt(p.mean_conf) << "," << p.as_count
        << "\n";
  }
}

struct ScoredAttack {
  Accuracy accuracy;
  double knn = 0.0;
  AsSummary as_inv;
  std::vector<double> final_scores;  // last tracked score per run
};

ScoredAttack score_runs(const std::vector<InversionRun>& runs, const ManifoldDataset& priv,
                        const EvalModel& eval) {
  ScoredAttack s;
  const std::vector<Recon> recons = recons_of(runs);
  s.accuracy = attack_accuracy(recons, eval);
  s.knn = knn_distance(recons, priv, eval);
  s.as_inv = summarize_scores(pooled_scores(runs));
  for (const InversionRun& run : runs) s.final_scores.push_back(last_tracked_score(run));
  return s;
}

}  // namespace

// ---- config ---------------------------------------------------------------

ExperimentConfig default_experiment_config(const std::string& kind) {
  if (kind != "measure-alignment" && kind != "hypothesis" && kind != "alignmi-eval") {
    throw ConfigError("unknown experiment kind '" + kind + "'");
  }
  ExperimentConfig cfg;
  cfg.kind = kind;
  cfg.benchmark_seeds = {1, 2, 3, 4, 5};

  cfg.data.private_classes = 12;
  cfg.data.aux_classes = 12;
  cfg.data.samples_per_class = 200;
  cfg.data.cluster_sep = 1.0;
  cfg.data.center_radius = 2.0;
  cfg.data.noise_sigma = 0.1;

  cfg.betas = {0.0, 0.05, 0.1, 0.5, 2.0, 8.0};
  cfg.finetune_epochs = 2;
  cfg.finetune_lr = 0.03;

  cfg.inversion.steps = 100;
  cfg.inversion.lambda = 0.02;
  cfg.inversion.loss = LossKind::kLogit;
  cfg.inversion.k_samples = 50;
  cfg.inversion.alpha = 0.05;
  cfg.inversion.transforms.flip_prob = 0.5;
  cfg.inversion.transforms.translate = false;
  cfg.inversion.transforms.crop_prob = 0.25;
  cfg.inversion.track_every = 10;

  if (kind == "alignmi-eval") {
    // Converged target: smoothing only moves gradients once the network has
    // grown real curvature, so this preset trains to convergence.
    cfg.target_hidden = 48;
    cfg.train.epochs = 10;
    cfg.train.lr = 0.05;
    cfg.train.batch_size = 32;
    cfg.inversion.eta = 0.3;
  } else {
    // Lightly trained target: the attack gradient keeps a dominant random
    // component, holding vanilla inversion-time alignment near sqrt(k/d)
    // while fine-tuned variants pull strongly ahead.
    cfg.target_hidden = 32;
    cfg.train.epochs = 1;
    cfg.train.lr = 0.03;
    cfg.train.batch_size = 128;
    cfg.inversion.eta = 1.0;
  }
  return cfg;
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg) {
  const nlohmann::json oracle = {{"latent_dim", cfg.data.oracle.latent_dim},
                                 {"ambient_dim", cfg.data.oracle.ambient_dim},
                                 {"hidden", cfg.data.oracle.hidden},
                                 {"seed", cfg.data.oracle.seed},
                                 {"input_scale", cfg.data.oracle.input_scale},
                                 {"output_gain", cfg.data.oracle.output_gain}};
  const nlohmann::json data = {{"oracle", oracle},
                               {"private_classes", cfg.data.private_classes},
                               {"aux_classes", cfg.data.aux_classes},
                               {"samples_per_class", cfg.data.samples_per_class},
                               {"noise_sigma", cfg.data.noise_sigma},
                               {"cluster_sep", cfg.data.cluster_sep},
                               {"cluster_std", cfg.data.cluster_std},
                               {"center_radius", cfg.data.center_radius}};
  const nlohmann::json train = {{"optimizer", optimizer_name(cfg.train.optimizer)},
                                {"lr", cfg.train.lr},
                                {"momentum", cfg.train.momentum},
                                {"adam_beta1", cfg.train.adam_beta1},
                                {"adam_beta2", cfg.train.adam_beta2},
                                {"adam_eps", cfg.train.adam_eps},
                                {"weight_decay", cfg.train.weight_decay},
                                {"epochs", cfg.train.epochs},
                                {"batch_size", cfg.train.batch_size},
                                {"test_fraction", cfg.train.test_fraction},
                                {"divergence_threshold", cfg.train.divergence_threshold}};
  const nlohmann::json decoder = {{"bottleneck", cfg.decoder_bottleneck},
                                  {"hidden", cfg.decoder.hidden},
                                  {"optimizer", optimizer_name(cfg.decoder.train.optimizer)},
                                  {"lr", cfg.decoder.train.lr},
                                  {"epochs", cfg.decoder.train.epochs},
                                  {"batch_size", cfg.decoder.train.batch_size},
                                  {"heldout_fraction", cfg.decoder.heldout_fraction},
                                  {"mse_threshold", cfg.decoder.mse_threshold},
                                  {"max_rank_deficient_frac", cfg.decoder.max_rank_deficient_frac}};
  const nlohmann::json inversion = {{"steps", cfg.inversion.steps},
                                    {"eta", cfg.inversion.eta},
                                    {"lambda", cfg.inversion.lambda},
                                    {"loss", loss_kind_name(cfg.inversion.loss)},
                                    {"smoothing", smoothing_name(cfg.inversion.smoothing)},
                                    {"k_samples", cfg.inversion.k_samples},
                                    {"alpha", cfg.inversion.alpha},
                                    {"flip_prob", cfg.inversion.transforms.flip_prob},
                                    {"translate", cfg.inversion.transforms.translate},
                                    {"crop_prob", cfg.inversion.transforms.crop_prob},
                                    {"track_every", cfg.inversion.track_every},
                                    {"adam", cfg.inversion.adam}};
  return {{"kind", cfg.kind},
          {"seed", cfg.seed},
          {"benchmark_seeds", cfg.benchmark_seeds},
          {"output_dir", cfg.output_dir},
          {"data", data},
          {"target_hidden", cfg.target_hidden},
          {"eval_hidden", cfg.eval_hidden},
          {"eval_floor", cfg.eval_floor},
          {"eval_epochs", cfg.eval_epochs},
          {"train", train},
          {"betas", cfg.betas},
          {"finetune_epochs", cfg.finetune_epochs},
          {"finetune_lr", cfg.finetune_lr},
          {"projector_source", projector_source_name(cfg.projector_source)},
          {"decoder", decoder},
          {"inversion", inversion},
          {"runs_per_class", cfg.runs_per_class},
          {"jobs", cfg.jobs},
          {"save_runs", cfg.save_runs}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& doc) {
  ExperimentConfig cfg;  // defaults
  check_keys(doc, "config",
             {"kind", "seed", "benchmark_seeds", "output_dir", "data", "target_hidden",
              "eval_hidden", "eval_floor", "eval_epochs", "train", "betas", "finetune_epochs",
              "finetune_lr", "projector_source", "decoder", "inversion", "runs_per_class", "jobs",
              "save_runs"});
  cfg.kind = field(doc, "kind", cfg.kind);
  if (cfg.kind != "measure-alignment" && cfg.kind != "hypothesis" && cfg.kind != "alignmi-eval") {
    throw ConfigError("unknown experiment kind '" + cfg.kind + "'");
  }
  cfg.seed = field(doc, "seed", cfg.seed);
  cfg.benchmark_seeds = field(doc, "benchmark_seeds", cfg.benchmark_seeds);
  if (cfg.benchmark_seeds.empty()) throw ConfigError("benchmark_seeds must not be empty");
  cfg.output_dir = field(doc, "output_dir", cfg.output_dir);

  if (doc.contains("data")) {
    const nlohmann::json& d = doc.at("data");
    check_keys(d, "data",
               {"oracle", "private_classes", "aux_classes", "samples_per_class", "noise_sigma",
                "cluster_sep", "cluster_std", "center_radius"});
    if (d.contains("oracle")) {
      const nlohmann::json& o = d.at("oracle");
      check_keys(o, "data.oracle",
                 {"latent_dim", "ambient_dim", "hidden", "seed", "input_scale", "output_gain"});
      cfg.data.oracle.latent_dim = field(o, "latent_dim", cfg.data.oracle.latent_dim);
      cfg.data.oracle.ambient_dim = field(o, "ambient_dim", cfg.data.oracle.ambient_dim);
      cfg.data.oracle.hidden = field(o, "hidden", cfg.data.oracle.hidden);
      cfg.data.oracle.seed = field(o, "seed", cfg.data.oracle.seed);
      cfg.data.oracle.input_scale = field(o, "input_scale", cfg.data.oracle.input_scale);
      cfg.data.oracle.output_gain = field(o, "output_gain", cfg.data.oracle.output_gain);
    }
    cfg.data.private_classes = field(d, "private_classes", cfg.data.private_classes);
    cfg.data.aux_classes = field(d, "aux_classes", cfg.data.aux_classes);
    cfg.data.samples_per_class = field(d, "samples_per_class", cfg.data.samples_per_class);
    cfg.data.noise_sigma = field(d, "noise_sigma", cfg.data.noise_sigma);
    cfg.data.cluster_sep = field(d, "cluster_sep", cfg.data.cluster_sep);
    cfg.data.cluster_std = field(d, "cluster_std", cfg.data.cluster_std);
    cfg.data.center_radius = field(d, "center_radius", cfg.data.center_radius);
  }

  cfg.target_hidden = field(doc, "target_hidden", cfg.target_hidden);
  cfg.eval_hidden = field(doc, "eval_hidden", cfg.eval_hidden);
  cfg.eval_floor = field(doc, "eval_floor", cfg.eval_floor);
  cfg.eval_epochs = field(doc, "eval_epochs", cfg.eval_epochs);

  if (doc.contains("train")) {
    const nlohmann::json& t = doc.at("train");
    check_keys(t, "train",
               {"optimizer", "lr", "momentum", "adam_beta1", "adam_beta2", "adam_eps",
                "weight_decay", "epochs", "batch_size", "test_fraction", "divergence_threshold"});
    cfg.train.optimizer =
        optimizer_from_name(field<std::string>(t, "optimizer", optimizer_name(cfg.train.optimizer)));
    cfg.train.lr = field(t, "lr", cfg.train.lr);
    cfg.train.momentum = field(t, "momentum", cfg.train.momentum);
    cfg.train.adam_beta1 = field(t, "adam_beta1", cfg.train.adam_beta1);
    cfg.train.adam_beta2 = field(t, "adam_beta2", cfg.train.adam_beta2);
    cfg.train.adam_eps = field(t, "adam_eps", cfg.train.adam_eps);
    cfg.train.weight_decay = field(t, "weight_decay", cfg.train.weight_decay);
    cfg.train.epochs = field(t, "epochs", cfg.train.epochs);
    cfg.train.batch_size = field(t, "batch_size", cfg.train.batch_size);
    cfg.train.test_fraction = field(t, "test_fraction", cfg.train.test_fraction);
    cfg.train.divergence_threshold =
        field(t, "divergence_threshold", cfg.train.divergence_threshold);
  }

  cfg.betas = field(doc, "betas", cfg.betas);
  for (double b : cfg.betas) {
    if (!(b >= 0.0)) throw ConfigError("betas must be non-negative");
  }
  cfg.finetune_epochs = field(doc, "finetune_epochs", cfg.finetune_epochs);
  if (cfg.finetune_epochs == 0) throw ConfigError("finetune_epochs must be positive");
  cfg.finetune_lr = field(doc, "finetune_lr", cfg.finetune_lr);
  if (!(cfg.finetune_lr > 0.0)) throw ConfigError("finetune_lr must be positive");
  cfg.projector_source = projector_source_from_name(
      field<std::string>(doc, "projector_source", projector_source_name(cfg.projector_source)));

  if (doc.contains("decoder")) {
    const nlohmann::json& d = doc.at("decoder");
    check_keys(d, "decoder",
               {"bottleneck", "hidden", "optimizer", "lr", "epochs", "batch_size",
                "heldout_fraction", "mse_threshold", "max_rank_deficient_frac"});
    cfg.decoder_bottleneck = field(d, "bottleneck", cfg.decoder_bottleneck);
    cfg.decoder.hidden = field(d, "hidden", cfg.decoder.hidden);
    cfg.decoder.train.optimizer = optimizer_from_name(
        field<std::string>(d, "optimizer", optimizer_name(cfg.decoder.train.optimizer)));
    cfg.decoder.train.lr = field(d, "lr", cfg.decoder.train.lr);
    cfg.decoder.train.epochs = field(d, "epochs", cfg.decoder.train.epochs);
    cfg.decoder.train.batch_size = field(d, "batch_size", cfg.decoder.train.batch_size);
    cfg.decoder.heldout_fraction = field(d, "heldout_fraction", cfg.decoder.heldout_fraction);
    cfg.decoder.mse_threshold = field(d, "mse_threshold", cfg.decoder.mse_threshold);
    cfg.decoder.max_rank_deficient_frac =
        field(d, "max_rank_deficient_frac", cfg.decoder.max_rank_deficient_frac);
  }

  if (doc.contains("inversion")) {
    const nlohmann::json& i = doc.at("inversion");
    check_keys(i, "inversion",
               {"steps", "eta", "lambda", "loss", "smoothing", "k_samples", "alpha", "flip_prob",
                "translate", "crop_prob", "track_every", "adam"});
    cfg.inversion.steps = field(i, "steps", cfg.inversion.steps);
    cfg.inversion.eta = field(i, "eta", cfg.inversion.eta);
    cfg.inversion.lambda = field(i, "lambda", cfg.inversion.lambda);
    cfg.inversion.loss =
        loss_kind_from_name(field<std::string>(i, "loss", loss_kind_name(cfg.inversion.loss)));
    cfg.inversion.smoothing = smoothing_from_name(
        field<std::string>(i, "smoothing", smoothing_name(cfg.inversion.smoothing)));
    cfg.inversion.k_samples = field(i, "k_samples", cfg.inversion.k_samples);
    cfg.inversion.alpha = field(i, "alpha", cfg.inversion.alpha);
    cfg.inversion.transforms.flip_prob =
        field(i, "flip_prob", cfg.inversion.transforms.flip_prob);
    cfg.inversion.transforms.translate =
        field(i, "translate", cfg.inversion.transforms.translate);
    cfg.inversion.transforms.crop_prob =
        field(i, "crop_prob", cfg.inversion.transforms.crop_prob);
    cfg.inversion.track_every = field(i, "track_every", cfg.inversion.track_every);
    cfg.inversion.adam = field(i, "adam", cfg.inversion.adam);
  }

  cfg.runs_per_class = field(doc, "runs_per_class", cfg.runs_per_class);
  if (cfg.runs_per_class == 0) throw ConfigError("runs_per_class must be at least 1");
  cfg.jobs = field(doc, "jobs", cfg.jobs);
  if (cfg.jobs == 0) throw ConfigError("jobs must be at least 1");
  cfg.save_runs = field(doc, "save_runs", cfg.save_runs);
  return cfg;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key.path=value: " + assignment);
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  nlohmann::json* node = &doc;
  std::size_t begin = 0;
  for (;;) {
    const std::size_t dot = path.find('.', begin);
    const std::string key = path.substr(begin, dot == std::string::npos ? dot : dot - begin);
    if (key.empty()) throw ConfigError("empty key segment in override: " + assignment);
    if (dot == std::string::npos) {
      nlohmann::json value;
      try {
        value = nlohmann::json::parse(raw);
      } catch (const nlohmann::json::parse_error&) {
        value = raw;  // unquoted strings like `logit`
      }
      (*node)[key] = value;
      return;
    }
    nlohmann::json& child = (*node)[key];
    if (!child.is_object() && !child.is_null()) {
      throw ConfigError("override path runs through a non-object key '" + key +
                        "': " + assignment);
    }
    if (child.is_null()) child = nlohmann::json::object();
    node = &child;
    begin = dot + 1;
  }
}

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("config file not found: " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("config " + path + ": " + e.what(),
                     static_cast<long long>(e.byte) - 1);
  }
  for (const std::string& assignment : overrides) apply_override(doc, assignment);
  return experiment_config_from_json(doc);
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const ExperimentConfig& cfg) {
  ExperimentConfig identity = cfg;
  identity.output_dir.clear();
  identity.jobs = 1;
  identity.save_runs = false;
  return fnv1a_hex(experiment_config_to_json(identity).dump());
}

std::string resolve_output_dir(const ExperimentConfig& cfg) {
  const fs::path configured(cfg.output_dir);
  if (configured.is_absolute()) return configured.string();
  const char* root = std::getenv("MINV_OUTPUT_ROOT");
  if (root != nullptr && root[0] != '\0') return (fs::path(root) / configured).string();
  return configured.string();
}

SeedPlan seed_plan(std::uint64_t global_seed, std::uint64_t benchmark_seed) {
  const std::uint64_t base = Rng::mix(global_seed, benchmark_seed);
  SeedPlan plan;
  plan.data = Rng::mix(base, kDataTag);
  plan.target_init = Rng::mix(base, kTargetInitTag);
  plan.train = Rng::mix(base, kTrainTag);
  plan.eval_init = Rng::mix(base, kEvalInitTag);
  plan.eval_train = Rng::mix(base, kEvalTrainTag);
  plan.attack = Rng::mix(base, kAttackTag);
  return plan;
}

// ---- building blocks --------------------------------------------------------

Generator experiment_oracle(const ExperimentConfig& cfg) {
  return stage("oracle", [&] { return make_oracle_generator(cfg.data.oracle); });
}

DatasetPair experiment_data(const ExperimentConfig& cfg, const Generator& oracle,
                            std::uint64_t benchmark_seed) {
  const SeedPlan plan = seed_plan(cfg.seed, benchmark_seed);
  return stage("data", [&] { return make_datasets(cfg.data, plan.data, oracle); });
}

ProjectorCache experiment_projectors(const ExperimentConfig& cfg, const Generator& oracle,
                                     const DatasetPair& data) {
  if (cfg.projector_source == ProjectorSource::kOracle) {
    return stage("projectors", [&] {
      return precompute_projectors(data.priv, oracle, nullptr, ProjectorSource::kOracle);
    });
  }
  return stage("decoder", [&] {
    DecoderConfig dc = cfg.decoder;
    dc.train.seed = Rng::mix(data.aux.seed, kDecoderTag);
    const DecoderResult dec = train_decoder(data.aux, cfg.decoder_bottleneck, dc);
    return precompute_projectors(data.priv, dec.decoder, &dec.encoder,
                                 ProjectorSource::kLearnedDecoder);
  });
}

TrainResult train_variant(const ExperimentConfig& cfg, const DatasetPair& data,
                          const ProjectorCache& cache, std::uint64_t benchmark_seed, double beta,
                          const TrainResult* vanilla) {
  const SeedPlan plan = seed_plan(cfg.seed, benchmark_seed);
  TrainConfig tc = cfg.train;
  tc.beta = 0.0;
  tc.seed = plan.train;
  tc.projector_source = cfg.projector_source;
  if (beta == 0.0) {
    const Classifier init = make_target_init(cfg, plan.target_init, cfg.target_hidden);
    return stage("train-vanilla", [&] { return train_classifier(init, data.priv, tc); });
  }
  TrainResult base;
  if (vanilla == nullptr) {
    base = train_variant(cfg, data, cache, benchmark_seed, 0.0);
    vanilla = &base;
  }
  tc.beta = beta;
  tc.seed = Rng::mix(plan.train, kFinetuneTag);
  tc.epochs = cfg.finetune_epochs;
  tc.lr = cfg.finetune_lr;
  return stage("finetune-beta-" + fmt_short(beta),
               [&] { return train_aligned(vanilla->model, data.priv, cache, tc); });
}

EvalModel train_experiment_eval(const ExperimentConfig& cfg, const DatasetPair& data,
                                std::uint64_t benchmark_seed) {
  const SeedPlan plan = seed_plan(cfg.seed, benchmark_seed);
  return stage("eval-model", [&] {
    const Split split =
        stratified_split(data.priv, cfg.train.test_fraction, plan.eval_train);
    const ManifoldDataset train_ds = subset_dataset(data.priv, split.train);
    const ManifoldDataset test_ds = subset_dataset(data.priv, split.test);
    TrainConfig tc = cfg.train;
    tc.beta = 0.0;
    tc.seed = plan.eval_train;
    tc.epochs = cfg.eval_epochs;
    tc.test_fraction = 0.0;
    const Classifier init = make_target_init(cfg, plan.eval_init, cfg.eval_hidden);
    const TrainResult res = train_classifier(init, train_ds, tc);
    return make_eval_model(res.model, test_ds, 1, cfg.eval_floor);
  });
}

std::vector<InversionRun> attack_classifier(const ExperimentConfig& cfg, const Classifier& target,
                                            const Generator& gen, std::uint64_t benchmark_seed,
                                            const InversionConfig& inv) {
  const SeedPlan plan = seed_plan(cfg.seed, benchmark_seed);
  const std::size_t classes = cfg.data.private_classes;
  const std::size_t total = classes * cfg.runs_per_class;
  std::vector<InversionRun> runs(total);
  parallel_for(total, cfg.jobs, [&](std::size_t r) {
    InversionConfig run_cfg = inv;
    run_cfg.seed = Rng::mix(plan.attack, r);
    runs[r] = invert(target, gen, r / cfg.runs_per_class, run_cfg);
  });
  return runs;
}

std::vector<Recon> recons_of(const std::vector<InversionRun>& runs) {
  std::vector<Recon> recons;
  recons.reserve(runs.size());
  for (const InversionRun& run : runs) recons.push_back({run.final_x, run.target});
  return recons;
}

// ---- measure-alignment ------------------------------------------------------

MeasureReport measure_alignment_with(const ExperimentConfig& cfg, const Classifier& target,
                                     const Generator& oracle) {
  MeasureReport report;
  report.hash = config_hash(cfg);
  report.baseline = std::sqrt(static_cast<double>(cfg.data.oracle.latent_dim) /
                              static_cast<double>(cfg.data.oracle.ambient_dim));
  report.runs = stage("attack", [&] {
    return attack_classifier(cfg, target, oracle, cfg.seed, cfg.inversion);
  });
  report.n_runs = report.runs.size();
  report.distribution = summarize_scores(pooled_scores(report.runs));
  report.dynamics = alignment_dynamics(report.runs);
  return report;
}

MeasureReport run_measure_alignment(const ExperimentConfig& cfg) {
  const Generator oracle = experiment_oracle(cfg);
  const DatasetPair data = experiment_data(cfg, oracle, cfg.seed);
  const ProjectorCache cache = experiment_projectors(cfg, oracle, data);
  const TrainResult target = train_variant(cfg, data, cache, cfg.seed, 0.0);
  return measure_alignment_with(cfg, target.model, oracle);
}

void write_measure_report(const ExperimentConfig& cfg, const MeasureReport& report) {
  const fs::path dir(resolve_output_dir(cfg));
  fs::create_directories(dir);

  {
    std::ofstream out = open_artifact(dir / "alignment_scores.csv", report.hash);
    out << "as_inv\n";
    for (double v : pooled_scores(report.runs)) out << fmt(v) << "\n";
  }
  write_dynamics_csv(dir / "alignment_dynamics.csv", report.dynamics, report.hash);
  write_json_artifact(dir / "alignment_summary.json",
                      {{"kind", "measure-alignment"},
                       {"baseline", report.baseline},
                       {"latent_dim", cfg.data.oracle.latent_dim},
                       {"ambient_dim", cfg.data.oracle.ambient_dim},
                       {"n_runs", report.n_runs},
                       {"mean", report.distribution.mean},
                       {"median", report.distribution.median},
                       {"q25", report.distribution.q25},
                       {"q75", report.distribution.q75},
                       {"count", report.distribution.count}},
                      report.hash);
  if (cfg.save_runs) {
    fs::create_directories(dir / "runs");
    for (std::size_t r = 0; r < report.runs.size(); ++r) {
      const InversionRun& run = report.runs[r];
      save_inversion_run(run, report.hash,
                         (dir / "runs" /
                          ("run_c" + std::to_string(run.target) + "_" +
                           std::to_string(r % cfg.runs_per_class) + ".json"))
                             .string());
    }
  }
}

// ---- hypothesis ---------------------------------------------------------------

HypothesisReport run_hypothesis(const ExperimentConfig& cfg) {
  HypothesisReport report;
  report.hash = config_hash(cfg);
  const Generator oracle = experiment_oracle(cfg);

  std::vector<InversionRun> vanilla_pool;
  for (const std::uint64_t bseed : cfg.benchmark_seeds) {
    const DatasetPair data = experiment_data(cfg, oracle, bseed);
    const ProjectorCache cache = experiment_projectors(cfg, oracle, data);
    const EvalModel eval = train_experiment_eval(cfg, data, bseed);

    struct Variant {
      std::string tag;
      double beta;
    };
    std::vector<Variant> variants = {{"vanilla", 0.0}};
    for (double b : cfg.betas) variants.push_back({"beta-" + fmt_short(b), b});

    const TrainResult vanilla = train_variant(cfg, data, cache, bseed, 0.0);

    std::vector<ModelRow> seed_rows;
    for (const Variant& v : variants) {
      const TrainResult trained =
          v.beta == 0.0 ? vanilla : train_variant(cfg, data, cache, bseed, v.beta, &vanilla);
      const AlignmentMeasurement as_tr = measure_AS_tr(trained.model, data.priv, cache);
      const std::vector<InversionRun> runs = stage("attack-" + v.tag, [&] {
        return attack_classifier(cfg, trained.model, oracle, bseed, cfg.inversion);
      });
      const ScoredAttack scored = stage("score-" + v.tag, [&] {
        return score_runs(runs, data.priv, eval);
      });

      ModelRow row;
      row.seed = bseed;
      row.tag = v.tag;
      row.beta = v.beta;
      row.as_tr = as_tr.mean;
      row.test_acc = trained.history.back().test_acc;
      row.acc1 = scored.accuracy.acc1;
      row.acc5 = scored.accuracy.acc5;
      row.knn = scored.knn;
      row.as_inv_median = scored.as_inv.median;
      row.as_inv_q25 = scored.as_inv.q25;
      row.as_inv_q75 = scored.as_inv.q75;
      row.as_inv_count = scored.as_inv.count;
      seed_rows.push_back(std::move(row));

      if (v.tag == "vanilla") {
        vanilla_pool.insert(vanilla_pool.end(), runs.begin(), runs.end());
      }
    }
    std::stable_sort(seed_rows.begin(), seed_rows.end(),
                     [](const ModelRow& a, const ModelRow& b) { return a.as_tr < b.as_tr; });
    report.rows.insert(report.rows.end(), seed_rows.begin(), seed_rows.end());
  }

  report.vanilla_dynamics = alignment_dynamics(vanilla_pool);
  report.vanilla_as_inv_median = summarize_scores(pooled_scores(vanilla_pool)).median;
  return report;
}

void write_hypothesis_report(const ExperimentConfig& cfg, const HypothesisReport& report) {
  const fs::path dir(resolve_output_dir(cfg));
  fs::create_directories(dir);

  {
    std::ofstream out = open_artifact(dir / "hypothesis_table.csv", report.hash);
    out << "seed,model,as_tr,test_acc,acc1,knn_dist\n";
    for (const ModelRow& row : report.rows) {
      out << row.seed << "," << row.tag << "," << fmt(row.as_tr) << "," << fmt(row.test_acc)
          << "," << fmt(row.acc1) << "," << fmt(row.knn) << "\n";
    }
  }
  {
    std::ofstream out = open_artifact(dir / "as_inv_comparison.csv", report.hash);
    out << "seed,model,as_inv_median,as_inv_q25,as_inv_q75,as_inv_count\n";
    for (const ModelRow& row : report.rows) {
      out << row.seed << "," << row.tag << "," << fmt(row.as_inv_median) << ","
          << fmt(row.as_inv_q25) << "," << fmt(row.as_inv_q75) << "," << row.as_inv_count
          << "\n";
    }
  }
  write_dynamics_csv(dir / "vanilla_dynamics.csv", report.vanilla_dynamics, report.hash);

  nlohmann::json rows = nlohmann::json::array();
  for (const ModelRow& row : report.rows) {
    rows.push_back({{"seed", row.seed},
                    {"model", row.tag},
                    {"beta", row.beta},
                    {"as_tr", row.as_tr},
                    {"test_acc", row.test_acc},
                    {"acc1", row.acc1},
                    {"acc5", row.acc5},
                    {"knn_dist", row.knn},
                    {"as_inv_median", row.as_inv_median}});
  }
  write_json_artifact(dir / "hypothesis_summary.json",
                      {{"kind", "hypothesis"},
                       {"rows", rows},
                       {"vanilla_dynamics", dynamics_to_json(report.vanilla_dynamics)},
                       {"vanilla_as_inv_median", report.vanilla_as_inv_median}},
                      report.hash);
}

// ---- alignmi-eval --------------------------------------------------------------

AlignmiReport run_alignmi(const ExperimentConfig& cfg) {
  AlignmiReport report;
  report.hash = config_hash(cfg);
  const Generator oracle = experiment_oracle(cfg);

  struct Method {
    std::string name;
    Smoothing smoothing;
  };
  const std::vector<Method> methods = {{"none", Smoothing::kNone},
                                       {"paa", Smoothing::kPaa},
                                       {"taa", Smoothing::kTaa}};

  Classifier first_target;  // reused for the timing probe
  bool have_first = false;
  for (const std::uint64_t bseed : cfg.benchmark_seeds) {
    const DatasetPair data = experiment_data(cfg, oracle, bseed);
    const ProjectorCache cache = experiment_projectors(cfg, oracle, data);
    const EvalModel eval = train_experiment_eval(cfg, data, bseed);
    const TrainResult target = train_variant(cfg, data, cache, bseed, 0.0);
    if (!have_first) {
      first_target = target.model;
      have_first = true;
    }

    for (const Method& m : methods) {
      InversionConfig inv = cfg.inversion;
      inv.smoothing = m.smoothing;
      const std::vector<InversionRun> runs = stage("attack-" + m.name, [&] {
        return attack_classifier(cfg, target.model, oracle, bseed, inv);
      });
      const ScoredAttack scored = stage("score-" + m.name, [&] {
        return score_runs(runs, data.priv, eval);
      });
      MethodRow row;
      row.seed = bseed;
      row.method = m.name;
      row.acc1 = scored.accuracy.acc1;
      row.acc5 = scored.accuracy.acc5;
      row.knn = scored.knn;
      row.final_as_median = median_of(scored.final_scores);
      report.rows.push_back(std::move(row));
    }
  }

  // Wall-clock cost of one smoothed run relative to one unsmoothed run,
  // median of 3 repetitions each, on the first benchmark target.
  const auto time_method = [&](Smoothing smoothing) {
    InversionConfig inv = cfg.inversion;
    inv.smoothing = smoothing;
    inv.seed = Rng::mix(seed_plan(cfg.seed, cfg.benchmark_seeds.front()).attack, 0);
    std::vector<double> times;
    for (int rep = 0; rep < 3; ++rep) {
      const auto begin = std::chrono::steady_clock::now();
      invert(first_target, oracle, 0, inv);
      const auto end = std::chrono::steady_clock::now();
      times.push_back(std::chrono::duration<double>(end - begin).count());
    }
    return median_of(times);
  };
  const double base_time = time_method(Smoothing::kNone);
  report.paa_runtime_ratio = time_method(Smoothing::kPaa) / base_time;
  report.taa_runtime_ratio = time_method(Smoothing::kTaa) / base_time;
  return report;
}

void write_alignmi_report(const ExperimentConfig& cfg, const AlignmiReport& report) {
  const fs::path dir(resolve_output_dir(cfg));
  fs::create_directories(dir);

  {
    std::ofstream out = open_artifact(dir / "alignmi_table.csv", report.hash);
    out << "seed,method,acc1,acc5,knn_dist,final_as_median\n";
    for (const MethodRow& row : report.rows) {
      out << row.seed << "," << row.method << "," << fmt(row.acc1) << "," << fmt(row.acc5)
          << "," << fmt(row.knn) << "," << fmt(row.final_as_median) << "\n";
    }
  }
  nlohmann::json rows = nlohmann::json::array();
  for (const MethodRow& row : report.rows) {
    rows.push_back({{"seed", row.seed},
                    {"method", row.method},
                    {"acc1", row.acc1},
                    {"acc5", row.acc5},
                    {"knn_dist", row.knn},
                    {"final_as_median", row.final_as_median}});
  }
  write_json_artifact(dir / "alignmi_summary.json", {{"kind", "alignmi-eval"}, {"rows", rows}},
                      report.hash);
  // Wall-clock measurements: machine-dependent by nature, kept out of the
  // bitwise-reproducible artifact set.
  {
    std::ofstream out = open_artifact(dir / "runtime_ratio.csv", report.hash);
    out << "method,ratio,k_samples\n";
    out << "paa," << fmt(report.paa_runtime_ratio) << "," << cfg.inversion.k_samples << "\n";
    out << "taa," << fmt(report.taa_runtime_ratio) << "," << cfg.inversion.k_samples << "\n";
  }
}

// ---- report rendering -----------------------------------------------------------

void render_reports(const ExperimentConfig& cfg, std::ostream& out) {
  const fs::path dir(resolve_output_dir(cfg));
  bool any = false;

  const fs::path measure = dir / "alignment_summary.json";
  if (fs::exists(measure)) {
    any = true;
    std::ifstream in(measure);
    const nlohmann::json j = nlohmann::json::parse(in);
    out << "alignment measurement (config " << j.value("config_hash", "?") << ")\n";
    out << "  runs: " << j.value("n_runs", 0) << ", tracked scores: " << j.value("count", 0)
        << "\n";
    out << "  AS_inv mean " << j.value("mean", 0.0) << ", median " << j.value("median", 0.0)
        << " (random baseline " << j.value("baseline", 0.0) << ")\n";
  }

  const fs::path hypo = dir / "hypothesis_summary.json";
  if (fs::exists(hypo)) {
    any = true;
    std::ifstream in(hypo);
    const nlohmann::json j = nlohmann::json::parse(in);
    out << "hypothesis sweep (config " << j.value("config_hash", "?") << ")\n";
    out << "  seed model        AS_tr   test_acc acc1    knn\n";
    for (const auto& row : j.at("rows")) {
      char line[160];
      std::snprintf(line, sizeof(line), "  %-4llu %-12s %-7.4f %-8.4f %-7.4f %.4f",
                    static_cast<unsigned long long>(row.value("seed", 0ull)),
                    row.value("model", std::string("?")).c_str(), row.value("as_tr", 0.0),
                    row.value("test_acc", 0.0), row.value("acc1", 0.0),
                    row.value("knn_dist", 0.0));
      out << line << "\n";
    }
  }

  const fs::path alignmi = dir / "alignmi_summary.json";
  if (fs::exists(alignmi)) {
    any = true;
    std::ifstream in(alignmi);
    const nlohmann::json j = nlohmann::json::parse(in);
    out << "smoothed-attack comparison (config " << j.value("config_hash", "?") << ")\n";
    out << "  seed method acc1    acc5    knn     final_AS\n";
    for (const auto& row : j.at("rows")) {
      char line[160];
      std::snprintf(line, sizeof(line), "  %-4llu %-6s %-7.4f %-7.4f %-7.4f %.4f",
                    static_cast<unsigned long long>(row.value("seed", 0ull)),
                    row.value("method", std::string("?")).c_str(), row.value("acc1", 0.0),
                    row.value("acc5", 0.0), row.value("knn_dist", 0.0),
                    row.value("final_as_median", 0.0));
      out << line << "\n";
    }
  }

  if (!any) {
    throw MissingArtifactError("no summary files under " + dir.string());
  }
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const MissingArtifactError*>(&e) != nullptr) return 4;
  if (dynamic_cast<const ConfigError*>(&e) != nullptr ||
      dynamic_cast<const ParseError*>(&e) != nullptr ||
      dynamic_cast<const DimensionError*>(&e) != nullptr ||
      dynamic_cast<const CapacityError*>(&e) != nullptr) {
    return 2;
  }
  if (dynamic_cast<const NumericError*>(&e) != nullptr ||
      dynamic_cast<const DegenerateError*>(&e) != nullptr) {
    return 3;
  }
  return 1;
}

}  // namespace minv
