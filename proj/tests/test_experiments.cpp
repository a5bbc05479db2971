#include "minv/experiments.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <doctest.h>

#include "minv/errors.hpp"

using namespace minv;
namespace fs = std::filesystem;

namespace {

struct TmpDir {
  fs::path path;
  explicit TmpDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TmpDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small but complete benchmark: everything trains in well under a second.
ExperimentConfig tiny_config(const std::string& out) {
  ExperimentConfig cfg;
  cfg.kind = "measure-alignment";
  cfg.seed = 3;
  cfg.benchmark_seeds = {1};
  cfg.output_dir = out;
  cfg.data.oracle.latent_dim = 2;
  cfg.data.oracle.ambient_dim = 16;
  cfg.data.oracle.hidden = 24;
  cfg.data.oracle.seed = 7;
  cfg.data.private_classes = 3;
  cfg.data.aux_classes = 3;
  cfg.data.samples_per_class = 30;
  cfg.data.cluster_sep = 0.9;
  cfg.data.center_radius = 2.0;
  cfg.data.cluster_std = 0.18;
  cfg.target_hidden = 16;
  cfg.eval_hidden = 20;
  cfg.eval_floor = 0.7;
  cfg.eval_epochs = 25;
  cfg.train.epochs = 10;
  cfg.inversion.steps = 6;
  cfg.inversion.track_every = 2;
  cfg.inversion.eta = 0.1;
  cfg.inversion.k_samples = 3;
  cfg.runs_per_class = 2;
  return cfg;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MINV_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

void write_file(const fs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::trunc);
  out << body;
}

}  // namespace

TEST_CASE("the config survives a JSON round trip with every field intact") {
  ExperimentConfig cfg = tiny_config("somewhere");
  cfg.betas = {0.0, 0.25};
  cfg.jobs = 3;
  cfg.save_runs = true;
  const nlohmann::json doc = experiment_config_to_json(cfg);
  const ExperimentConfig back = experiment_config_from_json(doc);
  CHECK(experiment_config_to_json(back).dump() == doc.dump());
}

TEST_CASE("strict parsing rejects unknown keys and bad values") {
  nlohmann::json doc = experiment_config_to_json(tiny_config("x"));
  doc["typo_key"] = 1;
  CHECK_THROWS_AS(experiment_config_from_json(doc), ConfigError);
  doc.erase("typo_key");
  doc["inversion"]["K"] = 10;
  CHECK_THROWS_AS(experiment_config_from_json(doc), ConfigError);
  doc["inversion"].erase("K");
  doc["kind"] = "frobnicate";
  CHECK_THROWS_AS(experiment_config_from_json(doc), ConfigError);
  doc["kind"] = "hypothesis";
  doc["betas"] = {-1.0};
  CHECK_THROWS_AS(experiment_config_from_json(doc), ConfigError);
  doc["betas"] = {0.5};
  doc["benchmark_seeds"] = nlohmann::json::array();
  CHECK_THROWS_AS(experiment_config_from_json(doc), ConfigError);
}

TEST_CASE("dotted overrides reach nested keys and parse values") {
  nlohmann::json doc = experiment_config_to_json(tiny_config("x"));
  apply_override(doc, "train.lr=0.125");
  CHECK(doc["train"]["lr"] == 0.125);
  apply_override(doc, "inversion.loss=cross-entropy");
  CHECK(doc["inversion"]["loss"] == "cross-entropy");
  apply_override(doc, "data.oracle.latent_dim=8");
  CHECK(doc["data"]["oracle"]["latent_dim"] == 8);
  apply_override(doc, "save_runs=true");
  CHECK(doc["save_runs"] == true);
  apply_override(doc, "benchmark_seeds=[4,5]");
  CHECK(doc["benchmark_seeds"] == nlohmann::json::array({4, 5}));

  CHECK_THROWS_AS(apply_override(doc, "no_equals_sign"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "=5"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "train..lr=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "seed.sub=1"), ConfigError);  // through a number
}

TEST_CASE("config loading reports parse errors with a byte offset") {
  TmpDir tmp("minv_cfg_load");
  const fs::path good = tmp.path / "good.json";
  write_file(good, experiment_config_to_json(tiny_config("x")).dump());
  const ExperimentConfig cfg =
      load_experiment_config(good.string(), {"seed=9", "train.epochs=4", "seed=11"});
  CHECK(cfg.seed == 11);  // later overrides win
  CHECK(cfg.train.epochs == 4);

  const fs::path bad = tmp.path / "bad.json";
  write_file(bad, "{\"kind\": }");
  try {
    load_experiment_config(bad.string());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.byte_offset() >= 0);
  }
  CHECK_THROWS_AS(load_experiment_config((tmp.path / "absent.json").string()),
                  MissingArtifactError);
}

TEST_CASE("the hash follows the fnv-1a test vectors and ignores execution fields") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");

  ExperimentConfig a = tiny_config("dir_one");
  ExperimentConfig b = tiny_config("dir_two");
  b.jobs = 7;
  b.save_runs = true;
  CHECK(config_hash(a) == config_hash(b));
  b.seed = 4;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("relative output dirs root themselves in MINV_OUTPUT_ROOT") {
  ExperimentConfig cfg = tiny_config("nested/out");
  unsetenv("MINV_OUTPUT_ROOT");
  CHECK(resolve_output_dir(cfg) == "nested/out");
  setenv("MINV_OUTPUT_ROOT", "/tmp/minv_root", 1);
  CHECK(resolve_output_dir(cfg) == "/tmp/minv_root/nested/out");
  cfg.output_dir = "/abs/path";
  CHECK(resolve_output_dir(cfg) == "/abs/path");
  unsetenv("MINV_OUTPUT_ROOT");
}

TEST_CASE("seed plans are deterministic and spread across roles and repetitions") {
  const SeedPlan p1 = seed_plan(3, 1);
  const SeedPlan p2 = seed_plan(3, 1);
  CHECK(p1.data == p2.data);
  CHECK(p1.attack == p2.attack);
  const std::vector<std::uint64_t> fields = {p1.data,      p1.target_init, p1.train,
                                             p1.eval_init, p1.eval_train,  p1.attack};
  for (std::size_t i = 0; i < fields.size(); ++i) {
    for (std::size_t j = i + 1; j < fields.size(); ++j) REQUIRE(fields[i] != fields[j]);
  }
  const SeedPlan other = seed_plan(3, 2);
  CHECK(other.data != p1.data);
}

TEST_CASE("exit codes separate config, numeric and artifact failures") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(ParseError("x", 3)) == 2);
  CHECK(exit_code_for(DimensionError("x")) == 2);
  CHECK(exit_code_for(CapacityError("x")) == 2);
  CHECK(exit_code_for(NumericError("x")) == 3);
  CHECK(exit_code_for(TrainingDivergedError("x", 2)) == 3);
  CHECK(exit_code_for(DegenerateError("x")) == 3);
  CHECK(exit_code_for(MissingArtifactError("x")) == 4);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("measure-alignment is reproducible down to the bytes") {
  TmpDir tmp("minv_measure_e2e");
  ExperimentConfig cfg = tiny_config((tmp.path / "a").string());
  const MeasureReport r1 = run_measure_alignment(cfg);
  CHECK(r1.n_runs == 6);  // 3 classes x 2 runs
  CHECK(r1.baseline == doctest::Approx(std::sqrt(2.0 / 16.0)).epsilon(1e-15));
  CHECK(r1.distribution.count == 18);  // 3 tracked steps per run
  REQUIRE(r1.dynamics.size() == 6);
  write_measure_report(cfg, r1);

  cfg.output_dir = (tmp.path / "b").string();
  const MeasureReport r2 = run_measure_alignment(cfg);
  write_measure_report(cfg, r2);

  for (const char* name : {"alignment_scores.csv", "alignment_dynamics.csv",
                           "alignment_summary.json"}) {
    CHECK(slurp(tmp.path / "a" / name) == slurp(tmp.path / "b" / name));
  }
}

TEST_CASE("attack fan-out over threads changes nothing numeric") {
  TmpDir tmp("minv_jobs_e2e");
  ExperimentConfig cfg = tiny_config((tmp.path / "serial").string());
  cfg.jobs = 1;
  write_measure_report(cfg, run_measure_alignment(cfg));
  cfg.jobs = 3;
  cfg.output_dir = (tmp.path / "fanout").string();
  write_measure_report(cfg, run_measure_alignment(cfg));
  // hashes agree because jobs is execution-only, and so must every byte
  for (const char* name : {"alignment_scores.csv", "alignment_dynamics.csv",
                           "alignment_summary.json"}) {
    CHECK(slurp(tmp.path / "serial" / name) == slurp(tmp.path / "fanout" / name));
  }
}

TEST_CASE("saved runs land in the runs directory when requested") {
  TmpDir tmp("minv_save_runs");
  ExperimentConfig cfg = tiny_config((tmp.path / "out").string());
  cfg.save_runs = true;
  write_measure_report(cfg, run_measure_alignment(cfg));
  std::size_t count = 0;
  for (const auto& entry : fs::directory_iterator(tmp.path / "out" / "runs")) {
    ++count;
    CHECK(entry.path().extension() == ".json");
  }
  CHECK(count == 6);
}

TEST_CASE("sub-stage failures name the stage") {
  ExperimentConfig cfg = tiny_config("unused");
  cfg.kind = "hypothesis";
  cfg.betas = {0.0};
  cfg.eval_floor = 1.01;  // unreachable: the eval gate must fail
  try {
    run_hypothesis(cfg);
    FAIL("expected the eval gate to fail");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("stage eval-model") != std::string::npos);
  }
}

TEST_CASE("the cli maps failures to documented exit codes") {
  TmpDir tmp("minv_cli_codes");
  const fs::path cfg_path = tmp.path / "cfg.json";
  ExperimentConfig cfg = tiny_config((tmp.path / "out").string());
  write_file(cfg_path, experiment_config_to_json(cfg).dump());

  CHECK(run_cli("") != 0);
  CHECK(run_cli("measure-alignment --config " + (tmp.path / "absent.json").string()) == 4);

  const fs::path broken = tmp.path / "broken.json";
  write_file(broken, "{\"kind\":");
  CHECK(run_cli("measure-alignment --config " + broken.string()) == 2);

  const fs::path unknown = tmp.path / "unknown.json";
  nlohmann::json doc = experiment_config_to_json(cfg);
  doc["mystery"] = 1;
  write_file(unknown, doc.dump());
  CHECK(run_cli("measure-alignment --config " + unknown.string()) == 2);

  // no checkpoint and no --train-from-scratch: a missing artifact
  CHECK(run_cli("measure-alignment --config " + cfg_path.string()) == 4);
  // report before anything exists
  CHECK(run_cli("report --config " + cfg_path.string()) == 4);
  // config kind / subcommand mismatch
  CHECK(run_cli("hypothesis --config " + cfg_path.string()) == 2);
}

TEST_CASE("the cli pipeline trains, measures, reports and reruns identically") {
  TmpDir tmp("minv_cli_pipeline");
  ExperimentConfig cfg = tiny_config((tmp.path / "out").string());
  const fs::path cfg_path = tmp.path / "cfg.json";
  write_file(cfg_path, experiment_config_to_json(cfg).dump());

  CHECK(run_cli("measure-alignment --config " + cfg_path.string() + " --train-from-scratch") ==
        0);
  CHECK(fs::exists(tmp.path / "out" / "target.json"));
  CHECK(fs::exists(tmp.path / "out" / "alignment_summary.json"));
  // second invocation picks the checkpoint up without the flag
  CHECK(run_cli("measure-alignment --config " + cfg_path.string()) == 0);
  CHECK(run_cli("report --config " + cfg_path.string()) == 0);

  const std::string first = slurp(tmp.path / "out" / "alignment_scores.csv");
  CHECK(run_cli("measure-alignment --config " + cfg_path.string()) == 0);
  CHECK(slurp(tmp.path / "out" / "alignment_scores.csv") == first);

  // --set overrides change the artifact hash
  CHECK(run_cli("measure-alignment --config " + cfg_path.string() +
                " --set inversion.steps=4 --output " + (tmp.path / "out2").string() +
                " --train-from-scratch") == 0);
  const std::string a = slurp(tmp.path / "out" / "alignment_summary.json");
  const std::string b = slurp(tmp.path / "out2" / "alignment_summary.json");
  CHECK(nlohmann::json::parse(a).at("config_hash") != nlohmann::json::parse(b).at("config_hash"));
}

TEST_CASE("the hypothesis and alignmi pipelines emit their tables") {
  TmpDir tmp("minv_cli_sweeps");
  ExperimentConfig cfg = tiny_config((tmp.path / "hypo").string());
  cfg.kind = "hypothesis";
  cfg.betas = {0.0, 0.5};
  cfg.benchmark_seeds = {1};
  cfg.train.epochs = 6;
  const fs::path hypo_cfg = tmp.path / "hypo.json";
  write_file(hypo_cfg, experiment_config_to_json(cfg).dump());
  CHECK(run_cli("hypothesis --config " + hypo_cfg.string()) == 0);

  const std::string table = slurp(tmp.path / "hypo" / "hypothesis_table.csv");
  CHECK(table.find("seed,model,as_tr,test_acc,acc1,knn_dist") != std::string::npos);
  CHECK(table.find("vanilla") != std::string::npos);
  CHECK(table.find("beta-0.5") != std::string::npos);

  const nlohmann::json summary =
      nlohmann::json::parse(slurp(tmp.path / "hypo" / "hypothesis_summary.json"));
  REQUIRE(summary.at("rows").size() == 3);  // vanilla, beta-0, beta-0.5
  // the beta-0 sweep member must duplicate the vanilla row exactly
  double vanilla_as = -1.0, beta0_as = -2.0, vanilla_acc = -1.0, beta0_acc = -2.0;
  for (const auto& row : summary.at("rows")) {
    if (row.at("model") == "vanilla") {
      vanilla_as = row.at("as_tr").get<double>();
      vanilla_acc = row.at("test_acc").get<double>();
    }
    if (row.at("model") == "beta-0") {
      beta0_as = row.at("as_tr").get<double>();
      beta0_acc = row.at("test_acc").get<double>();
    }
  }
  CHECK(vanilla_as == beta0_as);
  CHECK(vanilla_acc == beta0_acc);

  ExperimentConfig acfg = tiny_config((tmp.path / "alignmi").string());
  acfg.kind = "alignmi-eval";
  acfg.benchmark_seeds = {1};
  acfg.inversion.steps = 4;
  acfg.inversion.track_every = 2;
  acfg.inversion.k_samples = 2;
  acfg.runs_per_class = 1;
  const fs::path alignmi_cfg = tmp.path / "alignmi.json";
  write_file(alignmi_cfg, experiment_config_to_json(acfg).dump());
  CHECK(run_cli("alignmi-eval --config " + alignmi_cfg.string()) == 0);

  const std::string atable = slurp(tmp.path / "alignmi" / "alignmi_table.csv");
  CHECK(atable.find("seed,method,acc1,acc5,knn_dist,final_as_median") != std::string::npos);
  for (const char* method : {"none", "paa", "taa"}) {
    CHECK(atable.find(method) != std::string::npos);
  }
  const std::string ratios = slurp(tmp.path / "alignmi" / "runtime_ratio.csv");
  CHECK(ratios.find("method,ratio,k_samples") != std::string::npos);
  CHECK(run_cli("report --config " + alignmi_cfg.string()) == 0);
}

TEST_CASE("kind presets validate, round-trip and match the shipped configs") {
  CHECK_THROWS_AS(default_experiment_config("unknown-kind"), ConfigError);

  const std::pair<const char*, const char*> shipped[] = {
      {"measure-alignment", "measure_alignment.json"},
      {"hypothesis", "hypothesis.json"},
      {"alignmi-eval", "alignmi_eval.json"},
  };
  for (const auto& [kind, file] : shipped) {
    const ExperimentConfig preset = default_experiment_config(kind);
    CHECK(preset.kind == kind);

    // canonical JSON round trip preserves the full numeric identity
    const ExperimentConfig back =
        experiment_config_from_json(experiment_config_to_json(preset));
    CHECK(experiment_config_to_json(back) == experiment_config_to_json(preset));

    // the checked-in example config is the preset, modulo execution-only
    // fields (output_dir and friends are excluded from the hash)
    const fs::path path = fs::path(MINV_CONFIG_DIR) / file;
    REQUIRE(fs::exists(path));
    const ExperimentConfig loaded = load_experiment_config(path.string());
    CHECK(config_hash(loaded) == config_hash(preset));
    CHECK(loaded.kind == preset.kind);
  }
}
