#pragma once

// Attack-success scoring: top-k accuracy under a held-out evaluation
// classifier, nearest-neighbour feature distance against the private set,
// and summary statistics of tracked alignment scores.

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "minv/dataset.hpp"
#include "minv/inversion.hpp"
#include "minv/models.hpp"
#include "minv/tensor.hpp"

namespace minv {

// Scoring model held out from the attack: same task as the target but a
// different seed/width. It may only be used once its measured accuracy
// clears the floor, so that feature distances and top-k rates mean something.
struct EvalModel {
  Classifier net;
  std::size_t feature_layer = 0;  // layers evaluated to produce features
  double measured_accuracy = 0.0;
  double accuracy_floor = 0.9;
};

// Measures `net` on `heldout` and gates on the floor.
// Throws ConfigError when the accuracy is below the floor or the layer index
// is out of range.
EvalModel make_eval_model(const Classifier& net, const ManifoldDataset& heldout,
                          std::size_t feature_layer, double accuracy_floor = 0.9);

// Penultimate-layer embedding (first `feature_layer` layers of the net).
Tensor eval_features(const EvalModel& eval, const Tensor& x);

// A reconstruction and the class it was aimed at.
struct Recon {
  Tensor x;
  std::size_t label = 0;
};

struct Accuracy {
  double acc1 = 0.0;
  double acc5 = 0.0;  // top-min(5, C)
};

// Fraction of recons whose target class is the argmax / among the top
// min(5, C) logits of the eval model. Throws ConfigError on an empty set or
// an eval model below its floor.
Accuracy attack_accuracy(const std::vector<Recon>& recons, const EvalModel& eval);

// Mean over recons of the minimum feature-space L2 distance to private
// samples of the targeted class. Throws ConfigError when a targeted class has
// no private samples.
double knn_distance(const std::vector<Recon>& recons, const ManifoldDataset& priv,
                    const EvalModel& eval);

inline constexpr std::size_t kHistogramBins = 20;

// Summary of a sample of alignment scores in [0, 1].
struct AsSummary {
  double mean = 0.0;
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  std::size_t count = 0;
  std::vector<std::size_t> histogram;  // kHistogramBins uniform bins over [0,1]
};

AsSummary summarize_scores(const std::vector<double>& scores);

// Pools every tracked score across the runs. Throws DegenerateError when no
// run carries a tracked value.
AsSummary as_distribution(const std::vector<InversionRun>& runs);

// Raw scores as a one-column CSV (header "as_inv"), full precision.
void write_scores_csv(const std::vector<double>& scores, const std::string& path);
std::vector<double> read_scores_csv(const std::string& path);

// Histogram as (bin_left, count) rows.
void write_histogram_csv(const AsSummary& summary, const std::string& path);

struct ClassReport {
  std::size_t label = 0;
  std::size_t count = 0;
  double acc1 = 0.0;
  double acc5 = 0.0;
  double knn = 0.0;
};

struct AttackReport {
  Accuracy accuracy;
  double knn_dist = 0.0;
  std::vector<ClassReport> per_class;  // sorted by label
  AsSummary as_inv;
};

// Scores a full attack: accuracy + feature distance per class and pooled,
// plus the distribution of tracked alignment scores.
AttackReport make_attack_report(const std::vector<Recon>& recons, const ManifoldDataset& priv,
                                const EvalModel& eval, const std::vector<InversionRun>& runs);

nlohmann::json attack_report_to_json(const AttackReport& report);
void save_attack_report(const AttackReport& report, const std::string& config_hash,
                        const std::string& path);
void write_per_class_csv(const AttackReport& report, const std::string& path);

}  // namespace minv
