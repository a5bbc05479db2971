#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "minv/dataset.hpp"
#include "minv/models.hpp"
#include "minv/projector.hpp"

namespace minv {

enum class OptimizerKind { kSgdMomentum, kAdam };
enum class ProjectorSource { kOracle, kLearnedDecoder };

const char* optimizer_name(OptimizerKind k);
OptimizerKind optimizer_from_name(const std::string& name);
const char* projector_source_name(ProjectorSource s);
ProjectorSource projector_source_from_name(const std::string& name);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::kSgdMomentum;
  double lr = 0.05;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double beta = 0.0;  // alignment-penalty weight
  std::uint64_t seed = 1;
  double test_fraction = 0.25;
  ProjectorSource projector_source = ProjectorSource::kOracle;
  // Mean epoch loss above this (or non-finite) aborts with a divergence error.
  double divergence_threshold = 1e6;
};

struct EpochStats {
  std::size_t epoch = 0;      // 1-based
  double train_loss = 0.0;    // mean objective over training samples
  double train_acc = 0.0;
  double test_acc = 0.0;      // NaN when the held-out split is empty
  double as_tr_mean = 0.0;    // NaN when trained without a projector cache
};

struct TrainResult {
  Classifier model;
  std::vector<EpochStats> history;
};

// Deterministic stratified split: within each class a seed-derived shuffle,
// with the trailing fraction held out.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
Split stratified_split(const ManifoldDataset& ds, double test_fraction, std::uint64_t seed);

// Fraction of `indices` (all samples when empty) that argmax-classify to
// their label.
double classifier_accuracy(const Classifier& c, const ManifoldDataset& ds,
                           const std::vector<std::size_t>& indices = {});

// Per-sample tangent projectors, indexed like the dataset.  Entries can be
// missing where the tangent basis was degenerate.
struct ProjectorCache {
  ProjectorSource source = ProjectorSource::kOracle;
  std::vector<std::optional<Projector>> by_index;
  std::size_t skipped = 0;
  std::size_t size() const { return by_index.size(); }
};

// source == kOracle: latents are the true z and `gen` must be the oracle map;
// source == kLearnedDecoder: latents are encoder(x) and `gen` the decoder.
// Skips rank-degenerate points (logged); more than `max_skip_frac` skipped is
// an error.
ProjectorCache precompute_projectors(const ManifoldDataset& ds, const Generator& gen,
                                     const Mlp* encoder, ProjectorSource source,
                                     double max_skip_frac = 0.05);
void save_projector_cache(const ProjectorCache& cache, const std::string& path);
ProjectorCache load_projector_cache(const std::string& path);

// ||P g|| / ||g|| with g = sum_i d(logit_i)/dx: how much of the summed logit
// gradient lies in the tangent space at x.  Differentiable with respect to
// the classifier parameters (the training penalty differentiates through the
// gradient computation itself).  Zero g raises a DegenerateError.
double alignment_term(const Classifier& c, const Tensor& x, const Projector& p);
// Value plus d(term)/d(parameters), ordered like Mlp::param.
struct AlignmentTermGrads {
  double value = 0.0;
  std::vector<Tensor> param_grads;
};
AlignmentTermGrads alignment_term_param_grads(const Classifier& c, const Tensor& x,
                                              const Projector& p);

// Both sides of the gradient-sum alignment bound at x, evaluated with the
// unnormalized pushforward and the per-logit gradients rescaled to unit norm:
// lhs = -||Pt sum g_i|| / sum ||g_i||, rhs = -(1/C) sum ||Pt g_i|| / ||g_i||.
// Normalizing the summed projection by the total gradient norm (the largest
// the sum can get) is what makes lhs >= rhs a theorem for equal-norm
// gradients; dividing by the actual ||sum g_i|| instead can violate it even
// then (one in-tangent and one orthogonal unit vector already do).
// holds <=> lhs >= rhs - 1e-12.
struct BoundCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};
BoundCheck check_bound(const Classifier& c, const Tensor& x, const Projector& p);
// Shared helper; rescale=false documents how the bound can fail when the
// equal-norm hypothesis is dropped.
BoundCheck bound_sides(const std::vector<Tensor>& grads, const Projector& p, bool rescale);
inline constexpr double kBoundSlack = 1e-12;

using EpochHook = std::function<void(const Classifier&, const EpochStats&)>;

// Standard cross-entropy training (the beta = 0 special case of the aligned
// objective; both run the same code path, so equal configs give bitwise-equal
// trajectories).
TrainResult train_classifier(const Classifier& init, const ManifoldDataset& ds,
                             const TrainConfig& cfg, const EpochHook& hook = {});

// Cross-entropy minus beta times the alignment term, which is pushed *up*.
TrainResult train_aligned(const Classifier& init, const ManifoldDataset& ds,
                          const ProjectorCache& cache, const TrainConfig& cfg,
                          const EpochHook& hook = {});

struct AlignmentMeasurement {
  std::vector<double> values;
  std::size_t skipped = 0;
  double mean = 0.0;
};
AlignmentMeasurement measure_AS_tr(const Classifier& c, const ManifoldDataset& ds,
                                   const ProjectorCache& cache);

// Autoencoder with a bottleneck of `bottleneck` units; the decoder half
// becomes a learned generator.
struct DecoderConfig {
  DecoderConfig() {
    train.optimizer = OptimizerKind::kAdam;
    train.lr = 0.005;
    train.weight_decay = 0.0;
    train.epochs = 200;
    train.batch_size = 32;
  }
  std::size_t hidden = 32;
  TrainConfig train;  // optimizer settings; beta/test_fraction ignored
  double heldout_fraction = 0.1;
  double mse_threshold = 1e-3;          // held-out mean squared error per entry
  double max_rank_deficient_frac = 0.01;
};
struct DecoderResult {
  Generator decoder;
  Mlp encoder;
  double heldout_mse = 0.0;
  std::vector<std::pair<std::size_t, double>> epoch_mse;  // (epoch, train mse)
};
DecoderResult train_decoder(const ManifoldDataset& ds, std::size_t bottleneck,
                            const DecoderConfig& cfg);

}  // namespace minv
