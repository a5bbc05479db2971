#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "minv/models.hpp"
#include "minv/rng.hpp"
#include "minv/tensor.hpp"

namespace minv {

// Stamped into every serialized artifact alongside the config hash.
inline constexpr const char* kArtifactVersion = "1.0.0";

enum class Smoothing { kNone, kPaa, kTaa };

const char* smoothing_name(Smoothing s);
Smoothing smoothing_from_name(const std::string& name);

// Semantics-preserving grid transforms used by the transformation-averaged
// gradient.  A draw composes: horizontal flip (w.p. flip_prob), an integer
// translation sampled uniformly from {-1,0,1}^2 with zero padding (when
// translate is set), and a corner crop to (g-1)x(g-1) followed by bilinear
// resize back to g x g (w.p. crop_prob).  All probabilities zero and
// translate off means every draw is the identity.
struct TransformSet {
  double flip_prob = 0.5;
  bool translate = true;
  double crop_prob = 0.25;
  bool identity_only() const { return flip_prob <= 0.0 && !translate && crop_prob <= 0.0; }
};

// Grid primitives (x is a flattened g x g image, row-major).
Tensor grid_hflip(const Tensor& x, std::size_t g);
Tensor grid_translate(const Tensor& x, std::size_t g, int dr, int dc);
Tensor grid_crop_resize(const Tensor& x, std::size_t g, std::size_t r0, std::size_t c0);

struct InversionConfig {
  std::size_t steps = 60;                  // T
  double eta = 0.3;                        // latent step size
  double lambda = 0.01;                    // latent prior weight
  LossKind loss = LossKind::kLogit;
  Smoothing smoothing = Smoothing::kNone;
  std::size_t k_samples = 50;              // K, gradient samples per step
  double alpha = 0.05;                     // PAA noise as a fraction of range
  TransformSet transforms;                 // TAA draw distribution
  std::size_t track_every = 1;             // alignment tracking cadence
  std::uint64_t seed = 1;
  bool adam = false;                       // adaptive latent updates (off keeps
                                           // the plain z <- z - eta * grad form)
};

struct StepRecord {
  std::size_t step = 0;     // 0-based, state before the step's update
  Tensor z;
  double loss = 0.0;        // class term + lambda * 0.5 ||z||^2
  double confidence = 0.0;  // softmax probability of the target class
  bool has_as = false;      // tracked this step and the tangent was usable
  double as_inv = 0.0;      // alignment of the ambient class gradient the
                            // step used (the smoothed one under PAA/TAA)
};

struct InversionRun {
  std::size_t target = 0;   // classifier output index
  InversionConfig cfg;
  std::vector<StepRecord> records;  // one per step
  Tensor final_z;
  Tensor final_x;
};

// Inversion objective: class_loss(c, G(z), y) + lambda * 0.5||z||^2.
double inversion_loss(const Tensor& z, std::size_t y, const Classifier& c, const Generator& g,
                      double lambda, LossKind kind);
// Its gradient with respect to z, taken by differentiating straight through
// generator and classifier in one graph.  The attack loop never calls this;
// it exists as the reference the pulled-back update is checked against.
Tensor inversion_loss_latent_gradient(const Tensor& z, std::size_t y, const Classifier& c,
                                      const Generator& g, double lambda, LossKind kind);

using GradFn = std::function<Tensor(const Tensor&)>;

// Mean of grad(x + eps) over K draws, eps ~ N(0, sigma^2 I) with
// sigma = alpha * (max(x) - min(x)).  alpha = 0 or a constant x short-circuits
// to one exact evaluation of grad(x) (the zero-range case is logged).
Tensor paa_gradient(const Tensor& x, const GradFn& grad, std::size_t k, double alpha, Rng& rng);

// Mean of grad(tau(x)) over K draws of tau from the transform set; gradients
// are evaluated at the transformed inputs and not pulled back through tau.
// An identity-only set short-circuits to one exact evaluation of grad(x).
Tensor taa_gradient(const Tensor& x, const GradFn& grad, std::size_t k, const TransformSet& set,
                    std::size_t grid, Rng& rng);

// Latent-space attack: z starts from a seed-derived standard normal and for T
// steps follows z <- z - eta * (J_G^T gtilde + lambda z), where gtilde is the
// (optionally smoothed) ambient class gradient at x = G(z).  Per step it
// records z, the objective, the target confidence and — every track_every
// steps — the alignment of gtilde with the tangent space at x (skipped with
// has_as = false where the tangent is rank-deficient or the gradient
// vanishes).  Non-finite values abort with an error naming the step.
InversionRun invert(const Classifier& c, const Generator& g, std::size_t y,
                    const InversionConfig& cfg);

// Step-indexed aggregation across runs: mean confidence over all runs that
// reached the step, mean AS over those with a tracked value there.
struct DynamicsPoint {
  std::size_t step = 0;
  double mean_as = 0.0;  // NaN when no run tracked alignment at this step
  double mean_conf = 0.0;
  std::size_t as_count = 0;
};
std::vector<DynamicsPoint> alignment_dynamics(const std::vector<InversionRun>& runs);

// Mean tracked alignment over a whole run; NaN when nothing was tracked.
double run_mean_alignment(const InversionRun& run);

nlohmann::json inversion_run_to_json(const InversionRun& run, const std::string& config_hash);
void save_inversion_run(const InversionRun& run, const std::string& config_hash,
                        const std::string& path);

// One aggregate row per attack run, written as CSV by the experiment drivers.
struct AttackRow {
  std::size_t target = 0;
  std::uint64_t seed = 0;
  double final_confidence = 0.0;
  double final_loss = 0.0;
  double mean_as_inv = 0.0;
};
void write_attack_csv(const std::vector<AttackRow>& rows, const std::string& path);

}  // namespace minv
