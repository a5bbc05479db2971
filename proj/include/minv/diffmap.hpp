#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "minv/autodiff.hpp"
#include "minv/rng.hpp"
#include "minv/tensor.hpp"

namespace minv {

// A differentiable map R^in -> R^out.  Subclasses describe the forward pass
// as a graph; evaluation, vector-Jacobian products and dense Jacobians are
// derived from it.  The derived members are virtual so tests can substitute
// doubles with deliberately broken derivatives.
class DiffMap {
 public:
  virtual ~DiffMap() = default;

  virtual std::size_t input_dim() const = 0;
  virtual std::size_t output_dim() const = 0;
  virtual ad::Var build(const ad::Var& input) const = 0;

  virtual Tensor evaluate(const Tensor& input) const;
  // seed has the output's shape; returns seed^T * J with the input's shape.
  virtual Tensor gradient(const Tensor& input, const Tensor& seed) const;
  // Dense [output_dim, input_dim]; row i is bit-identical to
  // gradient(input, e_i).
  virtual Tensor jacobian(const Tensor& input) const;
};

// Dense Jacobians above this entry count are refused (CapacityError); they
// signal a misuse of this desk-scale engine rather than a real workload.
inline constexpr std::size_t kJacobianEntryCeiling = 10'000'000;

// Max over output coordinates of the relative error between the reverse-mode
// Jacobian row and its central-finite-difference estimate.
double grad_check(const DiffMap& map, const Tensor& input, double step = 1e-5);

enum class Activation { kNone, kTanh, kRelu };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct LayerSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation act = Activation::kNone;
};

// Fully-connected network; the workhorse behind classifiers, generators and
// autoencoder halves.  Zero layers degenerate to the identity map.
class Mlp : public DiffMap {
 public:
  Mlp() = default;
  static Mlp identity(std::size_t dim);
  // Random init: W ~ N(0, weight_scale/sqrt(fan_in)), b = 0.
  Mlp(std::vector<LayerSpec> specs, Rng& rng, double weight_scale = 1.0);
  Mlp(std::vector<LayerSpec> specs, std::vector<Tensor> weights, std::vector<Tensor> biases);

  std::size_t input_dim() const override;
  std::size_t output_dim() const override;
  ad::Var build(const ad::Var& input) const override;

  // Like build(), but parameters become fresh leaves reported through
  // `param_leaves` (order W0, b0, W1, b1, ...) so callers can take parameter
  // gradients.
  ad::Var build_trainable(const ad::Var& input, std::vector<ad::Var>& param_leaves) const;

  // Value-only forward through the first `layers` layers (activation applied);
  // used for feature extraction.
  Tensor forward_prefix(const Tensor& input, std::size_t layers) const;

  std::size_t layer_count() const { return specs_.size(); }
  const std::vector<LayerSpec>& specs() const { return specs_; }

  // Flat parameter view: index 2i -> W_i, 2i+1 -> b_i.
  std::size_t param_count() const { return weights_.size() + biases_.size(); }
  Tensor& param(std::size_t i);
  const Tensor& param(std::size_t i) const;
  std::size_t total_param_scalars() const;

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

 private:
  std::size_t io_dim_ = 0;  // identity-map dimension when there are no layers
  std::vector<LayerSpec> specs_;
  std::vector<Tensor> weights_;  // [out, in]
  std::vector<Tensor> biases_;   // [out]
};

void save_mlp(const Mlp& m, const std::string& path);
Mlp load_mlp(const std::string& path);

}  // namespace minv
