#pragma once

#include <cstdint>
#include <string>

#include "minv/autodiff.hpp"
#include "minv/diffmap.hpp"
#include "minv/tensor.hpp"

namespace minv {

enum class LossKind { kCrossEntropy, kLogit };

const char* loss_kind_name(LossKind k);
LossKind loss_kind_from_name(const std::string& name);

// A classifier is an MLP producing one logit per class.
struct Classifier {
  Mlp net;
  std::size_t num_classes() const { return net.output_dim(); }
  std::size_t input_dim() const { return net.input_dim(); }
};

enum class GeneratorKind { kOracleAnalytic, kLearnedDecoder };

// Latent-to-ambient map whose image is the data manifold (oracle) or an
// approximation of it (learned decoder).  Construction validates that the
// Jacobian has full column rank at a sample of latent points.
struct Generator {
  GeneratorKind kind = GeneratorKind::kOracleAnalytic;
  Mlp net;
  std::size_t latent_dim() const { return net.input_dim(); }
  std::size_t ambient_dim() const { return net.output_dim(); }
};

Generator make_generator(GeneratorKind kind, Mlp net, std::uint64_t check_seed,
                         std::size_t check_points = 100);

// Fixed random 2-layer tanh map R^k -> R^d for a g x g grid (d = g^2).
// The output layer mixes low-frequency, horizontally mirror-symmetric cosine
// modes, so samples look like smooth images and the manifold is (exactly)
// closed under horizontal flips — the property that makes augmented attacks
// meaningful at this scale.
struct OracleConfig {
  std::size_t latent_dim = 4;
  std::size_t ambient_dim = 64;  // must be a perfect square
  std::size_t hidden = 32;
  std::uint64_t seed = 7;
  double input_scale = 0.9;   // first-layer weight scale (pre-sqrt(fan-in))
  double output_gain = 1.5;   // norm of each mixed output column, pre-1/sqrt(h)
};

Generator make_oracle_generator(const OracleConfig& cfg);

Tensor sample_generator(const Generator& g, const Tensor& z);

// Graph builders shared by training and inversion.
ad::Var logits_graph(const Classifier& c, const ad::Var& x);
ad::Var class_loss_from_logits(const ad::Var& logits, std::size_t label, LossKind kind);

// Scalar loss of x under the target label.
double class_loss(const Classifier& c, const Tensor& x, std::size_t label, LossKind kind);
// d(loss)/dx.
Tensor class_loss_input_gradient(const Classifier& c, const Tensor& x, std::size_t label,
                                 LossKind kind);
// Row i is the input gradient of logit i: a [C, d] matrix.
Tensor input_gradients(const Classifier& c, const Tensor& x);
Tensor softmax_probs(const Classifier& c, const Tensor& x);

// The loss gradient written as a weighted sum of per-logit input gradients:
// cross-entropy weights are softmax(f) - e_y, logit-loss weights are -e_y.
struct LossDecomposition {
  Tensor weights;        // [C]
  Tensor reconstructed;  // [d] = sum_i weights[i] * input_gradients(i)
};
LossDecomposition decompose_loss_gradient(const Classifier& c, const Tensor& x,
                                          std::size_t label, LossKind kind);

}  // namespace minv
