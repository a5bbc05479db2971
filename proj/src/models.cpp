#include "minv/models.hpp"

#include <cmath>
#include <vector>

#include "minv/errors.hpp"
#include "minv/projector.hpp"
#include "minv/rng.hpp"
#include "minv/svd.hpp"

namespace minv {

const char* loss_kind_name(LossKind k) {
  return k == LossKind::kCrossEntropy ? "cross-entropy" : "logit";
}

LossKind loss_kind_from_name(const std::string& name) {
  if (name == "cross-entropy" || name == "ce") return LossKind::kCrossEntropy;
  if (name == "logit") return LossKind::kLogit;
  throw ConfigError("unknown loss kind '" + name + "'");
}

Generator make_generator(GeneratorKind kind, Mlp net, std::uint64_t check_seed,
                         std::size_t check_points) {
  Generator g;
  g.kind = kind;
  g.net = std::move(net);
  const std::size_t k = g.latent_dim(), d = g.ambient_dim();
  if (k == 0 || d < k) throw ConfigError("generator needs ambient dim >= latent dim >= 1");
  Rng rng(check_seed);
  for (std::size_t t = 0; t < check_points; ++t) {
    const Tensor z = rng.gaussian_vector(k);
    const ThinSvd s = thin_svd(g.net.jacobian(z));
    if (s.sigma[0] == 0.0 || s.sigma[k - 1] <= kRankRelTol * s.sigma[0]) {
      throw DegenerateError("generator jacobian is rank-deficient at a sampled latent (check " +
                            std::to_string(t) + ")");
    }
  }
  return g;
}

namespace {

// Low-frequency cosine mode on a g x g grid.  Horizontal (j) frequencies are
// even, and the image is built by mirroring the left half bitwise, so every
// mode — hence every generator output — is exactly flip-symmetric.
Tensor cosine_mode(std::size_t g, std::size_t p, std::size_t q) {
  Tensor img({g * g});
  for (std::size_t i = 0; i < g; ++i) {
    for (std::size_t j = 0; j < (g + 1) / 2; ++j) {
      const double vi = std::cos(M_PI * double(p) * (double(i) + 0.5) / double(g));
      const double vj = std::cos(M_PI * double(q) * (double(j) + 0.5) / double(g));
      const double v = vi * vj;
      img[i * g + j] = v;
      img[i * g + (g - 1 - j)] = v;
    }
  }
  const double n = img.norm();
  for (double& v : img.data()) v /= n;
  return img;
}

}  // namespace

Generator make_oracle_generator(const OracleConfig& cfg) {
  const std::size_t k = cfg.latent_dim, d = cfg.ambient_dim, h = cfg.hidden;
  const auto g = static_cast<std::size_t>(std::lround(std::sqrt(double(d))));
  if (g * g != d) throw ConfigError("oracle ambient dim must be a perfect square grid");
  if (k == 0 || h == 0) throw ConfigError("oracle dims must be positive");

  Rng rng(cfg.seed);
  Tensor w1 = rng.gaussian_matrix(h, k, cfg.input_scale / std::sqrt(double(k)));
  Tensor b1 = rng.gaussian_vector(h, 0.3);

  std::vector<Tensor> modes;
  for (std::size_t p = 0; p <= g / 2; ++p) {
    for (std::size_t q = 0; q <= g / 2; q += 2) {
      modes.push_back(cosine_mode(g, p, q));
    }
  }
  const double col_norm = cfg.output_gain / std::sqrt(double(h));
  Tensor w2({d, h});
  for (std::size_t c = 0; c < h; ++c) {
    Tensor col({d});
    for (const Tensor& m : modes) {
      const double a = rng.gaussian();
      for (std::size_t i = 0; i < d; ++i) col[i] += a * m[i];
    }
    const double n = col.norm();
    for (std::size_t i = 0; i < d; ++i) w2.at(i, c) = col[i] * (col_norm / n);
  }
  Tensor b2({d});
  for (const Tensor& m : modes) {
    const double a = rng.gaussian() * 0.05;
    for (std::size_t i = 0; i < d; ++i) b2[i] += a * m[i];
  }

  Mlp net({{k, h, Activation::kTanh}, {h, d, Activation::kNone}},
          {std::move(w1), std::move(w2)}, {std::move(b1), std::move(b2)});
  return make_generator(GeneratorKind::kOracleAnalytic, std::move(net), Rng::mix(cfg.seed, 0xc0de));
}

Tensor sample_generator(const Generator& g, const Tensor& z) {
  if (z.size() != g.latent_dim()) {
    throw DimensionError("sample_generator: latent " + z.shape_str() + " vs latent dim " +
                         std::to_string(g.latent_dim()));
  }
  return g.net.evaluate(z);
}

ad::Var logits_graph(const Classifier& c, const ad::Var& x) { return c.net.build(x); }

ad::Var class_loss_from_logits(const ad::Var& logits, std::size_t label, LossKind kind) {
  if (label >= logits->value.size()) {
    throw DimensionError("class label " + std::to_string(label) + " out of range for " +
                         std::to_string(logits->value.size()) + " logits");
  }
  ad::Var fy = ad::slice(logits, label, 1);
  switch (kind) {
    case LossKind::kCrossEntropy:
      // -log softmax_y = logsumexp(f) - f_y, with the max subtracted inside.
      return ad::sub(ad::logsumexp(logits), fy);
    case LossKind::kLogit:
      return ad::neg(fy);
  }
  throw ConfigError("unknown loss kind");
}

double class_loss(const Classifier& c, const Tensor& x, std::size_t label, LossKind kind) {
  return class_loss_from_logits(logits_graph(c, ad::leaf(x)), label, kind)->value[0];
}

Tensor class_loss_input_gradient(const Classifier& c, const Tensor& x, std::size_t label,
                                 LossKind kind) {
  ad::Var in = ad::leaf(x);
  ad::Var loss = class_loss_from_logits(logits_graph(c, in), label, kind);
  ad::AdjointMap adj = ad::backprop(loss, ad::leaf(Tensor::scalar(1.0)));
  return ad::adjoint_value(adj, in);
}

Tensor input_gradients(const Classifier& c, const Tensor& x) { return c.net.jacobian(x); }

Tensor softmax_probs(const Classifier& c, const Tensor& x) {
  return ad::softmax(logits_graph(c, ad::leaf(x)))->value;
}

LossDecomposition decompose_loss_gradient(const Classifier& c, const Tensor& x,
                                          std::size_t label, LossKind kind) {
  const std::size_t classes = c.num_classes();
  if (label >= classes) {
    throw DimensionError("class label " + std::to_string(label) + " out of range for " +
                         std::to_string(classes) + " classes");
  }
  LossDecomposition out;
  switch (kind) {
    case LossKind::kCrossEntropy: {
      out.weights = softmax_probs(c, x);
      out.weights[label] -= 1.0;
      break;
    }
    case LossKind::kLogit: {
      out.weights = Tensor({classes});
      out.weights[label] = -1.0;
      break;
    }
  }
  const Tensor ig = input_gradients(c, x);  // [C, d]
  out.reconstructed = matmul(transpose(ig), out.weights);
  return out;
}

}  // namespace minv
