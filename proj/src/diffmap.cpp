#include "minv/diffmap.hpp"

#include <cmath>
#include <fstream>

#include "minv/errors.hpp"

namespace minv {

Tensor DiffMap::evaluate(const Tensor& input) const {
  if (input.size() != input_dim()) {
    throw DimensionError("evaluate: input " + input.shape_str() + " does not match input_dim " +
                         std::to_string(input_dim()));
  }
  return build(ad::leaf(input))->value;
}

Tensor DiffMap::gradient(const Tensor& input, const Tensor& seed) const {
  ad::Var in = ad::leaf(input);
  ad::Var out = build(in);
  if (!seed.same_shape(out->value)) {
    throw DimensionError("gradient: seed " + seed.shape_str() + " does not match output " +
                         out->value.shape_str());
  }
  ad::AdjointMap adj = ad::backprop(out, ad::leaf(seed));
  return ad::adjoint_value(adj, in);
}

Tensor DiffMap::jacobian(const Tensor& input) const {
  const std::size_t m = output_dim(), n = input_dim();
  if (m * n > kJacobianEntryCeiling) {
    throw CapacityError("jacobian: " + std::to_string(m) + "x" + std::to_string(n) +
                        " exceeds the dense entry ceiling of " +
                        std::to_string(kJacobianEntryCeiling));
  }
  ad::Var in = ad::leaf(input);
  ad::Var out = build(in);
  Tensor jac({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    Tensor seed(out->value.shape());
    seed[i] = 1.0;
    ad::AdjointMap adj = ad::backprop(out, ad::leaf(seed));
    const Tensor row = ad::adjoint_value(adj, in);
    for (std::size_t j = 0; j < n; ++j) jac.at(i, j) = row[j];
  }
  return jac;
}

double grad_check(const DiffMap& map, const Tensor& input, double step) {
  const Tensor jac = map.jacobian(input);
  const std::size_t m = map.output_dim(), n = map.input_dim();
  Tensor fd({m, n});
  Tensor xp = input, xm = input;
  for (std::size_t j = 0; j < n; ++j) {
    const double saved = input[j];
    xp[j] = saved + step;
    xm[j] = saved - step;
    const Tensor fp = map.evaluate(xp);
    const Tensor fm = map.evaluate(xm);
    for (std::size_t i = 0; i < m; ++i) fd.at(i, j) = (fp[i] - fm[i]) / (2.0 * step);
    xp[j] = saved;
    xm[j] = saved;
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double diff2 = 0.0, ref2 = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = jac.at(i, j) - fd.at(i, j);
      diff2 += d * d;
      ref2 += fd.at(i, j) * fd.at(i, j);
    }
    const double rel = std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-300);
    worst = std::max(worst, rel);
  }
  return worst;
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kNone: return "none";
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
  }
  return "?";
}

Activation activation_from_name(const std::string& name) {
  if (name == "none") return Activation::kNone;
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation '" + name + "'");
}

Mlp Mlp::identity(std::size_t dim) {
  Mlp m;
  m.io_dim_ = dim;
  return m;
}

Mlp::Mlp(std::vector<LayerSpec> specs, Rng& rng, double weight_scale) : specs_(std::move(specs)) {
  for (std::size_t l = 0; l < specs_.size(); ++l) {
    const LayerSpec& s = specs_[l];
    if (s.in == 0 || s.out == 0) throw ConfigError("layer dims must be positive");
    if (l > 0 && specs_[l - 1].out != s.in) {
      throw ConfigError("layer " + std::to_string(l) + " input dim " + std::to_string(s.in) +
                        " does not match previous output " + std::to_string(specs_[l - 1].out));
    }
    weights_.push_back(rng.gaussian_matrix(s.out, s.in, weight_scale / std::sqrt(double(s.in))));
    biases_.push_back(Tensor({s.out}));
  }
}

Mlp::Mlp(std::vector<LayerSpec> specs, std::vector<Tensor> weights, std::vector<Tensor> biases)
    : specs_(std::move(specs)), weights_(std::move(weights)), biases_(std::move(biases)) {
  if (weights_.size() != specs_.size() || biases_.size() != specs_.size()) {
    throw ConfigError("weights/biases count does not match layer specs");
  }
  for (std::size_t l = 0; l < specs_.size(); ++l) {
    const LayerSpec& s = specs_[l];
    if (weights_[l].rank() != 2 || weights_[l].rows() != s.out || weights_[l].cols() != s.in ||
        biases_[l].size() != s.out) {
      throw DimensionError("layer " + std::to_string(l) + " parameter shapes do not match spec");
    }
  }
}

std::size_t Mlp::input_dim() const { return specs_.empty() ? io_dim_ : specs_.front().in; }
std::size_t Mlp::output_dim() const { return specs_.empty() ? io_dim_ : specs_.back().out; }

namespace {
ad::Var apply_activation(const ad::Var& h, Activation act) {
  switch (act) {
    case Activation::kNone: return h;
    case Activation::kTanh: return ad::tanh(h);
    case Activation::kRelu: return ad::relu(h);
  }
  return h;
}
}  // namespace

ad::Var Mlp::build(const ad::Var& input) const {
  ad::Var h = input;
  for (std::size_t l = 0; l < specs_.size(); ++l) {
    h = apply_activation(ad::add(ad::matmul(ad::leaf(weights_[l]), h), ad::leaf(biases_[l])),
                         specs_[l].act);
  }
  return h;
}

ad::Var Mlp::build_trainable(const ad::Var& input, std::vector<ad::Var>& param_leaves) const {
  param_leaves.clear();
  ad::Var h = input;
  for (std::size_t l = 0; l < specs_.size(); ++l) {
    ad::Var w = ad::leaf(weights_[l]);
    ad::Var b = ad::leaf(biases_[l]);
    param_leaves.push_back(w);
    param_leaves.push_back(b);
    h = apply_activation(ad::add(ad::matmul(w, h), b), specs_[l].act);
  }
  return h;
}

Tensor Mlp::forward_prefix(const Tensor& input, std::size_t layers) const {
  if (layers > specs_.size()) throw DimensionError("forward_prefix: layer index out of range");
  Tensor h = input;
  for (std::size_t l = 0; l < layers; ++l) {
    Tensor z = matmul(weights_[l], h);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += biases_[l][i];
    switch (specs_[l].act) {
      case Activation::kNone: break;
      case Activation::kTanh:
        for (double& v : z.data()) v = std::tanh(v);
        break;
      case Activation::kRelu:
        for (double& v : z.data()) v = v > 0.0 ? v : 0.0;
        break;
    }
    h = std::move(z);
  }
  return h;
}

Tensor& Mlp::param(std::size_t i) {
  return i % 2 == 0 ? weights_[i / 2] : biases_[i / 2];
}
const Tensor& Mlp::param(std::size_t i) const {
  return i % 2 == 0 ? weights_[i / 2] : biases_[i / 2];
}

std::size_t Mlp::total_param_scalars() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < param_count(); ++i) n += param(i).size();
  return n;
}

nlohmann::json Mlp::to_json() const {
  nlohmann::json arch = nlohmann::json::array();
  for (const LayerSpec& s : specs_) {
    arch.push_back({{"in", s.in}, {"out", s.out}, {"act", activation_name(s.act)}});
  }
  nlohmann::json params = nlohmann::json::object();
  for (std::size_t l = 0; l < specs_.size(); ++l) {
    params["w" + std::to_string(l)] = {{"shape", weights_[l].shape()},
                                       {"data", weights_[l].data()}};
    params["b" + std::to_string(l)] = {{"shape", biases_[l].shape()}, {"data", biases_[l].data()}};
  }
  return {{"arch", arch}, {"input_dim", input_dim()}, {"params", params}};
}

namespace {
Tensor tensor_from_json(const nlohmann::json& j) {
  if (!j.contains("shape")) throw ParseError("checkpoint tensor missing field 'shape'");
  if (!j.contains("data")) throw ParseError("checkpoint tensor missing field 'data'");
  return Tensor(j.at("shape").get<std::vector<std::size_t>>(),
                j.at("data").get<std::vector<double>>());
}
}  // namespace

Mlp Mlp::from_json(const nlohmann::json& j) {
  if (!j.contains("arch")) throw ParseError("checkpoint missing field 'arch'");
  if (!j.contains("params")) throw ParseError("checkpoint missing field 'params'");
  std::vector<LayerSpec> specs;
  for (const auto& layer : j.at("arch")) {
    specs.push_back({layer.at("in").get<std::size_t>(), layer.at("out").get<std::size_t>(),
                     activation_from_name(layer.at("act").get<std::string>())});
  }
  if (specs.empty()) {
    if (!j.contains("input_dim")) throw ParseError("checkpoint missing field 'input_dim'");
    return identity(j.at("input_dim").get<std::size_t>());
  }
  std::vector<Tensor> ws, bs;
  const auto& params = j.at("params");
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const std::string wk = "w" + std::to_string(l), bk = "b" + std::to_string(l);
    if (!params.contains(wk)) throw ParseError("checkpoint missing field 'params." + wk + "'");
    if (!params.contains(bk)) throw ParseError("checkpoint missing field 'params." + bk + "'");
    ws.push_back(tensor_from_json(params.at(wk)));
    bs.push_back(tensor_from_json(params.at(bk)));
  }
  return Mlp(std::move(specs), std::move(ws), std::move(bs));
}

void save_mlp(const Mlp& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  out << m.to_json().dump(2) << "\n";
}

Mlp load_mlp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("checkpoint not found: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("malformed checkpoint '" + path + "': " + e.what(),
                     static_cast<long long>(e.byte));
  }
  return Mlp::from_json(j);
}

}  // namespace minv
