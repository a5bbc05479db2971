#include "minv/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "minv/errors.hpp"

namespace minv {

namespace {
namespace ad = minv::ad;

constexpr std::uint64_t kSplitTag = 0x517a;
constexpr std::uint64_t kBatchTag = 0xba7c4;
constexpr std::uint64_t kAeInitTag = 0xae00;
constexpr std::uint64_t kAeSplitTag = 0xae1d;
constexpr std::uint64_t kAeBatchTag = 0xae2b;
constexpr std::uint64_t kDecoderCheckTag = 0xdec0de;

const double kNan = std::numeric_limits<double>::quiet_NaN();

// Per-sample class index (position of the global label within ds.class_ids).
std::vector<std::size_t> label_indices(const ManifoldDataset& ds, std::size_t num_classes) {
  if (ds.class_ids.size() != num_classes) {
    throw ConfigError("classifier has " + std::to_string(num_classes) +
                      " outputs but the dataset carries " + std::to_string(ds.class_ids.size()) +
                      " classes");
  }
  std::unordered_map<std::size_t, std::size_t> pos;
  for (std::size_t i = 0; i < ds.class_ids.size(); ++i) pos[ds.class_ids[i]] = i;
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto it = pos.find(ds.labels[i]);
    if (it == pos.end()) {
      throw ConfigError("sample " + std::to_string(i) + " carries label " +
                        std::to_string(ds.labels[i]) + " which is not among the dataset classes");
    }
    idx[i] = it->second;
  }
  return idx;
}

std::size_t argmax(const Tensor& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

// SGD-with-momentum / Adam over the flat parameter list of an Mlp.  State
// tensors are allocated on the first step.
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}

  void step(Mlp& net, const std::vector<Tensor>& grads) {
    if (grads.size() != net.param_count()) {
      throw DimensionError("optimizer got " + std::to_string(grads.size()) +
                           " gradients for " + std::to_string(net.param_count()) + " parameters");
    }
    if (slot1_.empty()) {
      for (std::size_t i = 0; i < grads.size(); ++i) {
        slot1_.push_back(Tensor::zeros(grads[i].shape()));
        slot2_.push_back(Tensor::zeros(grads[i].shape()));
      }
    }
    ++t_;
    const double b1c = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_));
    const double b2c = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
      Tensor& w = net.param(i);
      for (std::size_t e = 0; e < w.size(); ++e) {
        const double g = grads[i][e] + cfg_.weight_decay * w[e];
        if (cfg_.optimizer == OptimizerKind::kSgdMomentum) {
          slot1_[i][e] = cfg_.momentum * slot1_[i][e] + g;
          w[e] -= cfg_.lr * slot1_[i][e];
        } else {
          slot1_[i][e] = cfg_.adam_beta1 * slot1_[i][e] + (1.0 - cfg_.adam_beta1) * g;
          slot2_[i][e] = cfg_.adam_beta2 * slot2_[i][e] + (1.0 - cfg_.adam_beta2) * g * g;
          const double mh = slot1_[i][e] / b1c;
          const double vh = slot2_[i][e] / b2c;
          w[e] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.adam_eps);
        }
      }
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<Tensor> slot1_;  // momentum velocity / Adam first moment
  std::vector<Tensor> slot2_;  // Adam second moment
  std::size_t t_ = 0;
};

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (!std::isfinite(cfg.lr) || cfg.lr < 0.0) {
    throw ConfigError("learning rate must be finite and non-negative");
  }
  if (cfg.test_fraction < 0.0 || cfg.test_fraction > 1.0) {
    throw ConfigError("test fraction must lie in [0, 1]");
  }
  if (!std::isfinite(cfg.beta)) throw ConfigError("beta must be finite");
}

// g = sum_i d(logit_i)/dx as a value (single reverse sweep).
Tensor summed_logit_gradient(const Classifier& c, const Tensor& x) {
  return c.net.gradient(x, Tensor::ones({c.num_classes()}));
}

// Builds ||B B^T g|| / ||g|| above an existing logits graph, where g is the
// (graph-valued) gradient of sum(logits) with respect to `x`.  Returns an
// empty Var when that gradient is exactly zero, in which case the term is
// undefined and callers skip it.
ad::Var alignment_term_node(const ad::Var& x, const ad::Var& logits, const Projector& p) {
  ad::AdjointMap inner = ad::backprop(ad::sum(logits), ad::leaf(Tensor::scalar(1.0)));
  ad::Var g = ad::adjoint_var(inner, x);
  if (g->value.norm() == 0.0) return nullptr;
  ad::Var basis = ad::leaf(p.basis);
  ad::Var proj = ad::matmul(basis, ad::matmul(ad::transpose2d(basis), g));
  return ad::mul(ad::norm2(proj), ad::recip(ad::norm2(g)));
}

// Mean graph-valued alignment term over cached samples; NaN when nothing was
// measurable.  This is the quantity train_aligned reports per epoch.
double mean_alignment_over(const Classifier& c, const ManifoldDataset& ds,
                           const ProjectorCache& cache) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!cache.by_index[i]) continue;
    ad::Var x = ad::leaf(ds.xs[i]);
    ad::Var term = alignment_term_node(x, logits_graph(c, x), *cache.by_index[i]);
    if (!term) continue;
    sum += term->value[0];
    ++n;
  }
  return n == 0 ? kNan : sum / static_cast<double>(n);
}

TrainResult train_impl(const Classifier& init, const ManifoldDataset& ds,
                       const ProjectorCache* cache, const TrainConfig& cfg,
                       const EpochHook& hook) {
  validate_train_config(cfg);
  if (init.input_dim() != ds.ambient_dim) {
    throw ConfigError("classifier input dimension " + std::to_string(init.input_dim()) +
                      " does not match the dataset ambient dimension " +
                      std::to_string(ds.ambient_dim));
  }
  if (cache != nullptr && cache->size() != ds.size()) {
    throw ConfigError("projector cache holds " + std::to_string(cache->size()) +
                      " entries for a dataset of " + std::to_string(ds.size()));
  }
  const std::vector<std::size_t> yidx = label_indices(ds, init.num_classes());
  const Split split = stratified_split(ds, cfg.test_fraction, cfg.seed);
  const bool penalized = cache != nullptr && cfg.beta != 0.0;

  TrainResult res{init, {}};
  Mlp& net = res.model.net;
  Optimizer opt(cfg);
  const Rng batch_root(Rng::mix(cfg.seed, kBatchTag));

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::vector<std::size_t> order =
        batch_root.child(epoch).permutation(split.train.size());
    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::size_t zero_grad_skips = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t bsz = std::min(cfg.batch_size, order.size() - start);
      std::vector<Tensor> grads;
      for (std::size_t i = 0; i < net.param_count(); ++i) {
        grads.push_back(Tensor::zeros(net.param(i).shape()));
      }
      double batch_loss = 0.0;
      try {
        for (std::size_t b = 0; b < bsz; ++b) {
          const std::size_t si = split.train[order[start + b]];
          ad::Var x = ad::leaf(ds.xs[si]);
          std::vector<ad::Var> leaves;
          ad::Var logits = net.build_trainable(x, leaves);
          ad::Var loss =
              class_loss_from_logits(logits, yidx[si], LossKind::kCrossEntropy);
          if (penalized && cache->by_index[si]) {
            ad::Var term = alignment_term_node(x, logits, *cache->by_index[si]);
            if (term) {
              loss = ad::sub(loss, ad::scale(term, cfg.beta));
            } else {
              ++zero_grad_skips;
            }
          }
          ad::AdjointMap adj = ad::backprop(loss, ad::leaf(Tensor::scalar(1.0)));
          for (std::size_t j = 0; j < leaves.size(); ++j) {
            const Tensor g = ad::adjoint_value(adj, leaves[j]);
            for (std::size_t e = 0; e < g.size(); ++e) grads[j][e] += g[e];
          }
          batch_loss += loss->value[0];
        }
      } catch (const NumericError& e) {
        throw TrainingDivergedError(std::string("training aborted: ") + e.what(), epoch);
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingDivergedError("training loss became non-finite", epoch);
      }
      for (auto& g : grads) {
        for (std::size_t e = 0; e < g.size(); ++e) g[e] /= static_cast<double>(bsz);
      }
      opt.step(net, grads);
      loss_sum += batch_loss;
      seen += bsz;
    }
    const double mean_loss = seen == 0 ? 0.0 : loss_sum / static_cast<double>(seen);
    if (!std::isfinite(mean_loss) || mean_loss > cfg.divergence_threshold) {
      throw TrainingDivergedError("mean epoch loss exceeded the divergence threshold", epoch);
    }
    if (zero_grad_skips > 0) {
      std::fprintf(stderr,
                   "[train] epoch %zu: alignment term skipped for %zu samples "
                   "(zero summed logit gradient)\n",
                   epoch, zero_grad_skips);
    }
    EpochStats st;
    st.epoch = epoch;
    st.train_loss = mean_loss;
    st.train_acc = classifier_accuracy(res.model, ds, split.train);
    st.test_acc = split.test.empty() ? kNan : classifier_accuracy(res.model, ds, split.test);
    st.as_tr_mean = cache == nullptr ? kNan : mean_alignment_over(res.model, ds, *cache);
    res.history.push_back(st);
    if (hook) hook(res.model, st);
  }
  return res;
}

}  // namespace

const char* optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::kSgdMomentum ? "sgd-momentum" : "adam";
}

OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "sgd-momentum") return OptimizerKind::kSgdMomentum;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + name + "'");
}

const char* projector_source_name(ProjectorSource s) {
  return s == ProjectorSource::kOracle ? "oracle" : "learned-decoder";
}

ProjectorSource projector_source_from_name(const std::string& name) {
  if (name == "oracle") return ProjectorSource::kOracle;
  if (name == "learned-decoder") return ProjectorSource::kLearnedDecoder;
  throw ConfigError("unknown projector source '" + name + "'");
}

Split stratified_split(const ManifoldDataset& ds, double test_fraction, std::uint64_t seed) {
  if (test_fraction < 0.0 || test_fraction > 1.0) {
    throw ConfigError("test fraction must lie in [0, 1]");
  }
  const Rng root(Rng::mix(seed, kSplitTag));
  Split split;
  for (std::size_t label : ds.class_ids) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.labels[i] == label) members.push_back(i);
    }
    Rng rng = root.child(label);
    const std::vector<std::size_t> perm = rng.permutation(members.size());
    const auto test_n = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(members.size())));
    for (std::size_t p = 0; p < members.size(); ++p) {
      (p < members.size() - test_n ? split.train : split.test).push_back(members[perm[p]]);
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

double classifier_accuracy(const Classifier& c, const ManifoldDataset& ds,
                           const std::vector<std::size_t>& indices) {
  const std::vector<std::size_t> yidx = label_indices(ds, c.num_classes());
  std::vector<std::size_t> all;
  if (indices.empty()) {
    all.resize(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) all[i] = i;
  }
  const std::vector<std::size_t>& use = indices.empty() ? all : indices;
  if (use.empty()) return kNan;
  std::size_t hits = 0;
  for (std::size_t i : use) {
    if (argmax(c.net.evaluate(ds.xs[i])) == yidx[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(use.size());
}

ProjectorCache precompute_projectors(const ManifoldDataset& ds, const Generator& gen,
                                     const Mlp* encoder, ProjectorSource source,
                                     double max_skip_frac) {
  if (gen.ambient_dim() != ds.ambient_dim) {
    throw ConfigError("generator ambient dimension does not match the dataset");
  }
  if (source == ProjectorSource::kOracle) {
    if (gen.kind != GeneratorKind::kOracleAnalytic) {
      throw ConfigError("oracle projector source requires the oracle generator");
    }
    if (gen.latent_dim() != ds.latent_dim) {
      throw ConfigError("oracle latent dimension does not match the dataset");
    }
  } else {
    if (encoder == nullptr) {
      throw ConfigError("learned-decoder projector source requires an encoder");
    }
    if (encoder->input_dim() != ds.ambient_dim ||
        encoder->output_dim() != gen.latent_dim()) {
      throw ConfigError("encoder dimensions do not match dataset/generator");
    }
  }

  ProjectorCache cache;
  cache.source = source;
  cache.by_index.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Tensor z = source == ProjectorSource::kOracle ? ds.zs[i] : encoder->evaluate(ds.xs[i]);
    const Tensor anchor = sample_generator(gen, z);
    const Tensor jac = gen.net.jacobian(z);
    try {
      cache.by_index[i] = tangent_projector(jac, anchor);
    } catch (const DegenerateError& e) {
      ++cache.skipped;
      std::fprintf(stderr, "[projectors] sample %zu skipped: %s\n", i, e.what());
    }
  }
  const double frac = ds.size() == 0
                          ? 0.0
                          : static_cast<double>(cache.skipped) / static_cast<double>(ds.size());
  if (frac > max_skip_frac) {
    throw DegenerateError("projector precomputation skipped " + std::to_string(cache.skipped) +
                          " of " + std::to_string(ds.size()) +
                          " samples (rank-deficient tangents)");
  }
  return cache;
}

void save_projector_cache(const ProjectorCache& cache, const std::string& path) {
  nlohmann::json j;
  j["source"] = projector_source_name(cache.source);
  j["count"] = cache.by_index.size();
  j["skipped"] = cache.skipped;
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < cache.by_index.size(); ++i) {
    if (!cache.by_index[i]) continue;
    entries.push_back({{"index", i}, {"projector", projector_to_json(*cache.by_index[i])}});
  }
  j["entries"] = std::move(entries);
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
}

ProjectorCache load_projector_cache(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("projector cache not found: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("malformed projector cache '" + path + "': " + e.what(),
                     static_cast<long long>(e.byte));
  }
  for (const char* field : {"source", "count", "skipped", "entries"}) {
    if (!j.contains(field)) {
      throw ParseError("projector cache missing field '" + std::string(field) + "'");
    }
  }
  ProjectorCache cache;
  cache.source = projector_source_from_name(j.at("source").get<std::string>());
  cache.by_index.resize(j.at("count").get<std::size_t>());
  cache.skipped = j.at("skipped").get<std::size_t>();
  for (const auto& entry : j.at("entries")) {
    if (!entry.contains("index") || !entry.contains("projector")) {
      throw ParseError("projector cache entry missing 'index' or 'projector'");
    }
    const auto idx = entry.at("index").get<std::size_t>();
    if (idx >= cache.by_index.size()) {
      throw ParseError("projector cache entry index " + std::to_string(idx) +
                       " out of range for count " + std::to_string(cache.by_index.size()));
    }
    cache.by_index[idx] = projector_from_json(entry.at("projector"));
  }
  return cache;
}

double alignment_term(const Classifier& c, const Tensor& x, const Projector& p) {
  ad::Var xv = ad::leaf(x);
  ad::Var term = alignment_term_node(xv, logits_graph(c, xv), p);
  if (!term) {
    throw DegenerateError("summed logit gradient is zero; the alignment term is undefined here");
  }
  return term->value[0];
}

AlignmentTermGrads alignment_term_param_grads(const Classifier& c, const Tensor& x,
                                              const Projector& p) {
  ad::Var xv = ad::leaf(x);
  std::vector<ad::Var> leaves;
  ad::Var logits = c.net.build_trainable(xv, leaves);
  ad::Var term = alignment_term_node(xv, logits, p);
  if (!term) {
    throw DegenerateError("summed logit gradient is zero; the alignment term is undefined here");
  }
  ad::AdjointMap adj = ad::backprop(term, ad::leaf(Tensor::scalar(1.0)));
  AlignmentTermGrads out;
  out.value = term->value[0];
  for (const auto& leaf : leaves) out.param_grads.push_back(ad::adjoint_value(adj, leaf));
  return out;
}

BoundCheck bound_sides(const std::vector<Tensor>& grads, const Projector& p, bool rescale) {
  if (grads.empty()) throw ConfigError("bound check needs at least one gradient");
  Tensor summed = Tensor::zeros(grads[0].shape());
  double rhs_sum = 0.0;
  double total_norm = 0.0;
  for (const Tensor& g : grads) {
    const double n = g.norm();
    if (n > 0.0) {
      // ||Pt g|| / ||g|| is scale-invariant, so the rhs is unaffected by the
      // rescaling; only the sum on the lhs changes.
      rhs_sum += unnormalized_push(p, g).norm() / n;
      summed = add(summed, rescale ? scale(g, 1.0 / n) : g);
      total_norm += rescale ? 1.0 : n;
    }
  }
  BoundCheck out;
  out.rhs = -rhs_sum / static_cast<double>(grads.size());
  out.lhs = total_norm == 0.0 ? 0.0 : -unnormalized_push(p, summed).norm() / total_norm;
  out.holds = out.lhs >= out.rhs - kBoundSlack;
  return out;
}

BoundCheck check_bound(const Classifier& c, const Tensor& x, const Projector& p) {
  const Tensor rows = input_gradients(c, x);
  std::vector<Tensor> grads;
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    Tensor g({rows.cols()});
    for (std::size_t e = 0; e < rows.cols(); ++e) g[e] = rows.at(r, e);
    grads.push_back(std::move(g));
  }
  return bound_sides(grads, p, /*rescale=*/true);
}

TrainResult train_classifier(const Classifier& init, const ManifoldDataset& ds,
                             const TrainConfig& cfg, const EpochHook& hook) {
  if (cfg.beta != 0.0) {
    throw ConfigError("train_classifier requires beta = 0; use train_aligned for beta > 0");
  }
  return train_impl(init, ds, nullptr, cfg, hook);
}

TrainResult train_aligned(const Classifier& init, const ManifoldDataset& ds,
                          const ProjectorCache& cache, const TrainConfig& cfg,
                          const EpochHook& hook) {
  return train_impl(init, ds, &cache, cfg, hook);
}

AlignmentMeasurement measure_AS_tr(const Classifier& c, const ManifoldDataset& ds,
                                   const ProjectorCache& cache) {
  if (cache.size() != ds.size()) {
    throw ConfigError("projector cache holds " + std::to_string(cache.size()) +
                      " entries for a dataset of " + std::to_string(ds.size()));
  }
  AlignmentMeasurement m;
  double sum = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!cache.by_index[i]) {
      ++m.skipped;
      continue;
    }
    // Deliberately not the graph path used in training: value-only gradient
    // plus the geometry module's score, as an independent recomputation.
    const Tensor g = summed_logit_gradient(c, ds.xs[i]);
    if (g.norm() == 0.0) {
      ++m.skipped;
      continue;
    }
    const double v = alignment_score(*cache.by_index[i], g);
    m.values.push_back(v);
    sum += v;
  }
  m.mean = m.values.empty() ? kNan : sum / static_cast<double>(m.values.size());
  return m;
}

DecoderResult train_decoder(const ManifoldDataset& ds, std::size_t bottleneck,
                            const DecoderConfig& cfg) {
  validate_train_config(cfg.train);
  const std::size_t d = ds.ambient_dim;
  if (bottleneck == 0 || bottleneck > d) {
    throw ConfigError("bottleneck must lie in [1, ambient_dim]");
  }
  if (cfg.hidden < bottleneck) {
    throw ConfigError("autoencoder hidden width must be at least the bottleneck");
  }
  if (ds.size() < 2) throw ConfigError("decoder training needs at least two samples");

  const std::vector<LayerSpec> specs = {{d, cfg.hidden, Activation::kTanh},
                                        {cfg.hidden, bottleneck, Activation::kNone},
                                        {bottleneck, cfg.hidden, Activation::kTanh},
                                        {cfg.hidden, d, Activation::kNone}};
  Rng init_rng(Rng::mix(cfg.train.seed, kAeInitTag));
  Mlp ae(specs, init_rng, 1.0);

  // Held-out slice for the reconstruction-quality gate.
  Rng split_rng(Rng::mix(cfg.train.seed, kAeSplitTag));
  const std::vector<std::size_t> perm = split_rng.permutation(ds.size());
  auto held_n = static_cast<std::size_t>(
      std::llround(cfg.heldout_fraction * static_cast<double>(ds.size())));
  held_n = std::min(held_n, ds.size() - 1);
  if (cfg.heldout_fraction > 0.0 && held_n == 0) held_n = 1;
  const std::vector<std::size_t> held(perm.begin(), perm.begin() + held_n);
  const std::vector<std::size_t> train(perm.begin() + held_n, perm.end());

  Optimizer opt(cfg.train);
  const Rng batch_root(Rng::mix(cfg.train.seed, kAeBatchTag));
  DecoderResult res;
  for (std::size_t epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    const std::vector<std::size_t> order = batch_root.child(epoch).permutation(train.size());
    double mse_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.train.batch_size) {
      const std::size_t bsz = std::min(cfg.train.batch_size, order.size() - start);
      std::vector<Tensor> grads;
      for (std::size_t i = 0; i < ae.param_count(); ++i) {
        grads.push_back(Tensor::zeros(ae.param(i).shape()));
      }
      double batch_loss = 0.0;
      try {
        for (std::size_t b = 0; b < bsz; ++b) {
          const Tensor& x = ds.xs[train[order[start + b]]];
          ad::Var xv = ad::leaf(x);
          std::vector<ad::Var> leaves;
          ad::Var out = ae.build_trainable(xv, leaves);
          ad::Var diff = ad::sub(out, ad::leaf(x));
          ad::Var mse = ad::scale(ad::sum(ad::mul(diff, diff)), 1.0 / static_cast<double>(d));
          ad::AdjointMap adj = ad::backprop(mse, ad::leaf(Tensor::scalar(1.0)));
          for (std::size_t j = 0; j < leaves.size(); ++j) {
            const Tensor g = ad::adjoint_value(adj, leaves[j]);
            for (std::size_t e = 0; e < g.size(); ++e) grads[j][e] += g[e];
          }
          batch_loss += mse->value[0];
        }
      } catch (const NumericError& e) {
        throw TrainingDivergedError(std::string("autoencoder training aborted: ") + e.what(),
                                    epoch);
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingDivergedError("autoencoder loss became non-finite", epoch);
      }
      for (auto& g : grads) {
        for (std::size_t e = 0; e < g.size(); ++e) g[e] /= static_cast<double>(bsz);
      }
      opt.step(ae, grads);
      mse_sum += batch_loss;
    }
    const double epoch_mse =
        train.empty() ? 0.0 : mse_sum / static_cast<double>(train.size());
    if (!std::isfinite(epoch_mse) || epoch_mse > cfg.train.divergence_threshold) {
      throw TrainingDivergedError("autoencoder epoch loss exceeded the divergence threshold",
                                  epoch);
    }
    res.epoch_mse.emplace_back(epoch, epoch_mse);
  }

  const std::vector<std::size_t>& gate = held.empty() ? train : held;
  double held_mse = 0.0;
  for (std::size_t i : gate) {
    const Tensor rec = ae.evaluate(ds.xs[i]);
    const Tensor diff = sub(rec, ds.xs[i]);
    held_mse += diff.norm() * diff.norm() / static_cast<double>(d);
  }
  held_mse /= static_cast<double>(gate.size());
  res.heldout_mse = held_mse;
  if (held_mse > cfg.mse_threshold) {
    throw NumericError("decoder underfit: held-out reconstruction MSE " +
                       std::to_string(held_mse) + " exceeds the threshold " +
                       std::to_string(cfg.mse_threshold));
  }

  res.encoder = Mlp({specs[0], specs[1]}, {ae.param(0), ae.param(2)}, {ae.param(1), ae.param(3)});
  Mlp dec_net({specs[2], specs[3]}, {ae.param(4), ae.param(6)}, {ae.param(5), ae.param(7)});

  // Rank gate at the encoded training points (the latents that will actually
  // anchor projectors).
  std::size_t deficient = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Tensor z = res.encoder.evaluate(ds.xs[i]);
    try {
      tangent_projector(dec_net.jacobian(z), dec_net.evaluate(z));
    } catch (const DegenerateError&) {
      ++deficient;
    }
  }
  if (static_cast<double>(deficient) >
      cfg.max_rank_deficient_frac * static_cast<double>(ds.size())) {
    throw DegenerateError("decoder tangent is rank-deficient at " + std::to_string(deficient) +
                          " of " + std::to_string(ds.size()) + " encoded points");
  }

  res.decoder = make_generator(GeneratorKind::kLearnedDecoder, std::move(dec_net),
                               Rng::mix(cfg.train.seed, kDecoderCheckTag));
  return res;
}

}  // namespace minv
