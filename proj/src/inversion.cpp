#include "minv/inversion.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "minv/errors.hpp"
#include "minv/projector.hpp"

namespace minv {

namespace {
namespace ad = minv::ad;

const double kNan = std::numeric_limits<double>::quiet_NaN();

void require_grid(const Tensor& x, std::size_t g) {
  if (x.rank() != 1 || x.size() != g * g) {
    throw DimensionError("expected a flattened " + std::to_string(g) + "x" + std::to_string(g) +
                         " grid, got shape " + x.shape_str());
  }
}

std::size_t grid_side(std::size_t ambient) {
  const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(ambient))));
  if (g * g != ambient) {
    throw ConfigError("ambient dimension " + std::to_string(ambient) +
                      " is not a square grid; grid transforms need one");
  }
  return g;
}

void validate_transform_set(const TransformSet& set) {
  if (set.flip_prob < 0.0 || set.flip_prob > 1.0 || set.crop_prob < 0.0 ||
      set.crop_prob > 1.0) {
    throw ConfigError("transform probabilities must lie in [0, 1]");
  }
}

Tensor draw_transform(const Tensor& x, std::size_t g, const TransformSet& set, Rng& rng) {
  Tensor out = x;
  if (set.flip_prob > 0.0 && rng.uniform() < set.flip_prob) out = grid_hflip(out, g);
  if (set.translate) {
    const int dr = static_cast<int>(rng.index(3)) - 1;
    const int dc = static_cast<int>(rng.index(3)) - 1;
    if (dr != 0 || dc != 0) out = grid_translate(out, g, dr, dc);
  }
  if (set.crop_prob > 0.0 && rng.uniform() < set.crop_prob) {
    const std::size_t r0 = rng.index(2);
    const std::size_t c0 = rng.index(2);
    out = grid_crop_resize(out, g, r0, c0);
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

const char* smoothing_name(Smoothing s) {
  switch (s) {
    case Smoothing::kNone: return "none";
    case Smoothing::kPaa: return "paa";
    case Smoothing::kTaa: return "taa";
  }
  return "none";
}

Smoothing smoothing_from_name(const std::string& name) {
  if (name == "none") return Smoothing::kNone;
  if (name == "paa") return Smoothing::kPaa;
  if (name == "taa") return Smoothing::kTaa;
  throw ConfigError("unknown smoothing '" + name + "'");
}

Tensor grid_hflip(const Tensor& x, std::size_t g) {
  require_grid(x, g);
  Tensor out({g * g});
  for (std::size_t r = 0; r < g; ++r) {
    for (std::size_t c = 0; c < g; ++c) out[r * g + c] = x[r * g + (g - 1 - c)];
  }
  return out;
}

Tensor grid_translate(const Tensor& x, std::size_t g, int dr, int dc) {
  require_grid(x, g);
  Tensor out({g * g});
  const auto side = static_cast<long long>(g);
  for (long long r = 0; r < side; ++r) {
    for (long long c = 0; c < side; ++c) {
      const long long sr = r - dr, sc = c - dc;
      out[static_cast<std::size_t>(r * side + c)] =
          (sr >= 0 && sr < side && sc >= 0 && sc < side)
              ? x[static_cast<std::size_t>(sr * side + sc)]
              : 0.0;
    }
  }
  return out;
}

Tensor grid_crop_resize(const Tensor& x, std::size_t g, std::size_t r0, std::size_t c0) {
  require_grid(x, g);
  if (g < 2) throw DimensionError("crop needs a grid of at least 2x2");
  if (r0 > 1 || c0 > 1) throw DimensionError("crop corner offsets must be 0 or 1");
  const std::size_t m = g - 1;  // cropped side
  // Bilinear resize (align corners) of the m x m crop back to g x g.
  Tensor out({g * g});
  const double scale = g == 1 ? 0.0 : static_cast<double>(m - 1) / static_cast<double>(g - 1);
  for (std::size_t r = 0; r < g; ++r) {
    const double fr = static_cast<double>(r) * scale;
    const auto rlo = static_cast<std::size_t>(fr);
    const std::size_t rhi = std::min(rlo + 1, m - 1);
    const double wr = fr - static_cast<double>(rlo);
    for (std::size_t c = 0; c < g; ++c) {
      const double fc = static_cast<double>(c) * scale;
      const auto clo = static_cast<std::size_t>(fc);
      const std::size_t chi = std::min(clo + 1, m - 1);
      const double wc = fc - static_cast<double>(clo);
      auto src = [&](std::size_t rr, std::size_t cc) { return x[(rr + r0) * g + (cc + c0)]; };
      out[r * g + c] = (1.0 - wr) * ((1.0 - wc) * src(rlo, clo) + wc * src(rlo, chi)) +
                       wr * ((1.0 - wc) * src(rhi, clo) + wc * src(rhi, chi));
    }
  }
  return out;
}

double inversion_loss(const Tensor& z, std::size_t y, const Classifier& c, const Generator& g,
                      double lambda, LossKind kind) {
  if (lambda < 0.0) throw ConfigError("prior weight lambda must be non-negative");
  const double prior = 0.5 * lambda * z.norm() * z.norm();
  return class_loss(c, sample_generator(g, z), y, kind) + prior;
}

Tensor inversion_loss_latent_gradient(const Tensor& z, std::size_t y, const Classifier& c,
                                      const Generator& g, double lambda, LossKind kind) {
  if (lambda < 0.0) throw ConfigError("prior weight lambda must be non-negative");
  ad::Var zv = ad::leaf(z);
  ad::Var x = g.net.build(zv);
  ad::Var loss = class_loss_from_logits(logits_graph(c, x), y, kind);
  if (lambda != 0.0) {
    loss = ad::add(loss, ad::scale(ad::sum(ad::mul(zv, zv)), 0.5 * lambda));
  }
  ad::AdjointMap adj = ad::backprop(loss, ad::leaf(Tensor::scalar(1.0)));
  return ad::adjoint_value(adj, zv);
}

Tensor paa_gradient(const Tensor& x, const GradFn& grad, std::size_t k, double alpha, Rng& rng) {
  if (k == 0) throw ConfigError("smoothing needs at least one sample");
  if (alpha < 0.0) throw ConfigError("alpha must be non-negative");
  if (alpha == 0.0) return grad(x);
  const double range = x.max_value() - x.min_value();
  if (range == 0.0) {
    std::fprintf(stderr, "[paa] zero dynamic range: falling back to the unsmoothed gradient\n");
    return grad(x);
  }
  const double sigma = alpha * range;
  Tensor sum = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < k; ++i) {
    const Tensor g = grad(add(x, rng.gaussian_vector(x.size(), sigma)));
    for (std::size_t e = 0; e < sum.size(); ++e) sum[e] += g[e];
  }
  return scale(sum, 1.0 / static_cast<double>(k));
}

Tensor taa_gradient(const Tensor& x, const GradFn& grad, std::size_t k, const TransformSet& set,
                    std::size_t grid, Rng& rng) {
  if (k == 0) throw ConfigError("smoothing needs at least one sample");
  validate_transform_set(set);
  require_grid(x, grid);
  if (set.identity_only()) return grad(x);
  Tensor sum = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < k; ++i) {
    const Tensor g = grad(draw_transform(x, grid, set, rng));
    for (std::size_t e = 0; e < sum.size(); ++e) sum[e] += g[e];
  }
  return scale(sum, 1.0 / static_cast<double>(k));
}

InversionRun invert(const Classifier& c, const Generator& g, std::size_t y,
                    const InversionConfig& cfg) {
  if (cfg.steps == 0) throw ConfigError("inversion needs at least one step");
  if (cfg.lambda < 0.0) throw ConfigError("prior weight lambda must be non-negative");
  if (!std::isfinite(cfg.eta) || cfg.eta < 0.0) {
    throw ConfigError("step size must be finite and non-negative");
  }
  if (cfg.track_every == 0) throw ConfigError("track_every must be at least 1");
  if (y >= c.num_classes()) {
    throw ConfigError("target class " + std::to_string(y) + " out of range for " +
                      std::to_string(c.num_classes()) + " outputs");
  }
  if (c.input_dim() != g.ambient_dim()) {
    throw ConfigError("classifier input dimension does not match the generator output");
  }
  if (cfg.smoothing != Smoothing::kNone && cfg.k_samples == 0) {
    throw ConfigError("smoothing needs at least one sample");
  }
  const std::size_t grid = cfg.smoothing == Smoothing::kTaa ? grid_side(g.ambient_dim()) : 0;
  if (cfg.smoothing == Smoothing::kTaa) validate_transform_set(cfg.transforms);

  Rng rng(cfg.seed);
  Tensor z = rng.gaussian_vector(g.latent_dim());
  Tensor m1 = Tensor::zeros(z.shape()), m2 = Tensor::zeros(z.shape());

  const GradFn base = [&](const Tensor& xx) {
    return class_loss_input_gradient(c, xx, y, cfg.loss);
  };

  InversionRun run;
  run.target = y;
  run.cfg = cfg;
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    Tensor x, gtilde;
    double loss_val = 0.0, conf = 0.0;
    try {
      x = sample_generator(g, z);
      conf = softmax_probs(c, x)[y];
      switch (cfg.smoothing) {
        case Smoothing::kNone: gtilde = base(x); break;
        case Smoothing::kPaa: gtilde = paa_gradient(x, base, cfg.k_samples, cfg.alpha, rng); break;
        case Smoothing::kTaa:
          gtilde = taa_gradient(x, base, cfg.k_samples, cfg.transforms, grid, rng);
          break;
      }
      loss_val = class_loss(c, x, y, cfg.loss) + 0.5 * cfg.lambda * z.norm() * z.norm();
    } catch (const NumericError& e) {
      throw NumericError("inversion aborted at step " + std::to_string(t) + ": " + e.what());
    }
    if (!std::isfinite(loss_val) || !gtilde.all_finite()) {
      throw NumericError("inversion aborted at step " + std::to_string(t) +
                         ": non-finite loss or gradient");
    }

    StepRecord rec;
    rec.step = t;
    rec.z = z;
    rec.loss = loss_val;
    rec.confidence = conf;
    if (t % cfg.track_every == 0) {
      try {
        const Projector p = tangent_projector(g.net.jacobian(z), x);
        rec.as_inv = alignment_score(p, gtilde);
        rec.has_as = true;
      } catch (const DegenerateError&) {
        // rank-deficient tangent or vanished gradient: leave the record
        // without an alignment value and keep going
      }
    }
    run.records.push_back(std::move(rec));

    Tensor update = add(g.net.gradient(z, gtilde), scale(z, cfg.lambda));
    if (cfg.adam) {
      const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      const auto tt = static_cast<double>(t + 1);
      for (std::size_t e = 0; e < z.size(); ++e) {
        m1[e] = b1 * m1[e] + (1.0 - b1) * update[e];
        m2[e] = b2 * m2[e] + (1.0 - b2) * update[e] * update[e];
        const double mh = m1[e] / (1.0 - std::pow(b1, tt));
        const double vh = m2[e] / (1.0 - std::pow(b2, tt));
        z[e] -= cfg.eta * mh / (std::sqrt(vh) + eps);
      }
    } else {
      z = sub(z, scale(update, cfg.eta));
    }
    if (!z.all_finite()) {
      throw NumericError("inversion aborted at step " + std::to_string(t) +
                         ": latent became non-finite");
    }
  }
  run.final_z = z;
  run.final_x = sample_generator(g, z);
  return run;
}

std::vector<DynamicsPoint> alignment_dynamics(const std::vector<InversionRun>& runs) {
  std::size_t max_steps = 0;
  for (const auto& r : runs) max_steps = std::max(max_steps, r.records.size());
  std::vector<DynamicsPoint> series;
  for (std::size_t s = 0; s < max_steps; ++s) {
    DynamicsPoint pt;
    pt.step = s;
    double conf_sum = 0.0, as_sum = 0.0;
    std::size_t conf_n = 0;
    for (const auto& r : runs) {
      if (s >= r.records.size()) continue;
      conf_sum += r.records[s].confidence;
      ++conf_n;
      if (r.records[s].has_as) {
        as_sum += r.records[s].as_inv;
        ++pt.as_count;
      }
    }
    pt.mean_conf = conf_n == 0 ? kNan : conf_sum / static_cast<double>(conf_n);
    pt.mean_as = pt.as_count == 0 ? kNan : as_sum / static_cast<double>(pt.as_count);
    series.push_back(pt);
  }
  return series;
}

double run_mean_alignment(const InversionRun& run) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& rec : run.records) {
    if (rec.has_as) {
      sum += rec.as_inv;
      ++n;
    }
  }
  return n == 0 ? kNan : sum / static_cast<double>(n);
}

nlohmann::json inversion_run_to_json(const InversionRun& run, const std::string& config_hash) {
  nlohmann::json j;
  j["config_hash"] = config_hash;
  j["version"] = kArtifactVersion;
  j["target"] = run.target;
  j["seed"] = run.cfg.seed;
  j["loss_kind"] = loss_kind_name(run.cfg.loss);
  j["smoothing"] = smoothing_name(run.cfg.smoothing);
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& rec : run.records) {
    nlohmann::json s;
    s["step"] = rec.step;
    s["z"] = rec.z.data();
    s["loss"] = rec.loss;
    s["confidence"] = rec.confidence;
    if (rec.has_as) {
      s["as_inv"] = rec.as_inv;
    } else {
      s["as_inv"] = nullptr;
    }
    steps.push_back(std::move(s));
  }
  j["steps"] = std::move(steps);
  j["final_z"] = run.final_z.data();
  j["final_x"] = run.final_x.data();
  return j;
}

void save_inversion_run(const InversionRun& run, const std::string& config_hash,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  out << inversion_run_to_json(run, config_hash).dump(2) << "\n";
}

void write_attack_csv(const std::vector<AttackRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  out << "target,seed,final_confidence,final_loss,mean_as_inv\n";
  for (const AttackRow& r : rows) {
    out << r.target << "," << r.seed << "," << fmt(r.final_confidence) << ","
        << fmt(r.final_loss) << "," << fmt(r.mean_as_inv) << "\n";
  }
}

}  // namespace minv
