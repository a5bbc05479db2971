#include "minv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "minv/errors.hpp"
#include "minv/training.hpp"

namespace minv {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void require_gated(const EvalModel& eval) {
  if (eval.measured_accuracy < eval.accuracy_floor) {
    throw ConfigError("eval model accuracy " + fmt(eval.measured_accuracy) +
                      " is below the floor " + fmt(eval.accuracy_floor));
  }
}

// Linear-interpolated quantile of an ascending sample (the common "type 7"
// convention), exact at the endpoints and for constant samples.
double quantile(const std::vector<double>& sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

Accuracy score_accuracy(const std::vector<const Recon*>& recons, const EvalModel& eval) {
  const std::size_t classes = eval.net.num_classes();
  const std::size_t top = std::min<std::size_t>(5, classes);
  std::size_t hit1 = 0, hit5 = 0;
  for (const Recon* r : recons) {
    const Tensor logits = eval.net.net.evaluate(r->x);
    const double own = logits[r->label];
    std::size_t above = 0;  // classes scoring strictly higher than the target
    bool top1 = true;
    for (std::size_t c = 0; c < classes; ++c) {
      if (c == r->label) continue;
      if (logits[c] > own) ++above;
      if (logits[c] >= own) top1 = false;  // ties lose, deterministically
    }
    if (top1) ++hit1;
    if (above < top) ++hit5;
  }
  const double n = static_cast<double>(recons.size());
  return {static_cast<double>(hit1) / n, static_cast<double>(hit5) / n};
}

}  // namespace

EvalModel make_eval_model(const Classifier& net, const ManifoldDataset& heldout,
                          std::size_t feature_layer, double accuracy_floor) {
  if (feature_layer == 0 || feature_layer >= net.net.layer_count()) {
    throw ConfigError("feature layer index must name an interior layer");
  }
  EvalModel eval{net, feature_layer, classifier_accuracy(net, heldout), accuracy_floor};
  require_gated(eval);
  return eval;
}

Tensor eval_features(const EvalModel& eval, const Tensor& x) {
  return eval.net.net.forward_prefix(x, eval.feature_layer);
}

Accuracy attack_accuracy(const std::vector<Recon>& recons, const EvalModel& eval) {
  require_gated(eval);
  if (recons.empty()) throw ConfigError("attack accuracy needs at least one reconstruction");
  std::vector<const Recon*> ptrs;
  ptrs.reserve(recons.size());
  for (const Recon& r : recons) {
    if (r.label >= eval.net.num_classes()) {
      throw ConfigError("reconstruction label out of range for the eval model");
    }
    ptrs.push_back(&r);
  }
  return score_accuracy(ptrs, eval);
}

double knn_distance(const std::vector<Recon>& recons, const ManifoldDataset& priv,
                    const EvalModel& eval) {
  require_gated(eval);
  if (recons.empty()) throw ConfigError("knn distance needs at least one reconstruction");
  // Embed each targeted class's private samples once.
  std::map<std::size_t, std::vector<Tensor>> bank;
  for (const Recon& r : recons) bank.emplace(r.label, std::vector<Tensor>{});
  for (std::size_t i = 0; i < priv.size(); ++i) {
    auto it = bank.find(priv.labels[i]);
    if (it != bank.end()) it->second.push_back(eval_features(eval, priv.xs[i]));
  }
  for (const auto& [label, feats] : bank) {
    if (feats.empty()) {
      throw ConfigError("no private samples for targeted class " + std::to_string(label));
    }
  }
  double total = 0.0;
  for (const Recon& r : recons) {
    const Tensor f = eval_features(eval, r.x);
    double best = std::numeric_limits<double>::infinity();
    for (const Tensor& g : bank.at(r.label)) best = std::min(best, sub(f, g).norm());
    total += best;
  }
  return total / static_cast<double>(recons.size());
}

AsSummary summarize_scores(const std::vector<double>& scores) {
  if (scores.empty()) throw DegenerateError("no tracked alignment scores to summarize");
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  AsSummary s;
  s.count = sorted.size();
  double sum = 0.0;
  for (double v : sorted) sum += v;
  s.mean = sum / static_cast<double>(sorted.size());
  s.median = quantile(sorted, 0.5);
  s.q25 = quantile(sorted, 0.25);
  s.q75 = quantile(sorted, 0.75);
  s.histogram.assign(kHistogramBins, 0);
  for (double v : sorted) {
    const double scaled = v * static_cast<double>(kHistogramBins);
    std::size_t bin = scaled < 0.0 ? 0 : static_cast<std::size_t>(scaled);
    if (bin >= kHistogramBins) bin = kHistogramBins - 1;  // score 1.0 lands in the last bin
    ++s.histogram[bin];
  }
  return s;
}

AsSummary as_distribution(const std::vector<InversionRun>& runs) {
  std::vector<double> scores;
  for (const InversionRun& run : runs) {
    for (const StepRecord& rec : run.records) {
      if (rec.has_as) scores.push_back(rec.as_inv);
    }
  }
  return summarize_scores(scores);
}

void write_scores_csv(const std::vector<double>& scores, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw MissingArtifactError("cannot open " + path + " for writing");
  out << "as_inv\n";
  for (double v : scores) out << fmt(v) << "\n";
}

std::vector<double> read_scores_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "as_inv") {
    throw ParseError("expected the header line 'as_inv' in " + path);
  }
  std::vector<double> scores;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t used = 0;
    scores.push_back(std::stod(line, &used));
    if (used != line.size()) throw ParseError("trailing characters in " + path + ": " + line);
  }
  return scores;
}

void write_histogram_csv(const AsSummary& summary, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw MissingArtifactError("cannot open " + path + " for writing");
  out << "bin_left,count\n";
  for (std::size_t b = 0; b < summary.histogram.size(); ++b) {
    out << fmt(static_cast<double>(b) / static_cast<double>(kHistogramBins)) << ","
        << summary.histogram[b] << "\n";
  }
}

AttackReport make_attack_report(const std::vector<Recon>& recons, const ManifoldDataset& priv,
                                const EvalModel& eval, const std::vector<InversionRun>& runs) {
  AttackReport report;
  report.accuracy = attack_accuracy(recons, eval);
  report.knn_dist = knn_distance(recons, priv, eval);
  report.as_inv = as_distribution(runs);

  std::map<std::size_t, std::vector<Recon>> by_class;
  for (const Recon& r : recons) by_class[r.label].push_back(r);
  for (const auto& [label, members] : by_class) {
    ClassReport row;
    row.label = label;
    row.count = members.size();
    const Accuracy acc = attack_accuracy(members, eval);
    row.acc1 = acc.acc1;
    row.acc5 = acc.acc5;
    row.knn = knn_distance(members, priv, eval);
    report.per_class.push_back(row);
  }
  return report;
}

nlohmann::json attack_report_to_json(const AttackReport& report) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const ClassReport& row : report.per_class) {
    per_class.push_back({{"label", row.label},
                         {"count", row.count},
                         {"acc1", row.acc1},
                         {"acc5", row.acc5},
                         {"knn", row.knn}});
  }
  return {{"acc1", report.accuracy.acc1},
          {"acc5", report.accuracy.acc5},
          {"knn_dist", report.knn_dist},
          {"per_class", per_class},
          {"as_inv",
           {{"mean", report.as_inv.mean},
            {"median", report.as_inv.median},
            {"q25", report.as_inv.q25},
            {"q75", report.as_inv.q75},
            {"count", report.as_inv.count},
            {"histogram", report.as_inv.histogram}}}};
}

void save_attack_report(const AttackReport& report, const std::string& config_hash,
                        const std::string& path) {
  nlohmann::json j = attack_report_to_json(report);
  j["config_hash"] = config_hash;
  j["version"] = kArtifactVersion;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw MissingArtifactError("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
}

void write_per_class_csv(const AttackReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw MissingArtifactError("cannot open " + path + " for writing");
  out << "label,count,acc1,acc5,knn\n";
  for (const ClassReport& row : report.per_class) {
    out << row.label << "," << row.count << "," << fmt(row.acc1) << "," << fmt(row.acc5) << ","
        << fmt(row.knn) << "\n";
  }
}

}  // namespace minv
