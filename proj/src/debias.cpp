#include "deblora/debias.hpp"

#include <algorithm>
#include <cmath>

#include "deblora/errors.hpp"

namespace deblora {

namespace {

void check_coverage(const ClusterModel& clusters, const FeatureSet& set) {
  if (clusters.assignment.size() != set.size())
    throw ValidationError("cluster assignment covers " + std::to_string(clusters.assignment.size()) +
                          " samples, feature set has " + std::to_string(set.size()));
  if (clusters.centers.rows() != clusters.k || clusters.centers.cols() != set.dim())
    throw ValidationError("cluster centers do not match the feature set");
}

}  // namespace

std::vector<double> center_weights(const ClusterModel& clusters, const FeatureSet& set,
                                   std::uint32_t cls) {
  check_coverage(clusters, set);
  if (cls >= set.num_classes()) throw ValidationError("class index out of range");
  std::vector<std::size_t> per_cluster(clusters.k, 0);
  std::size_t n_c = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set.label(i) != cls) continue;
    ++n_c;
    ++per_cluster[clusters.assignment[i]];
  }
  if (n_c == 0) throw ValidationError("class '" + set.class_names()[cls] + "' has no samples");
  std::vector<double> w(clusters.k);
  for (std::size_t k = 0; k < clusters.k; ++k)
    w[k] = static_cast<double>(per_cluster[k]) / static_cast<double>(n_c);
  return w;
}

std::vector<double> debiased_center(const ClusterModel& clusters, const FeatureSet& set,
                                    std::uint32_t cls) {
  const auto w = center_weights(clusters, set, cls);
  std::vector<double> mu(set.dim(), 0.0);
  for (std::size_t k = 0; k < clusters.k; ++k) {
    if (w[k] == 0.0) continue;
    auto center = clusters.centers.row(k);
    for (std::size_t j = 0; j < mu.size(); ++j) mu[j] += w[k] * center[j];
  }
  return mu;
}

double alpha_for(double gamma) {
  if (!(gamma >= 1.0)) throw ValidationError("imbalance ratio must be >= 1");
  return std::min(1.0, 10.0 / gamma);
}

std::vector<double> calibrate(std::span<const double> z, std::span<const double> mu_hat,
                              double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
  if (z.size() != mu_hat.size()) throw ValidationError("calibrate: dimension mismatch");
  std::vector<double> out(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) out[j] = alpha * z[j] + (1.0 - alpha) * mu_hat[j];
  return out;
}

DebiasPlan build_plan(const FeatureSet& set, const ClassStats& stats, const ClusterModel& clusters) {
  check_coverage(clusters, set);
  if (stats.counts.size() != set.num_classes() || stats.total != set.size())
    throw ValidationError("class statistics were computed from a different feature set");

  DebiasPlan plan;
  plan.targets = set.to_matrix();
  plan.tail_classes = stats.classes_in(FrequencyGroup::Tail);
  for (std::uint32_t c : plan.tail_classes) {
    plan.debiased_centers.push_back(debiased_center(clusters, set, c));
    plan.gammas.push_back(stats.gamma[c]);
    plan.alphas.push_back(alpha_for(stats.gamma[c]));
  }
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto it = std::find(plan.tail_classes.begin(), plan.tail_classes.end(), set.label(i));
    if (it == plan.tail_classes.end()) continue;
    const auto t = static_cast<std::size_t>(it - plan.tail_classes.begin());
    const auto calibrated = calibrate(plan.targets.row(i), plan.debiased_centers[t], plan.alphas[t]);
    std::copy(calibrated.begin(), calibrated.end(), plan.targets.row(i).begin());
  }
  return plan;
}

std::vector<std::size_t> training_rows(const DebiasPlan& plan, const FeatureSet& set) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const bool tail = std::find(plan.tail_classes.begin(), plan.tail_classes.end(),
                                set.label(i)) != plan.tail_classes.end();
    if (!plan.tail_only || tail) rows.push_back(i);
  }
  return rows;
}

void to_json(nlohmann::ordered_json& j, const DebiasPlan& plan) {
  j = nlohmann::ordered_json::object();
  j["tail_classes"] = plan.tail_classes;
  j["gammas"] = plan.gammas;
  j["alphas"] = plan.alphas;
  j["debiased_centers"] = plan.debiased_centers;
  j["tail_only"] = plan.tail_only;
}

void from_json(const nlohmann::ordered_json& j, DebiasPlan& plan) {
  try {
    plan = DebiasPlan{};
    plan.tail_classes = j.at("tail_classes").get<std::vector<std::uint32_t>>();
    plan.gammas = j.at("gammas").get<std::vector<double>>();
    plan.alphas = j.at("alphas").get<std::vector<double>>();
    plan.debiased_centers = j.at("debiased_centers").get<std::vector<std::vector<double>>>();
    plan.tail_only = j.value("tail_only", false);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("debias plan: ") + e.what());
  }
  const std::size_t n = plan.tail_classes.size();
  if (plan.gammas.size() != n || plan.alphas.size() != n || plan.debiased_centers.size() != n)
    throw ValidationError("debias plan: per-class arrays differ in length");
}

}  // namespace deblora
