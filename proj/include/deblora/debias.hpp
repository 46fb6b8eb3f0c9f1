#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "deblora/constrained_kmeans.hpp"
#include "deblora/feature_store.hpp"
#include "deblora/matrix.hpp"

namespace deblora {

/// w_k = n_{k,c} / n_c over all K clusters: the share of class-c samples in each cluster.
std::vector<double> center_weights(const ClusterModel& clusters, const FeatureSet& set,
                                   std::uint32_t cls);

/// sum_k w_k mu_k with the weights above.
std::vector<double> debiased_center(const ClusterModel& clusters, const FeatureSet& set,
                                    std::uint32_t cls);

/// min(1, 10 / gamma). Throws ValidationError for gamma < 1.
double alpha_for(double gamma);

/// alpha z + (1 - alpha) mu_hat. Throws ValidationError for alpha outside [0, 1].
std::vector<double> calibrate(std::span<const double> z, std::span<const double> mu_hat,
                              double alpha);

struct DebiasPlan {
  std::vector<std::uint32_t> tail_classes;
  /// Parallel to tail_classes.
  std::vector<std::vector<double>> debiased_centers;
  std::vector<double> alphas;
  std::vector<double> gammas;
  /// N x d. Calibrated rows for tail classes, input rows copied for everything else.
  Matrix targets;
  /// Train the adapter on tail rows only instead of all rows with identity targets elsewhere.
  bool tail_only = false;
};

/// Calibrates every row of each Tail-group class toward that class's de-biased center.
DebiasPlan build_plan(const FeatureSet& set, const ClassStats& stats, const ClusterModel& clusters);

/// Row indices the adapter is trained on under `plan`.
std::vector<std::size_t> training_rows(const DebiasPlan& plan, const FeatureSet& set);

/// Serializes everything except `targets`, which travel as a feature file.
void to_json(nlohmann::ordered_json& j, const DebiasPlan& plan);
void from_json(const nlohmann::ordered_json& j, DebiasPlan& plan);

}  // namespace deblora
