#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "deblora/feature_store.hpp"
#include "deblora/matrix.hpp"

namespace deblora {

/// One Lloyd round: a constrained assignment against `centers_before`, then a mean update.
struct KMeansIteration {
  /// Inertia of plain nearest-center assignment against the centers used for assignment.
  double nearest_inertia = 0.0;
  /// Sum of regrets of the repair moves applied to reach feasibility.
  double repair_cost = 0.0;
  /// Inertia after the mean update.
  double inertia = 0.0;
};

struct ClusterModel {
  std::size_t k = 0;
  double rho = 1.0;
  /// max(1, floor(N / (K * rho))).
  std::size_t min_size = 1;
  /// Clustering ran on unit-L2 rows; centers and inertia are still reported in raw space.
  bool normalized = false;
  Matrix centers;
  std::vector<std::uint32_t> assignment;
  std::vector<std::size_t> sizes;
  double inertia = 0.0;
  /// Rounds of the winning restart (not serialized). `best_iteration` indexes the returned state.
  std::vector<KMeansIteration> history;
  std::size_t best_iteration = 0;
};

struct KMeansConfig {
  std::size_t k = 32;
  double rho = 4.0;
  std::uint64_t seed = 0;
  std::size_t max_iter = 100;
  double tol = 1e-6;
  bool normalize = false;
  /// Independent k-means++ restarts; the lowest-inertia result wins.
  std::size_t n_init = 10;
};

struct ConstrainedAssignment {
  std::vector<std::uint32_t> assignment;
  std::vector<std::size_t> sizes;
  double nearest_inertia = 0.0;
  double repair_cost = 0.0;
  std::size_t moves = 0;
};

std::size_t min_cluster_size(std::size_t n, std::size_t k, double rho);

/// k-means++ seeding: K distinct input rows chosen by D^2 sampling.
/// Throws ValidationError when K exceeds the number of distinct rows.
Matrix kmeanspp_init(const FeatureSet& set, std::size_t k, std::uint64_t seed);

/// Nearest-center assignment (ties to the lowest cluster index), then greedy repair: while a
/// cluster is below min_size, the lowest-index deficient cluster takes the point with the
/// smallest regret |z - mu_k|^2 - |z - mu_cur|^2 from a cluster that can spare it
/// (ties to the lowest sample index). Throws InfeasibleConstraintError if min_size * K > N.
ConstrainedAssignment assign_constrained(const FeatureSet& set, const Matrix& centers,
                                         std::size_t min_size);

/// Cluster means. Throws InternalError if a cluster is empty.
Matrix update_centers(const FeatureSet& set, std::span<const std::uint32_t> assignment,
                      std::size_t k);

double compute_inertia(const FeatureSet& set, const Matrix& centers,
                       std::span<const std::uint32_t> assignment);

/// Alternates assign_constrained / update_centers from a k-means++ start until the inertia
/// improvement drops below tol or max_iter rounds ran. Repeats from n_init seeds and returns
/// the lowest-inertia state seen across all of them, which is always feasible.
ClusterModel fit(const FeatureSet& set, const KMeansConfig& cfg);

void to_json(nlohmann::ordered_json& j, const ClusterModel& model);
void from_json(const nlohmann::ordered_json& j, ClusterModel& model);

}  // namespace deblora
