#include "deblora/constrained_kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "deblora/errors.hpp"

namespace deblora {

std::size_t min_cluster_size(std::size_t n, std::size_t k, double rho) {
  if (k == 0) throw ValidationError("K must be >= 1");
  if (!(rho >= 1.0) || !std::isfinite(rho)) throw ValidationError("rho must be finite and >= 1");
  const double bound = static_cast<double>(n) / (static_cast<double>(k) * rho);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(bound)));
}

Matrix kmeanspp_init(const FeatureSet& set, std::size_t k, std::uint64_t seed) {
  const std::size_t n = set.size();
  if (k == 0) throw ValidationError("K must be >= 1");
  {
    std::set<std::vector<float>> distinct;
    for (std::size_t i = 0; i < n && distinct.size() <= k; ++i)
      distinct.emplace(set.row(i).begin(), set.row(i).end());
    if (k > distinct.size())
      throw ValidationError("K = " + std::to_string(k) + " exceeds the number of distinct rows");
  }

  std::mt19937_64 rng(seed);
  Matrix centers(k, set.dim());
  auto place = [&](std::size_t c, std::size_t i) {
    auto src = set.row(i);
    std::copy(src.begin(), src.end(), centers.row(c).begin());
  };

  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  place(0, first(rng));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(set.row(i), centers.row(0));

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    const double target = unit(rng) * total;
    std::size_t pick = n;
    std::size_t last_positive = n;
    double cumulative = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      last_positive = i;
      cumulative += d2[i];
      if (cumulative > target) {
        pick = i;
        break;
      }
    }
    if (pick == n) pick = last_positive;
    if (pick == n) throw InternalError("k-means++ ran out of distinct rows");
    place(c, pick);
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], squared_distance(set.row(i), centers.row(c)));
  }
  return centers;
}

ConstrainedAssignment assign_constrained(const FeatureSet& set, const Matrix& centers,
                                         std::size_t min_size) {
  const std::size_t n = set.size();
  const std::size_t k = centers.rows();
  if (k == 0) throw ValidationError("no centers given");
  if (centers.cols() != set.dim()) throw ValidationError("center dimension differs from features");
  for (double v : centers.data())
    if (!std::isfinite(v)) throw ValidationError("non-finite cluster center");
  if (min_size * k > n)
    throw InfeasibleConstraintError("min_size * K = " + std::to_string(min_size * k) +
                                    " exceeds N = " + std::to_string(n));

  // dist[i * k + c] = |z_i - mu_c|^2
  std::vector<double> dist(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) dist[i * k + c] = squared_distance(set.row(i), centers.row(c));

  ConstrainedAssignment out;
  out.assignment.resize(n);
  out.sizes.assign(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (dist[i * k + c] < dist[i * k + best]) best = c;
    out.assignment[i] = static_cast<std::uint32_t>(best);
    ++out.sizes[best];
    out.nearest_inertia += dist[i * k + best];
  }

  while (true) {
    std::size_t deficient = k;
    for (std::size_t c = 0; c < k; ++c)
      if (out.sizes[c] < min_size) {
        deficient = c;
        break;
      }
    if (deficient == k) break;

    std::size_t pick = n;
    double pick_regret = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t cur = out.assignment[i];
      if (cur == deficient || out.sizes[cur] <= min_size) continue;
      const double regret = dist[i * k + deficient] - dist[i * k + cur];
      if (regret < pick_regret) {
        pick_regret = regret;
        pick = i;
      }
    }
    // Pigeonhole: with min_size * K <= N some cluster always has a point to spare.
    if (pick == n) throw InternalError("constrained assignment found no donor");
    --out.sizes[out.assignment[pick]];
    ++out.sizes[deficient];
    out.assignment[pick] = static_cast<std::uint32_t>(deficient);
    out.repair_cost += pick_regret;
    ++out.moves;
  }
  return out;
}

Matrix update_centers(const FeatureSet& set, std::span<const std::uint32_t> assignment,
                      std::size_t k) {
  if (assignment.size() != set.size()) throw ValidationError("assignment length differs from N");
  Matrix centers(k, set.dim());
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const std::size_t c = assignment[i];
    if (c >= k) throw ValidationError("assignment index out of range", i);
    ++counts[c];
    auto dst = centers.row(c);
    auto src = set.row(i);
    for (std::size_t j = 0; j < set.dim(); ++j) dst[j] += src[j];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) throw InternalError("cluster " + std::to_string(c) + " is empty");
    for (double& v : centers.row(c)) v /= static_cast<double>(counts[c]);
  }
  return centers;
}

double compute_inertia(const FeatureSet& set, const Matrix& centers,
                       std::span<const std::uint32_t> assignment) {
  double total = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i)
    total += squared_distance(set.row(i), centers.row(assignment[i]));
  return total;
}

namespace {

FeatureSet unit_normalized(const FeatureSet& set) {
  Matrix m = set.to_matrix();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    const double n = norm(row);
    if (n == 0.0) throw ValidationError("cannot L2-normalize a zero feature row", i);
    for (double& v : row) v /= n;
  }
  return set.with_features(m);
}

}  // namespace

namespace {

// One Lloyd run from a k-means++ start; fills the state fields of `model`.
void lloyd_run(const FeatureSet& work, const KMeansConfig& cfg, std::uint64_t seed,
               std::size_t min_size, ClusterModel& model) {
  Matrix centers = kmeanspp_init(work, cfg.k, seed);
  double best = std::numeric_limits<double>::infinity();
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < cfg.max_iter; ++it) {
    ConstrainedAssignment a = assign_constrained(work, centers, min_size);
    Matrix updated = update_centers(work, a.assignment, cfg.k);
    const double inertia = compute_inertia(work, updated, a.assignment);
    model.history.push_back({a.nearest_inertia, a.repair_cost, inertia});
    if (inertia < best) {
      best = inertia;
      model.best_iteration = it;
      model.centers = updated;
      model.assignment = std::move(a.assignment);
      model.sizes = std::move(a.sizes);
      model.inertia = inertia;
    }
    if (previous - inertia < cfg.tol) break;
    previous = inertia;
    centers = std::move(updated);
  }
}

}  // namespace

ClusterModel fit(const FeatureSet& set, const KMeansConfig& cfg) {
  const std::size_t min_size = min_cluster_size(set.size(), cfg.k, cfg.rho);
  if (cfg.max_iter == 0) throw ValidationError("max_iter must be >= 1");
  if (cfg.n_init == 0) throw ValidationError("n_init must be >= 1");
  const FeatureSet work = cfg.normalize ? unit_normalized(set) : set;

  ClusterModel best;
  best.inertia = std::numeric_limits<double>::infinity();
  std::seed_seq seq{cfg.seed};
  std::vector<std::uint32_t> restart_seeds(2 * cfg.n_init);
  seq.generate(restart_seeds.begin(), restart_seeds.end());
  for (std::size_t r = 0; r < cfg.n_init; ++r) {
    const std::uint64_t seed =
        (std::uint64_t{restart_seeds[2 * r]} << 32) | restart_seeds[2 * r + 1];
    ClusterModel run;
    lloyd_run(work, cfg, seed, min_size, run);
    if (run.inertia < best.inertia) best = std::move(run);
  }

  best.k = cfg.k;
  best.rho = cfg.rho;
  best.min_size = min_size;
  best.normalized = cfg.normalize;
  if (cfg.normalize) {
    best.centers = update_centers(set, best.assignment, cfg.k);
    best.inertia = compute_inertia(set, best.centers, best.assignment);
  }
  return best;
}

void to_json(nlohmann::ordered_json& j, const ClusterModel& model) {
  j = nlohmann::ordered_json::object();
  j["k"] = model.k;
  j["rho"] = model.rho;
  j["min_size"] = model.min_size;
  j["normalized"] = model.normalized;
  j["centers"] = model.centers.to_rows();
  j["assignment"] = model.assignment;
  j["sizes"] = model.sizes;
  j["inertia"] = model.inertia;
}

void from_json(const nlohmann::ordered_json& j, ClusterModel& model) {
  try {
    model = ClusterModel{};
    model.k = j.at("k").get<std::size_t>();
    model.rho = j.at("rho").get<double>();
    model.normalized = j.value("normalized", false);
    model.centers = Matrix::from_rows(j.at("centers").get<std::vector<std::vector<double>>>());
    model.assignment = j.at("assignment").get<std::vector<std::uint32_t>>();
    model.sizes = j.at("sizes").get<std::vector<std::size_t>>();
    model.inertia = j.at("inertia").get<double>();
    model.min_size = j.contains("min_size")
                         ? j.at("min_size").get<std::size_t>()
                         : min_cluster_size(model.assignment.size(), model.k, model.rho);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("cluster model: ") + e.what());
  }
  if (model.centers.rows() != model.k || model.sizes.size() != model.k)
    throw ValidationError("cluster model: center/size count differs from k");
  std::vector<std::size_t> counted(model.k, 0);
  for (std::size_t i = 0; i < model.assignment.size(); ++i) {
    if (model.assignment[i] >= model.k) throw ValidationError("cluster model: bad assignment", i);
    ++counted[model.assignment[i]];
  }
  if (counted != model.sizes) throw ValidationError("cluster model: sizes disagree with assignment");
}

}  // namespace deblora
