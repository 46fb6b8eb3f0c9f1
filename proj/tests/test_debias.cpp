#include <doctest.h>

#include <cmath>
#include <random>

#include "deblora/debias.hpp"
#include "deblora/errors.hpp"
#include "deblora/synth.hpp"
#include "test_util.hpp"

using namespace deblora;

namespace {

ClusterModel manual_clusters(const Matrix& centers, std::vector<std::uint32_t> assignment) {
  ClusterModel m;
  m.k = centers.rows();
  m.centers = centers;
  m.sizes.assign(m.k, 0);
  for (auto a : assignment) ++m.sizes[a];
  m.assignment = std::move(assignment);
  return m;
}

std::vector<double> widen(std::span<const float> row) { return {row.begin(), row.end()}; }

double distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_distance(a, b));
}

}  // namespace

TEST_CASE("de-biased center is the membership-weighted mean of cluster centers") {
  // class 0: two samples in cluster 0, one in cluster 1; class 1 only in cluster 2.
  const auto set = testutil::make_set({{0, 0}, {0, 0}, {3, 0}, {7, 7}}, {0, 0, 0, 1});
  const auto clusters = manual_clusters(Matrix::from_rows({{0, 0}, {3, 0}, {7, 7}}), {0, 0, 1, 2});
  const auto w = center_weights(clusters, set, 0);
  CHECK(w == std::vector<double>{2.0 / 3.0, 1.0 / 3.0, 0.0});
  const auto mu = debiased_center(clusters, set, 0);
  CHECK(mu[0] == doctest::Approx(1.0));
  CHECK(mu[1] == 0.0);
  CHECK(debiased_center(clusters, set, 1) == std::vector<double>{7, 7});
}

TEST_CASE("K = 1 gives the single center for every class") {
  const auto set = testutil::make_set({{0, 1}, {2, 3}, {4, 5}}, {0, 1, 1});
  const auto clusters = manual_clusters(Matrix::from_rows({{2, 3}}), {0, 0, 0});
  CHECK(debiased_center(clusters, set, 0) == std::vector<double>{2, 3});
  CHECK(debiased_center(clusters, set, 1) == std::vector<double>{2, 3});
}

TEST_CASE("de-biased center errors") {
  const auto set = testutil::make_set({{0, 1}, {2, 3}}, {0, 0}, 2);
  const auto clusters = manual_clusters(Matrix::from_rows({{1, 2}}), {0, 0});
  CHECK_THROWS_AS(debiased_center(clusters, set, 1), ValidationError);
  CHECK_THROWS_AS(debiased_center(manual_clusters(Matrix::from_rows({{1, 2}}), {0}), set, 0),
                  ValidationError);
}

TEST_CASE("alpha schedule") {
  CHECK(alpha_for(45.45) == doctest::Approx(0.22).epsilon(0.005 / 0.22));
  CHECK(alpha_for(10.0) == 1.0);
  CHECK(alpha_for(1.0) == 1.0);
  CHECK(alpha_for(100.0) == doctest::Approx(0.1));
  CHECK_THROWS_AS(alpha_for(0.5), ValidationError);
  CHECK_THROWS_AS(alpha_for(std::nan("")), ValidationError);
  double previous = 2.0;
  for (double g = 1.0; g <= 1000.0; g += 0.5) {
    CHECK(alpha_for(g) <= previous);
    previous = alpha_for(g);
  }
}

TEST_CASE("calibrate endpoints, midpoint and errors") {
  const std::vector<double> z = {2, 0}, mu = {0, 0};
  CHECK(calibrate(z, mu, 1.0) == z);
  CHECK(calibrate(z, mu, 0.0) == mu);
  CHECK(calibrate(z, mu, 0.5) == std::vector<double>{1, 0});
  CHECK_THROWS_AS(calibrate(z, mu, 1.5), ValidationError);
  CHECK_THROWS_AS(calibrate(z, mu, -0.1), ValidationError);
  CHECK_THROWS_AS(calibrate(z, std::vector<double>{0}, 0.5), ValidationError);
}

TEST_CASE("calibrate contracts distances exactly and stays on the segment") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal(0.0, 5.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> z(7), mu(7);
    for (auto& v : z) v = normal(rng);
    for (auto& v : mu) v = normal(rng);
    const double alpha = unit(rng);
    const auto out = calibrate(z, mu, alpha);
    const double expected = alpha * distance(z, mu);
    CHECK(std::abs(distance(out, mu) - expected) <= 1e-9 * std::max(1.0, expected));
    for (std::size_t j = 0; j < 7; ++j) {
      CHECK(out[j] >= std::min(z[j], mu[j]) - 1e-12);
      CHECK(out[j] <= std::max(z[j], mu[j]) + 1e-12);
    }
  }
}

TEST_CASE("plan without tail classes copies the features") {
  const auto set = testutil::random_set(40, 3, 2, 5);
  const auto stats = compute_class_stats(set);
  const auto clusters = fit(set, {4, 2.0, 0, 100, 1e-6, false, 3});
  const auto plan = build_plan(set, stats, clusters);
  CHECK(plan.tail_classes.empty());
  CHECK(plan.targets == set.to_matrix());
}

TEST_CASE("tail class with gamma <= 10 keeps its features") {
  // Wide thresholds make the 10-sample class Tail with gamma = 50 / 10 = 5.
  std::vector<std::vector<float>> rows;
  std::vector<std::uint32_t> labels;
  for (int i = 0; i < 50; ++i) {
    rows.push_back({float(i), 1.0f});
    labels.push_back(0);
  }
  for (int i = 0; i < 10; ++i) {
    rows.push_back({float(i), -1.0f});
    labels.push_back(1);
  }
  const auto set = testutil::make_set(rows, labels);
  const auto stats = compute_class_stats(set, {0.2, 0.5});
  REQUIRE(stats.group[1] == FrequencyGroup::Tail);
  CHECK(stats.gamma[1] == 5.0);
  const auto plan = build_plan(set, stats, fit(set, {3, 2.0, 0, 100, 1e-6, false, 3}));
  CHECK(plan.alphas == std::vector<double>{1.0});
  CHECK(plan.targets == set.to_matrix());
}

TEST_CASE("benchmark plan: weights normalize, centers are convex, contraction is exact") {
  const auto set = generate_synthetic(default_benchmark_spec(1));
  const auto stats = compute_class_stats(set);
  const auto clusters = fit(set, {32, 4.0, 1, 100, 1e-6, false, 2});
  const auto plan = build_plan(set, stats, clusters);
  REQUIRE_FALSE(plan.tail_classes.empty());

  for (std::uint32_t c = 0; c < set.num_classes(); ++c) {
    const auto w = center_weights(clusters, set, c);
    double sum = 0.0;
    for (double v : w) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
  for (std::size_t t = 0; t < plan.tail_classes.size(); ++t) {
    const auto c = plan.tail_classes[t];
    CHECK(plan.alphas[t] == alpha_for(stats.gamma[c]));
    double before = 0.0, after = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (set.label(i) != c) continue;
      const auto z = widen(set.row(i));
      const double d0 = distance(z, plan.debiased_centers[t]);
      const double d1 = distance(plan.targets.row(i), plan.debiased_centers[t]);
      CHECK(std::abs(d1 - plan.alphas[t] * d0) <= 1e-9 * std::max(1.0, d1));
      before += d0;
      after += d1;
      ++n;
    }
    CHECK(after / double(n) == doctest::Approx(plan.alphas[t] * before / double(n)).epsilon(1e-12));
  }
  for (std::size_t i = 0; i < set.size(); ++i)
    if (stats.group[set.label(i)] != FrequencyGroup::Tail)
      for (std::size_t j = 0; j < set.dim(); ++j) CHECK(plan.targets(i, j) == set.row(i)[j]);
}

TEST_CASE("training rows honour tail_only") {
  const auto set = testutil::make_set({{1}, {2}, {3}}, {0, 1, 0});
  DebiasPlan plan;
  plan.tail_classes = {1};
  CHECK(training_rows(plan, set) == std::vector<std::size_t>{0, 1, 2});
  plan.tail_only = true;
  CHECK(training_rows(plan, set) == std::vector<std::size_t>{1});
}

TEST_CASE("plan JSON round trip") {
  DebiasPlan plan;
  plan.tail_classes = {4, 5};
  plan.gammas = {20.0, 50.0};
  plan.alphas = {0.5, 0.2};
  plan.debiased_centers = {{1.0, 2.0}, {3.0, 4.0}};
  plan.tail_only = true;
  const nlohmann::ordered_json j = plan;
  CHECK_FALSE(j.contains("targets"));
  const auto back = nlohmann::ordered_json::parse(j.dump()).get<DebiasPlan>();
  CHECK(back.tail_classes == plan.tail_classes);
  CHECK(back.alphas == plan.alphas);
  CHECK(back.debiased_centers == plan.debiased_centers);
  CHECK(back.tail_only);
  auto bad = j;
  bad["alphas"] = {0.5};
  CHECK_THROWS_AS(bad.get<DebiasPlan>(), ValidationError);
}
