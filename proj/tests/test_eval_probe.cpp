#include <doctest.h>

#include <cmath>
#include <random>

#include "deblora/errors.hpp"
#include "deblora/eval_probe.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace deblora;

namespace {

// Cross-entropy with naive loops over a flat parameter vector [W row-major, b].
double ce_oracle(const std::vector<double>& params, const oracle::Points& x,
                 const std::vector<std::uint32_t>& y, std::size_t num_classes) {
  const std::size_t d = x.front().size();
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<double> s(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
      s[c] = params[num_classes * d + c];
      for (std::size_t j = 0; j < d; ++j) s[c] += params[c * d + j] * x[i][j];
    }
    double z = 0.0;
    for (double v : s) z += std::exp(v);
    total += std::log(z) - s[y[i]];
  }
  return total / double(x.size());
}

FeatureSet two_blobs(std::uint64_t seed, std::size_t per_class) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.0f, 0.5f);
  std::vector<std::vector<float>> rows;
  std::vector<std::uint32_t> labels;
  for (std::uint32_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      rows.push_back({(c == 0 ? -2.0f : 2.0f) + noise(rng), noise(rng)});
      labels.push_back(c);
    }
  return testutil::make_set(rows, labels);
}

double accuracy(const LinearProbe& probe, const FeatureSet& set) {
  const auto pred = probe.predict_all(set);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < set.size(); ++i) hit += pred[i] == set.label(i);
  return double(hit) / double(set.size());
}

}  // namespace

TEST_CASE("pooling: ReLU then spatial mean") {
  CHECK(pool_features(std::vector<double>{-1, 2, 3}, 1, 1, 3) == std::vector<double>{0, 2, 3});
  CHECK(pool_features(std::vector<double>(12, -1.0), 2, 2, 3) == std::vector<double>(3, 0.0));
  CHECK(pool_features(std::vector<double>{2, -2, 0, 2}, 2, 1, 2) == std::vector<double>{1, 1});
  CHECK_THROWS_AS(pool_features(std::vector<double>{}, 0, 1, 2), ValidationError);
  CHECK_THROWS_AS(pool_features(std::vector<double>{1, 2, 3}, 1, 1, 2), ValidationError);
}

TEST_CASE("probe separates blobs with a 4-sigma margin") {
  const auto set = two_blobs(3, 50);
  // Oracle: the hand-chosen hyperplane x = 0 separates the sample (noise sigma 0.5).
  for (std::size_t i = 0; i < set.size(); ++i)
    CHECK((set.row(i)[0] > 0.0f) == (set.label(i) == 1));
  CHECK(accuracy(train_linear_probe(set), set) == 1.0);
}

TEST_CASE("probe memorizes one sample per class") {
  const auto set = testutil::make_set({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 1}}, {0, 1, 2, 3});
  CHECK(accuracy(train_linear_probe(set), set) == 1.0);
}

TEST_CASE("cross-entropy gradient matches central differences") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = 4, d = 3, num_classes = 3;
  Matrix x(n, d);
  for (double& v : x.data()) v = normal(rng);
  const std::vector<std::uint32_t> y = {0, 2, 1, 2};
  LinearProbe probe{Matrix(num_classes, d), std::vector<double>(num_classes)};
  for (double& v : probe.weights.data()) v = normal(rng);
  for (double& v : probe.bias) v = normal(rng);

  const auto g = cross_entropy_gradient(probe, x, y);
  std::vector<double> params(probe.weights.data().begin(), probe.weights.data().end());
  params.insert(params.end(), probe.bias.begin(), probe.bias.end());
  const auto pts = x.to_rows();
  CHECK(g.loss == doctest::Approx(ce_oracle(params, pts, y, num_classes)));
  const auto fd = oracle::central_difference(
      [&](const std::vector<double>& p) { return ce_oracle(p, pts, y, num_classes); }, params, 1e-4);
  std::vector<double> analytic(g.grad_weights.data().begin(), g.grad_weights.data().end());
  analytic.insert(analytic.end(), g.grad_bias.begin(), g.grad_bias.end());
  CHECK(oracle::max_relative_error(analytic, fd) < 1e-4);
}

TEST_CASE("probe decision is invariant to a shared logit offset") {
  const auto set = two_blobs(5, 20);
  auto probe = train_linear_probe(set, {0.1, 200});
  const auto before = probe.predict_all(set);
  for (double& b : probe.bias) b += 123.0;
  CHECK(probe.predict_all(set) == before);
}

TEST_CASE("probe requires every class in training") {
  const auto set = testutil::make_set({{1, 0}, {0, 1}}, {0, 0}, 2);
  CHECK_THROWS_AS(train_linear_probe(set), ValidationError);
  CHECK_THROWS_AS(train_linear_probe(two_blobs(1, 3), {0.0, 10}), ValidationError);
}

TEST_CASE("macro F1 fixtures") {
  const std::vector<std::uint32_t> labels = {0, 0, 1, 1};
  auto perfect = macro_f1(labels, labels, 2);
  CHECK(perfect.per_class == std::vector<double>{1.0, 1.0});
  CHECK(perfect.macro == 1.0);

  // class 0: P = 1, R = 1/2 -> 2/3; class 1: P = 2/3, R = 1 -> 4/5; macro = 11/15
  const auto mixed = macro_f1(std::vector<std::uint32_t>{0, 1, 1, 1}, labels, 2);
  CHECK(std::abs(mixed.per_class[0] - 2.0 / 3.0) < 1e-12);
  CHECK(std::abs(mixed.per_class[1] - 0.8) < 1e-12);
  CHECK(std::abs(mixed.macro - 11.0 / 15.0) < 1e-12);

  const auto wrong = macro_f1(std::vector<std::uint32_t>{1, 1, 0, 0}, labels, 2);
  CHECK(wrong.macro == 0.0);

  // Class 2 never appears and is never predicted: 0/0 -> 0.
  const auto absent = macro_f1(labels, labels, 3);
  CHECK(absent.per_class[2] == 0.0);
  CHECK(std::abs(absent.macro - 2.0 / 3.0) < 1e-12);

  CHECK_THROWS_AS(macro_f1(labels, std::vector<std::uint32_t>{0}, 2), ValidationError);
  CHECK_THROWS_AS(macro_f1(labels, std::vector<std::uint32_t>{0, 0, 5, 1}, 2), ValidationError);
}

TEST_CASE("macro F1 permutes with class relabeling") {
  std::mt19937_64 rng(9);
  std::vector<std::uint32_t> y(60), p(60);
  for (auto& v : y) v = rng() % 4;
  for (auto& v : p) v = rng() % 4;
  const std::vector<std::uint32_t> perm = {2, 0, 3, 1};
  std::vector<std::uint32_t> y2(60), p2(60);
  for (std::size_t i = 0; i < 60; ++i) {
    y2[i] = perm[y[i]];
    p2[i] = perm[p[i]];
  }
  const auto a = macro_f1(p, y, 4);
  const auto b = macro_f1(p2, y2, 4);
  for (std::size_t c = 0; c < 4; ++c) CHECK(a.per_class[c] == b.per_class[perm[c]]);
  CHECK(a.macro == doctest::Approx(b.macro));
}

TEST_CASE("group report") {
  ClassStats stats;
  stats.group = {FrequencyGroup::Head, FrequencyGroup::Middle, FrequencyGroup::Tail};
  const auto r = group_report(std::vector<double>{0.9, 0.8, 0.7}, stats);
  CHECK(*r.head == 0.9);
  CHECK(*r.middle == 0.8);
  CHECK(*r.tail == 0.7);
  CHECK(r.overall == doctest::Approx(0.8));

  stats.group = {FrequencyGroup::Head, FrequencyGroup::Head};
  const auto heads = group_report(std::vector<double>{0.5, 0.7}, stats);
  CHECK(*heads.head == heads.overall);
  CHECK_FALSE(heads.tail.has_value());
  CHECK_FALSE(heads.middle.has_value());

  stats.group = {FrequencyGroup::Head, FrequencyGroup::Tail, FrequencyGroup::Tail};
  const auto masked = group_report(std::vector<double>{0.5, 0.2, 0.0}, stats, {true, true, false});
  CHECK(*masked.tail == 0.2);
  CHECK(masked.tail_classes == 1);
  CHECK(masked.overall == doctest::Approx(0.35));

  CHECK_THROWS_AS(group_report(std::vector<double>{0.5}, stats), ValidationError);
}

TEST_CASE("cosine distances") {
  CHECK(cosine_distance(std::vector<double>{1, 0}, std::vector<double>{2, 0}) == 0.0);
  CHECK(cosine_distance(std::vector<double>{1, 0}, std::vector<double>{0, 3}) == 1.0);
  CHECK(cosine_distance(std::vector<double>{1, 0}, std::vector<double>{-1, 0}) == 2.0);
  CHECK_THROWS_AS(cosine_distance(std::vector<double>{0, 0}, std::vector<double>{1, 0}),
                  DegenerateVectorError);
}

TEST_CASE("feature distances by group") {
  // head class 0 around (1,0), tail classes 1 and 2 at (0,1) and (1,1)
  std::vector<std::vector<float>> rows;
  std::vector<std::uint32_t> labels;
  for (int i = 0; i < 200; ++i) {
    rows.push_back({1.0f, 0.0f});
    labels.push_back(0);
  }
  rows.push_back({0.0f, 1.0f});
  labels.push_back(1);
  rows.push_back({1.0f, 1.0f});
  labels.push_back(2);
  const auto set = testutil::make_set(rows, labels);
  const auto stats = compute_class_stats(set);
  REQUIRE(stats.group[1] == FrequencyGroup::Tail);
  const auto r = feature_distances(set, stats);
  const double diag = 1.0 - 1.0 / std::sqrt(2.0);
  CHECK(*r.inter_head_tail == doctest::Approx((1.0 + diag) / 2.0));
  CHECK(*r.inter_tail_tail == doctest::Approx(diag));
  CHECK(*r.intra_tail == 0.0);

  const auto none = feature_distances(testutil::make_set({{1, 0}, {0, 1}}, {0, 1}),
                                      compute_class_stats(testutil::make_set({{1, 0}, {0, 1}}, {0, 1})));
  CHECK_FALSE(none.inter_head_tail.has_value());
  CHECK_FALSE(none.intra_tail.has_value());
}

TEST_CASE("stratified split") {
  std::vector<std::vector<float>> rows;
  std::vector<std::uint32_t> labels;
  for (std::uint32_t c = 0; c < 3; ++c)
    for (int i = 0; i < (c == 0 ? 50 : c == 1 ? 3 : 1); ++i) {
      rows.push_back({float(i)});
      labels.push_back(c);
    }
  const auto set = testutil::make_set(rows, labels);
  const auto split = stratified_split(set, 0.2, 4);
  std::vector<std::size_t> test_per_class(3, 0);
  for (auto i : split.test) ++test_per_class[set.label(i)];
  CHECK(test_per_class == std::vector<std::size_t>{10, 1, 0});
  CHECK(split.train.size() + split.test.size() == set.size());
  CHECK(split.train_only_classes == std::vector<std::uint32_t>{2});
  const auto again = stratified_split(set, 0.2, 4);
  CHECK(again.test == split.test);
  CHECK(again.hash == split.hash);
  CHECK(stratified_split(set, 0.2, 5).hash != split.hash);
  CHECK_THROWS_AS(stratified_split(set, 1.0, 4), ValidationError);
}

TEST_CASE("group table layout") {
  GroupReport r;
  r.head = 0.95;
  r.overall = 0.9;
  const auto table = format_group_table({{"raw", r}});
  CHECK(table.find("Head") != std::string::npos);
  CHECK(table.find("95.0") != std::string::npos);
  CHECK(table.find("-") != std::string::npos);
}
