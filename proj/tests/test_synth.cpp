#include <doctest.h>

#include <cmath>

#include "deblora/errors.hpp"
#include "deblora/synth.hpp"

using namespace deblora;

namespace {

SynthSpec one_class(std::size_t n, double sigma, std::uint64_t seed = 5) {
  SynthSpec spec;
  spec.d = 6;
  spec.num_attributes = 3;
  spec.noise_sigma = sigma;
  spec.seed = seed;
  spec.class_specs = {{n, {1.0, 0.0, 0.0}, ""}};
  return spec;
}

}  // namespace

TEST_CASE("zero noise one-hot class reproduces the prototype") {
  const auto spec = one_class(3, 0.0);
  const auto set = generate_synthetic(spec);
  const Matrix protos = attribute_prototypes(spec);
  REQUIRE(set.size() == 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < spec.d; ++j)
      CHECK(set.row(i)[j] == static_cast<float>(protos(0, j)));
}

TEST_CASE("prototypes have norm 10") {
  const Matrix protos = attribute_prototypes(default_benchmark_spec(3));
  for (std::size_t a = 0; a < protos.rows(); ++a) CHECK(norm(protos.row(a)) == doctest::Approx(10.0));
}

TEST_CASE("same spec gives bit-identical output; seed changes it") {
  const auto a = generate_synthetic(default_benchmark_spec(42));
  const auto b = generate_synthetic(default_benchmark_spec(42));
  const auto c = generate_synthetic(default_benchmark_spec(43));
  CHECK(a == b);
  CHECK_FALSE(a == c);
}

TEST_CASE("default benchmark shape and imbalance") {
  const auto set = generate_synthetic(default_benchmark_spec());
  CHECK(set.size() == 2670);
  CHECK(set.dim() == 16);
  const auto stats = compute_class_stats(set);
  CHECK(stats.dataset_gamma == 50.0);
  CHECK(stats.counts == std::vector<std::size_t>{1000, 800, 600, 200, 50, 20});
  // rows grouped by class
  for (std::size_t i = 1; i < set.size(); ++i) CHECK(set.label(i - 1) <= set.label(i));
}

TEST_CASE("default benchmark rare classes share attribute weight with a head class") {
  const auto spec = default_benchmark_spec();
  const auto stats = compute_class_stats(generate_synthetic(spec));
  for (std::size_t c = 4; c < 6; ++c) {
    double best_overlap = 0.0;
    for (auto h : stats.classes_in(FrequencyGroup::Head)) {
      double overlap = 0.0;
      for (std::size_t a = 0; a < spec.num_attributes; ++a)
        overlap += std::min(spec.class_specs[c].attribute_weights[a],
                            spec.class_specs[h].attribute_weights[a]);
      best_overlap = std::max(best_overlap, overlap);
    }
    CHECK(best_overlap >= 0.4);
  }
}

TEST_CASE("empirical class mean converges to the attribute mixture") {
  SynthSpec spec = one_class(4000, 1.0, 9);
  spec.class_specs[0].attribute_weights = {0.2, 0.5, 0.3};
  const auto set = generate_synthetic(spec);
  const Matrix protos = attribute_prototypes(spec);
  const double bound = 3.0 * spec.noise_sigma / std::sqrt(4000.0);
  for (std::size_t j = 0; j < spec.d; ++j) {
    double expected = 0.0;
    for (std::size_t a = 0; a < 3; ++a) expected += spec.class_specs[0].attribute_weights[a] * protos(a, j);
    double mean = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i) mean += set.row(i)[j];
    mean /= double(set.size());
    CHECK(std::abs(mean - expected) <= bound + 1e-5);
  }
}

TEST_CASE("zero noise gives zero within-class variance") {
  SynthSpec spec = one_class(5, 0.0);
  spec.class_specs.push_back({4, {0.1, 0.2, 0.7}, "mix"});
  const auto set = generate_synthetic(spec);
  for (std::size_t i = 1; i < set.size(); ++i)
    if (set.label(i) == set.label(i - 1))
      for (std::size_t j = 0; j < spec.d; ++j) CHECK(set.row(i)[j] == set.row(i - 1)[j]);
  CHECK(set.class_names()[1] == "mix");
}

TEST_CASE("invalid specs are rejected") {
  auto spec = one_class(3, 1.0);
  spec.class_specs[0].attribute_weights = {0.5, 0.4, 0.0};
  CHECK_THROWS_AS(generate_synthetic(spec), ValidationError);
  spec.class_specs[0].attribute_weights = {1.5, -0.5, 0.0};
  CHECK_THROWS_AS(generate_synthetic(spec), ValidationError);
  spec.class_specs[0].attribute_weights = {1.0, 0.0};
  CHECK_THROWS_AS(generate_synthetic(spec), ValidationError);
  spec = one_class(0, 1.0);
  CHECK_THROWS_AS(generate_synthetic(spec), ValidationError);
  spec = one_class(3, -1.0);
  CHECK_THROWS_AS(generate_synthetic(spec), ValidationError);
}

TEST_CASE("spec JSON uses the documented field names") {
  const auto spec = default_benchmark_spec(17);
  const nlohmann::ordered_json j = spec;
  CHECK(j.contains("d"));
  CHECK(j.contains("num_attributes"));
  CHECK(j.at("class_specs").at(0).contains("sample_count"));
  CHECK(j.at("class_specs").at(0).contains("attribute_weights"));
  CHECK(j.contains("noise_sigma"));
  CHECK(j.at("seed") == 17);
  const auto back = j.get<SynthSpec>();
  CHECK(generate_synthetic(back) == generate_synthetic(spec));
  CHECK_THROWS_AS(nlohmann::ordered_json::parse(R"({"d":2})").get<SynthSpec>(), FormatError);
}
