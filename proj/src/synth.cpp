#include "deblora/synth.hpp"

#include <cmath>
#include <random>

#include "deblora/errors.hpp"

namespace deblora {

namespace {
constexpr double kPrototypeNorm = 10.0;
constexpr double kSimplexTolerance = 1e-6;
}  // namespace

void SynthSpec::validate() const {
  if (d == 0) throw ValidationError("synth: d must be >= 1");
  if (num_attributes == 0) throw ValidationError("synth: num_attributes must be >= 1");
  if (class_specs.empty()) throw ValidationError("synth: at least one class is required");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
    throw ValidationError("synth: noise_sigma must be finite and >= 0");
  for (std::size_t c = 0; c < class_specs.size(); ++c) {
    const auto& cls = class_specs[c];
    const std::string where = "synth: class " + std::to_string(c);
    if (cls.sample_count == 0) throw ValidationError(where + " needs sample_count >= 1");
    if (cls.attribute_weights.size() != num_attributes)
      throw ValidationError(where + " must have " + std::to_string(num_attributes) +
                            " attribute weights");
    double sum = 0.0;
    for (double w : cls.attribute_weights) {
      if (!(w >= 0.0) || !std::isfinite(w))
        throw ValidationError(where + " has a negative or non-finite attribute weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > kSimplexTolerance)
      throw ValidationError(where + " attribute weights sum to " + std::to_string(sum) +
                            ", expected 1");
  }
}

SynthSpec default_benchmark_spec(std::uint64_t seed) {
  SynthSpec spec;
  spec.d = 16;
  spec.num_attributes = 5;
  spec.noise_sigma = 1.0;
  spec.seed = seed;
  spec.class_specs = {
      {1000, {1.0, 0.0, 0.0, 0.0, 0.0}, ""},
      {800, {0.0, 1.0, 0.0, 0.0, 0.0}, ""},
      {600, {0.0, 0.0, 1.0, 0.0, 0.0}, ""},
      {200, {0.0, 0.0, 0.0, 1.0, 0.0}, ""},
      {50, {0.6, 0.0, 0.0, 0.0, 0.4}, ""},
      {20, {0.0, 0.6, 0.0, 0.0, 0.4}, ""},
  };
  return spec;
}

namespace {

Matrix draw_prototypes(const SynthSpec& spec, std::mt19937_64& rng,
                       std::normal_distribution<double>& normal) {
  Matrix protos(spec.num_attributes, spec.d);
  for (std::size_t a = 0; a < spec.num_attributes; ++a) {
    auto row = protos.row(a);
    for (double& v : row) v = normal(rng);
    double n = norm(row);
    // A zero draw has probability zero; redraw rather than divide by it.
    while (n == 0.0) {
      for (double& v : row) v = normal(rng);
      n = norm(row);
    }
    for (double& v : row) v *= kPrototypeNorm / n;
  }
  return protos;
}

}  // namespace

Matrix attribute_prototypes(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  return draw_prototypes(spec, rng, normal);
}

FeatureSet generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Matrix protos = draw_prototypes(spec, rng, normal);

  std::size_t total = 0;
  for (const auto& cls : spec.class_specs) total += cls.sample_count;

  std::vector<float> features;
  features.reserve(total * spec.d);
  std::vector<std::uint32_t> labels;
  labels.reserve(total);
  std::vector<std::string> names;
  std::vector<double> mean(spec.d);

  for (std::size_t c = 0; c < spec.class_specs.size(); ++c) {
    const auto& cls = spec.class_specs[c];
    names.push_back(cls.name.empty() ? "class_" + std::to_string(c) : cls.name);
    std::fill(mean.begin(), mean.end(), 0.0);
    for (std::size_t a = 0; a < spec.num_attributes; ++a) {
      const double w = cls.attribute_weights[a];
      auto proto = protos.row(a);
      for (std::size_t j = 0; j < spec.d; ++j) mean[j] += w * proto[j];
    }
    for (std::size_t s = 0; s < cls.sample_count; ++s) {
      for (std::size_t j = 0; j < spec.d; ++j)
        features.push_back(static_cast<float>(mean[j] + spec.noise_sigma * normal(rng)));
      labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  return FeatureSet(std::move(features), spec.d, std::move(labels), std::move(names));
}

void to_json(nlohmann::ordered_json& j, const SynthSpec& spec) {
  j = nlohmann::ordered_json::object();
  j["d"] = spec.d;
  j["num_attributes"] = spec.num_attributes;
  auto classes = nlohmann::ordered_json::array();
  for (const auto& cls : spec.class_specs) {
    nlohmann::ordered_json entry;
    entry["sample_count"] = cls.sample_count;
    entry["attribute_weights"] = cls.attribute_weights;
    if (!cls.name.empty()) entry["name"] = cls.name;
    classes.push_back(std::move(entry));
  }
  j["class_specs"] = std::move(classes);
  j["noise_sigma"] = spec.noise_sigma;
  j["seed"] = spec.seed;
}

void from_json(const nlohmann::ordered_json& j, SynthSpec& spec) {
  try {
    spec = SynthSpec{};
    spec.d = j.at("d").get<std::size_t>();
    spec.num_attributes = j.at("num_attributes").get<std::size_t>();
    spec.noise_sigma = j.at("noise_sigma").get<double>();
    spec.seed = j.value("seed", std::uint64_t{0});
    for (const auto& entry : j.at("class_specs")) {
      SynthClass cls;
      cls.sample_count = entry.at("sample_count").get<std::size_t>();
      cls.attribute_weights = entry.at("attribute_weights").get<std::vector<double>>();
      cls.name = entry.value("name", std::string{});
      spec.class_specs.push_back(std::move(cls));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("synth spec: ") + e.what());
  }
  spec.validate();
}

}  // namespace deblora
