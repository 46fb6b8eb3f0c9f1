#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "deblora/feature_store.hpp"
#include "deblora/matrix.hpp"

namespace deblora {

struct SynthClass {
  std::size_t sample_count = 0;
  /// Mixture weights over the shared attribute prototypes; nonnegative, summing to 1.
  std::vector<double> attribute_weights;
  /// Optional; defaults to "class_<index>".
  std::string name;
};

/// Recipe for a synthetic long-tailed set in which every class is a mixture of shared
/// attribute prototypes plus isotropic Gaussian noise.
struct SynthSpec {
  std::size_t d = 16;
  std::size_t num_attributes = 5;
  std::vector<SynthClass> class_specs;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Six classes with counts {1000, 800, 600, 200, 50, 20} over five attributes, d = 16,
/// noise 1.0. The two rarest classes borrow most of their mixture from head classes.
SynthSpec default_benchmark_spec(std::uint64_t seed = 0);

/// num_attributes x d matrix of prototypes: standard normal draws scaled to norm 10.
/// These are the first draws of the generator's RNG stream.
Matrix attribute_prototypes(const SynthSpec& spec);

/// Rows are grouped by class in class order. Deterministic for a given spec.
FeatureSet generate_synthetic(const SynthSpec& spec);

void to_json(nlohmann::ordered_json& j, const SynthSpec& spec);
void from_json(const nlohmann::ordered_json& j, SynthSpec& spec);

}  // namespace deblora
