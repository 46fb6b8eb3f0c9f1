#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "deblora/feature_store.hpp"
#include "deblora/matrix.hpp"

namespace deblora {

/// ReLU then spatial mean over an H x W x d map stored row-major (channels fastest).
std::vector<double> pool_features(std::span<const double> map, std::size_t height,
                                  std::size_t width, std::size_t channels);

struct ProbeConfig {
  double learning_rate = 0.1;
  std::size_t epochs = 1000;

  void validate() const;
};

/// Softmax linear classifier logits = W z + b.
struct LinearProbe {
  Matrix weights;  // C x d
  std::vector<double> bias;

  std::vector<double> logits(std::span<const double> z) const;
  /// argmax of the logits; ties go to the lowest class index.
  std::uint32_t predict(std::span<const double> z) const;
  std::vector<std::uint32_t> predict_all(const FeatureSet& set) const;
};

struct ProbeGradient {
  double loss = 0.0;
  Matrix grad_weights;
  std::vector<double> grad_bias;
};

/// Mean softmax cross-entropy over rows, with exact gradients.
ProbeGradient cross_entropy_gradient(const LinearProbe& probe, const Matrix& inputs,
                                     std::span<const std::uint32_t> labels);

/// Full-batch gradient descent from W = 0, b = 0. Every class must have a training sample.
LinearProbe train_linear_probe(const FeatureSet& train, const ProbeConfig& cfg = {});

struct F1Scores {
  std::vector<double> per_class;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<std::size_t> support;
  double macro = 0.0;
};

/// Per-class F1 = 2PR / (P + R), with every 0/0 taken as 0; macro is the unweighted mean.
F1Scores macro_f1(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> labels,
                  std::size_t num_classes);

struct GroupReport {
  std::vector<double> per_class_f1;
  std::optional<double> head;
  std::optional<double> middle;
  std::optional<double> tail;
  double overall = 0.0;
  /// Number of evaluated classes in each group (head, middle, tail).
  std::size_t head_classes = 0;
  std::size_t middle_classes = 0;
  std::size_t tail_classes = 0;
};

/// Unweighted per-group means. Classes with `evaluated[c] == false` are left out of every
/// mean; an empty span evaluates all classes. Groups without members are absent.
GroupReport group_report(std::span<const double> per_class_f1, const ClassStats& stats,
                         const std::vector<bool>& evaluated = {});

struct DistanceReport {
  std::optional<double> inter_head_tail;
  std::optional<double> inter_tail_tail;
  std::optional<double> intra_tail;
};

/// 1 - cos(u, v). Throws DegenerateVectorError if either vector has zero norm.
double cosine_distance(std::span<const double> u, std::span<const double> v);

/// Mean cosine distances between class centers (raw means) across head/tail and among tail
/// classes, and between tail samples and their own class center. Fields whose groups are
/// too small are absent.
DistanceReport feature_distances(const FeatureSet& set, const ClassStats& stats);

struct StratifiedSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  /// Classes with fewer than two samples: all rows train, class left out of test scores.
  std::vector<std::uint32_t> train_only_classes;
  /// FNV-1a over the per-row partition, hex encoded.
  std::string hash;
};

/// Per class, shuffles its rows and holds out max(1, round(test_fraction * n_c)) of them,
/// never the whole class.
StratifiedSplit stratified_split(const FeatureSet& set, double test_fraction, std::uint64_t seed);

void to_json(nlohmann::ordered_json& j, const GroupReport& report);
void to_json(nlohmann::ordered_json& j, const DistanceReport& report);

/// Head/Middle/Tail/Overall table, one row per labelled arm.
std::string format_group_table(const std::vector<std::pair<std::string, GroupReport>>& arms);

}  // namespace deblora
