#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deblora/matrix.hpp"

namespace deblora {

/// Labeled feature vectors: N rows of d float32 coordinates, each with a class index in [0, C).
///
/// Immutable after construction. The constructor enforces: N >= 1, d >= 1, every label < C,
/// every feature finite, class names unique.
class FeatureSet {
 public:
  FeatureSet(std::vector<float> features, std::size_t dim, std::vector<std::uint32_t> labels,
             std::vector<std::string> class_names);

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t num_classes() const noexcept { return class_names_.size(); }

  std::span<const float> row(std::size_t i) const { return {features_.data() + i * dim_, dim_}; }
  std::uint32_t label(std::size_t i) const { return labels_[i]; }

  std::span<const float> features() const noexcept { return features_; }
  std::span<const std::uint32_t> labels() const noexcept { return labels_; }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }

  /// Rows widened to double.
  Matrix to_matrix() const;

  /// Selected rows (in the given order); class names and C are kept.
  FeatureSet subset(std::span<const std::size_t> rows) const;

  /// Same labels and class names with new feature values (rounded to float32).
  FeatureSet with_features(const Matrix& values) const;

  bool operator==(const FeatureSet&) const = default;

 private:
  std::vector<float> features_;
  std::size_t dim_;
  std::vector<std::uint32_t> labels_;
  std::vector<std::string> class_names_;
};

enum class FileFormat { Csv, Binary };

FileFormat parse_format(std::string_view name);
std::string_view format_name(FileFormat format);
/// Conventional extension for a format: ".csv" or ".fset".
std::string_view format_extension(FileFormat format);

/// Reads a feature set. CSV: header `label,f0,...,f{d-1}`; integer labels are used as class
/// indices, any other label text is interned in first-appearance order. Binary: "FSET1" layout.
FeatureSet load_features(const std::filesystem::path& path, FileFormat format);
void save_features(const FeatureSet& set, const std::filesystem::path& path, FileFormat format);

/// In-memory codecs used by load_features/save_features.
FeatureSet parse_csv(std::string_view text);
std::string to_csv(const FeatureSet& set);
FeatureSet decode_binary(std::span<const std::byte> bytes);
std::vector<std::byte> encode_binary(const FeatureSet& set);

enum class FrequencyGroup { Head, Middle, Tail };
std::string_view group_name(FrequencyGroup group);

struct SplitThresholds {
  double tail_max_freq = 0.01;
  double head_min_freq = 0.05;

  void validate() const;
};

struct ClassStats {
  std::vector<std::size_t> counts;
  std::vector<double> frequencies;
  std::vector<FrequencyGroup> group;
  /// gamma[c] = max class count / counts[c].
  std::vector<double> gamma;
  double dataset_gamma = 1.0;
  std::size_t total = 0;

  std::vector<std::uint32_t> classes_in(FrequencyGroup g) const;
};

/// Frequencies strictly below tail_max_freq are Tail, strictly above head_min_freq are Head.
ClassStats compute_class_stats(const FeatureSet& set, const SplitThresholds& thresholds = {});

}  // namespace deblora
