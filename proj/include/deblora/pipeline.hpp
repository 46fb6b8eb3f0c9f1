#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "deblora/constrained_kmeans.hpp"
#include "deblora/debias.hpp"
#include "deblora/errors.hpp"
#include "deblora/eval_probe.hpp"
#include "deblora/feature_store.hpp"
#include "deblora/lowrank_adapter.hpp"

namespace deblora {

inline constexpr const char* kToolVersion = "deblora 0.1.0";

/// A stage failed; keeps the category of the underlying error.
class PipelineError : public Error {
 public:
  PipelineError(const std::string& stage, const Error& cause)
      : Error(cause.kind(), "stage '" + stage + "' failed: " + cause.what()), stage_(stage) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct PipelineConfig {
  std::filesystem::path input;
  FileFormat format = FileFormat::Binary;
  /// k-means settings; the seed field is replaced by `seed`.
  KMeansConfig kmeans;
  std::size_t rank = 8;
  SplitThresholds thresholds;
  /// Adapter optimizer; the seed field is replaced by `seed`.
  AdapterTrainConfig adapter;
  ProbeConfig probe;
  std::uint64_t seed = 0;
  bool tail_only = false;
  std::filesystem::path out_dir;

  void validate() const;
};

void to_json(nlohmann::ordered_json& j, const PipelineConfig& cfg);
/// Missing keys keep their defaults.
void from_json(const nlohmann::ordered_json& j, PipelineConfig& cfg);

struct RunManifest {
  nlohmann::ordered_json config;
  std::vector<std::pair<std::string, double>> stage_seconds;
  /// Artifact name -> path, in write order.
  std::vector<std::pair<std::string, std::filesystem::path>> artifacts;
  std::string tool_version = kToolVersion;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
};

void to_json(nlohmann::ordered_json& j, const RunManifest& manifest);

// Individual stages. The CLI subcommands and run_deblora share these.

ClusterModel stage_cluster(const FeatureSet& set, const KMeansConfig& kmeans, std::uint64_t seed);
DebiasPlan stage_debias(const FeatureSet& set, const SplitThresholds& thresholds,
                        const ClusterModel& clusters, bool tail_only);
/// Trains g on the plan's training rows: inputs are `set`, targets are `targets` (same row order).
AdapterTrainResult stage_train(const FeatureSet& set, const FeatureSet& targets,
                               const DebiasPlan& plan, std::size_t rank,
                               const AdapterTrainConfig& adapter, std::uint64_t seed);

/// load -> stats -> constrained k-means -> plan -> adapter training, writing clusters.json,
/// plan.json, targets.<ext>, adapter.json and manifest.json into cfg.out_dir.
/// On failure the files written so far are removed and a PipelineError is thrown.
RunManifest run_deblora(const PipelineConfig& cfg);

struct EvalConfig {
  std::filesystem::path features;
  FileFormat format = FileFormat::Binary;
  std::optional<std::filesystem::path> adapter;
  ProbeConfig probe;
  SplitThresholds thresholds;
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;
};

struct EvalReport {
  GroupReport groups;
  F1Scores scores;
  DistanceReport distances;
  std::string split_hash;
  std::vector<std::uint32_t> train_only_classes;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
};

/// Applies `adapter` (when given) to every row, trains a probe on the stratified train split
/// and scores it on the test split. Frequency groups come from the unsplit set.
EvalReport evaluate(const FeatureSet& set, const LowRankAdapter* adapter, const ProbeConfig& probe,
                    const SplitThresholds& thresholds, double test_fraction,
                    std::uint64_t split_seed);
EvalReport run_eval(const EvalConfig& cfg);

/// g applied to every row, rounded back to float32 features.
FeatureSet apply_adapter(const FeatureSet& set, const LowRankAdapter& adapter);

void to_json(nlohmann::ordered_json& j, const EvalReport& report);

nlohmann::ordered_json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j);

}  // namespace deblora
