#include "deblora/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <iterator>

namespace deblora {

void PipelineConfig::validate() const {
  if (kmeans.k == 0) throw ValidationError("config: k must be >= 1");
  if (!(kmeans.rho >= 1.0)) throw ValidationError("config: rho must be >= 1");
  if (kmeans.max_iter == 0) throw ValidationError("config: max_iter must be >= 1");
  if (rank == 0) throw ValidationError("config: rank must be >= 1");
  thresholds.validate();
  adapter.validate();
  probe.validate();
}

void to_json(nlohmann::ordered_json& j, const PipelineConfig& cfg) {
  j = nlohmann::ordered_json::object();
  j["input"] = cfg.input.string();
  j["format"] = std::string(format_name(cfg.format));
  j["k"] = cfg.kmeans.k;
  j["rho"] = cfg.kmeans.rho;
  j["normalize"] = cfg.kmeans.normalize;
  j["max_iter"] = cfg.kmeans.max_iter;
  j["tol"] = cfg.kmeans.tol;
  j["rank"] = cfg.rank;
  j["tail_max_freq"] = cfg.thresholds.tail_max_freq;
  j["head_min_freq"] = cfg.thresholds.head_min_freq;
  j["adapter"] = {{"learning_rate", cfg.adapter.learning_rate}, {"epochs", cfg.adapter.epochs}};
  j["probe"] = {{"learning_rate", cfg.probe.learning_rate}, {"epochs", cfg.probe.epochs}};
  j["seed"] = cfg.seed;
  j["tail_only"] = cfg.tail_only;
  j["out"] = cfg.out_dir.string();
}

void from_json(const nlohmann::ordered_json& j, PipelineConfig& cfg) {
  try {
    if (j.contains("input")) cfg.input = j.at("input").get<std::string>();
    if (j.contains("format")) cfg.format = parse_format(j.at("format").get<std::string>());
    cfg.kmeans.k = j.value("k", cfg.kmeans.k);
    cfg.kmeans.rho = j.value("rho", cfg.kmeans.rho);
    cfg.kmeans.normalize = j.value("normalize", cfg.kmeans.normalize);
    cfg.kmeans.max_iter = j.value("max_iter", cfg.kmeans.max_iter);
    cfg.kmeans.tol = j.value("tol", cfg.kmeans.tol);
    cfg.rank = j.value("rank", cfg.rank);
    cfg.thresholds.tail_max_freq = j.value("tail_max_freq", cfg.thresholds.tail_max_freq);
    cfg.thresholds.head_min_freq = j.value("head_min_freq", cfg.thresholds.head_min_freq);
    if (j.contains("adapter")) {
      const auto& a = j.at("adapter");
      cfg.adapter.learning_rate = a.value("learning_rate", cfg.adapter.learning_rate);
      cfg.adapter.epochs = a.value("epochs", cfg.adapter.epochs);
    }
    if (j.contains("probe")) {
      const auto& p = j.at("probe");
      cfg.probe.learning_rate = p.value("learning_rate", cfg.probe.learning_rate);
      cfg.probe.epochs = p.value("epochs", cfg.probe.epochs);
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.tail_only = j.value("tail_only", cfg.tail_only);
    if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("pipeline config: ") + e.what());
  }
}

void to_json(nlohmann::ordered_json& j, const RunManifest& manifest) {
  j = nlohmann::ordered_json::object();
  j["tool_version"] = manifest.tool_version;
  j["seed"] = manifest.seed;
  j["config"] = manifest.config;
  auto artifacts = nlohmann::ordered_json::object();
  for (const auto& [name, path] : manifest.artifacts) artifacts[name] = path.string();
  j["artifacts"] = std::move(artifacts);
  auto timings = nlohmann::ordered_json::object();
  for (const auto& [stage, seconds] : manifest.stage_seconds) timings[stage] = seconds;
  j["stage_seconds"] = std::move(timings);
  j["final_loss"] = manifest.final_loss;
}

nlohmann::ordered_json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  try {
    return nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

ClusterModel stage_cluster(const FeatureSet& set, const KMeansConfig& kmeans, std::uint64_t seed) {
  KMeansConfig cfg = kmeans;
  cfg.seed = seed;
  return fit(set, cfg);
}

DebiasPlan stage_debias(const FeatureSet& set, const SplitThresholds& thresholds,
                        const ClusterModel& clusters, bool tail_only) {
  const ClassStats stats = compute_class_stats(set, thresholds);
  DebiasPlan plan = build_plan(set, stats, clusters);
  plan.tail_only = tail_only;
  return plan;
}

AdapterTrainResult stage_train(const FeatureSet& set, const FeatureSet& targets,
                               const DebiasPlan& plan, std::size_t rank,
                               const AdapterTrainConfig& adapter, std::uint64_t seed) {
  if (targets.size() != set.size() || targets.dim() != set.dim())
    throw ValidationError("targets do not match the feature set shape");
  const auto rows = training_rows(plan, set);
  if (rows.empty()) throw ValidationError("tail-only training needs at least one tail sample");
  const Matrix inputs = set.subset(rows).to_matrix();
  const Matrix goals = targets.subset(rows).to_matrix();
  AdapterTrainConfig cfg = adapter;
  cfg.seed = seed;
  return adapter_train(adapter_init(set.dim(), rank, seed), inputs, goals, cfg);
}

namespace {

class StageRunner {
 public:
  explicit StageRunner(RunManifest& manifest) : manifest_(manifest) {}

  template <typename F>
  auto run(const std::string& stage, F&& body) {
    const auto start = std::chrono::steady_clock::now();
    try {
      if constexpr (std::is_void_v<decltype(body())>) {
        body();
        record(stage, start);
      } else {
        auto result = body();
        record(stage, start);
        return result;
      }
    } catch (const PipelineError&) {
      throw;
    } catch (const Error& e) {
      throw PipelineError(stage, e);
    } catch (const std::exception& e) {
      throw PipelineError(stage, InternalError(e.what()));
    }
  }

 private:
  void record(const std::string& stage, std::chrono::steady_clock::time_point start) {
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    manifest_.stage_seconds.emplace_back(stage, elapsed.count());
  }
  RunManifest& manifest_;
};

}  // namespace

RunManifest run_deblora(const PipelineConfig& cfg) {
  RunManifest manifest;
  manifest.seed = cfg.seed;
  to_json(manifest.config, cfg);
  StageRunner stages(manifest);
  std::vector<std::filesystem::path> written;

  try {
    stages.run("config", [&] { cfg.validate(); });
    stages.run("prepare", [&] {
      std::error_code ec;
      std::filesystem::create_directories(cfg.out_dir, ec);
      if (ec) throw IoError("cannot create '" + cfg.out_dir.string() + "': " + ec.message());
    });
    auto emit = [&](const std::string& name, const std::filesystem::path& path, auto&& writer) {
      written.push_back(path);
      writer(path);
      manifest.artifacts.emplace_back(name, path);
    };

    const FeatureSet set = stages.run("load", [&] { return load_features(cfg.input, cfg.format); });
    stages.run("stats", [&] { return compute_class_stats(set, cfg.thresholds); });
    const ClusterModel clusters = stages.run("cluster", [&] {
      ClusterModel model = stage_cluster(set, cfg.kmeans, cfg.seed);
      nlohmann::ordered_json j = model;
      emit("clusters", cfg.out_dir / "clusters.json", [&](const auto& p) { write_json(p, j); });
      return model;
    });
    const auto [plan, targets] = stages.run("debias", [&] {
      DebiasPlan p = stage_debias(set, cfg.thresholds, clusters, cfg.tail_only);
      FeatureSet t = set.with_features(p.targets);
      nlohmann::ordered_json j = p;
      emit("plan", cfg.out_dir / "plan.json", [&](const auto& path) { write_json(path, j); });
      const auto target_path =
          cfg.out_dir / ("targets" + std::string(format_extension(cfg.format)));
      emit("targets", target_path, [&](const auto& path) { save_features(t, path, cfg.format); });
      return std::pair<DebiasPlan, FeatureSet>(std::move(p), std::move(t));
    });
    stages.run("train", [&] {
      // Targets go through float32 exactly as the standalone `train` stage reads them back.
      const AdapterTrainResult trained =
          stage_train(set, targets, plan, cfg.rank, cfg.adapter, cfg.seed);
      manifest.final_loss = trained.loss_history[trained.best_epoch];
      nlohmann::ordered_json j = trained.adapter;
      emit("adapter", cfg.out_dir / "adapter.json", [&](const auto& p) { write_json(p, j); });
    });
    stages.run("manifest", [&] {
      nlohmann::ordered_json j = manifest;
      written.push_back(cfg.out_dir / "manifest.json");
      write_json(cfg.out_dir / "manifest.json", j);
    });
  } catch (...) {
    for (const auto& path : written) {
      std::error_code ec;
      std::filesystem::remove(path, ec);
    }
    throw;
  }
  return manifest;
}

FeatureSet apply_adapter(const FeatureSet& set, const LowRankAdapter& adapter) {
  if (adapter.dim() != set.dim()) throw ValidationError("adapter dimension differs from features");
  return set.with_features(adapter.forward_rows(set.to_matrix()));
}

EvalReport evaluate(const FeatureSet& set, const LowRankAdapter* adapter, const ProbeConfig& probe,
                    const SplitThresholds& thresholds, double test_fraction,
                    std::uint64_t split_seed) {
  const ClassStats stats = compute_class_stats(set, thresholds);
  const FeatureSet features = adapter ? apply_adapter(set, *adapter) : set;
  const StratifiedSplit split = stratified_split(features, test_fraction, split_seed);
  for (auto c : split.train_only_classes)
    std::cerr << "warning: class '" << set.class_names()[c]
              << "' has fewer than 2 samples; kept for training only\n";

  const FeatureSet train = features.subset(split.train);
  const LinearProbe model = train_linear_probe(train, probe);

  EvalReport report;
  report.split_hash = split.hash;
  report.train_only_classes = split.train_only_classes;
  report.train_size = split.train.size();
  report.test_size = split.test.size();
  if (split.test.empty()) throw ValidationError("evaluation split has no test samples");
  const FeatureSet test = features.subset(split.test);
  const auto predictions = model.predict_all(test);
  report.scores = macro_f1(predictions, test.labels(), set.num_classes());

  std::vector<bool> evaluated(set.num_classes(), true);
  for (auto c : split.train_only_classes) evaluated[c] = false;
  report.groups = group_report(report.scores.per_class, stats, evaluated);
  report.distances = feature_distances(features, stats);
  return report;
}

EvalReport run_eval(const EvalConfig& cfg) {
  const FeatureSet set = load_features(cfg.features, cfg.format);
  std::optional<LowRankAdapter> adapter;
  if (cfg.adapter) adapter = adapter_from_json(read_json(*cfg.adapter));
  return evaluate(set, adapter ? &*adapter : nullptr, cfg.probe, cfg.thresholds, cfg.test_fraction,
                  cfg.split_seed);
}

void to_json(nlohmann::ordered_json& j, const EvalReport& report) {
  j = nlohmann::ordered_json::object();
  j["split_hash"] = report.split_hash;
  j["train_size"] = report.train_size;
  j["test_size"] = report.test_size;
  j["train_only_classes"] = report.train_only_classes;
  j["macro_f1"] = report.groups;
  j["distances"] = report.distances;
}

}  // namespace deblora
