// deblora: command-line front end for the de-biasing pipeline.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "deblora/pipeline.hpp"
#include "deblora/synth.hpp"

namespace fs = std::filesystem;
using deblora::FileFormat;
using json = nlohmann::ordered_json;

namespace {

int exit_code(deblora::ErrorKind kind) {
  switch (kind) {
    case deblora::ErrorKind::Validation: return 1;
    case deblora::ErrorKind::Io: return 2;
    case deblora::ErrorKind::Divergence: return 3;
    case deblora::ErrorKind::Internal: return 1;
  }
  return 1;
}

struct GlobalOptions {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "binary";
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw deblora::IoError("cannot create '" + dir.string() + "': " + ec.message());
}

json stats_json(const deblora::ClassStats& stats, const deblora::FeatureSet& set) {
  json j = json::object();
  j["total"] = stats.total;
  j["dataset_gamma"] = stats.dataset_gamma;
  json classes = json::array();
  for (std::size_t c = 0; c < stats.counts.size(); ++c) {
    json entry;
    entry["name"] = set.class_names()[c];
    entry["count"] = stats.counts[c];
    entry["frequency"] = stats.frequencies[c];
    entry["group"] = std::string(deblora::group_name(stats.group[c]));
    entry["gamma"] = stats.gamma[c];
    classes.push_back(std::move(entry));
  }
  j["classes"] = std::move(classes);
  return j;
}

void print_stats(const deblora::ClassStats& stats, const deblora::FeatureSet& set) {
  std::printf("%-20s %8s %9s %-7s %8s\n", "class", "count", "freq", "group", "gamma");
  for (std::size_t c = 0; c < stats.counts.size(); ++c)
    std::printf("%-20s %8zu %8.3f%% %-7s %8.2f\n", set.class_names()[c].c_str(), stats.counts[c],
                100.0 * stats.frequencies[c], std::string(deblora::group_name(stats.group[c])).c_str(),
                stats.gamma[c]);
  std::printf("N = %zu, d = %zu, imbalance ratio = %.2f\n", set.size(), set.dim(),
              stats.dataset_gamma);
}

void print_distances(const deblora::DistanceReport& r) {
  auto show = [](const char* name, const std::optional<double>& v) {
    if (v)
      std::printf("%-16s %.4f\n", name, *v);
    else
      std::printf("%-16s -\n", name);
  };
  show("inter head-tail", r.inter_head_tail);
  show("inter tail-tail", r.inter_tail_tail);
  show("intra tail", r.intra_tail);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"debLoRA de-biasing pipeline for long-tailed feature sets"};
  app.set_version_flag("--version", deblora::kToolVersion);
  app.require_subcommand(1);

  GlobalOptions global;
  app.add_option("--config", global.config, "JSON configuration file");
  auto* opt_seed = app.add_option("--seed", global.seed, "random seed");
  app.add_option("--out", global.out, "output directory");
  auto* opt_format = app.add_option("--format", global.format, "feature file format")
                         ->check(CLI::IsMember({"csv", "binary"}));

  // Pipeline-wide knobs, shared by several subcommands.
  deblora::PipelineConfig defaults;
  std::string input;
  std::size_t k = 0;
  double rho = 0.0;
  bool normalize = false;
  std::size_t max_iter = 0;
  double tail_max = 0.0, head_min = 0.0;
  std::size_t rank = 0, epochs = 0, probe_epochs = 0;
  double lr = 0.0, probe_lr = 0.0, test_fraction = 0.2;
  bool tail_only = false;
  std::string clusters_path, targets_path, plan_path, adapter_path;
  std::optional<std::uint64_t> split_seed;

  auto add_input = [&](CLI::App* sub) {
    return sub->add_option("--input,-i", input, "feature file");
  };
  auto add_thresholds = [&](CLI::App* sub) {
    sub->add_option("--tail-max-freq", tail_max, "tail if class frequency is below this");
    sub->add_option("--head-min-freq", head_min, "head if class frequency is above this");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic long-tailed feature set");
  auto* stats = app.add_subcommand("stats", "class counts, frequency groups, imbalance ratios");
  add_input(stats);
  add_thresholds(stats);

  auto* cluster = app.add_subcommand("cluster", "constrained k-means over a feature set");
  add_input(cluster);
  cluster->add_option("--k", k, "number of clusters (default 32)");
  cluster->add_option("--rho", rho, "balance factor (default 4)");
  cluster->add_flag("--normalize", normalize, "cluster unit-L2 rows");
  cluster->add_option("--max-iter", max_iter, "iteration cap (default 100)");

  auto* debias = app.add_subcommand("debias", "de-biased centers and calibrated targets");
  add_input(debias);
  add_thresholds(debias);
  debias->add_option("--clusters", clusters_path, "clusters.json from `cluster`")->required();
  debias->add_flag("--tail-only", tail_only, "train the adapter on tail rows only");

  auto* train = app.add_subcommand("train", "fit the low-rank adapter to calibrated targets");
  add_input(train);
  train->add_option("--targets", targets_path, "targets file from `debias`")->required();
  train->add_option("--plan", plan_path, "plan.json from `debias`")->required();
  train->add_option("--rank", rank, "adapter rank (default 8)");
  train->add_option("--lr", lr, "learning rate (default 1e-2)");
  train->add_option("--epochs", epochs, "epochs (default 500)");

  auto* probe = app.add_subcommand("probe", "linear-probe macro F1 by frequency group");
  add_input(probe);
  add_thresholds(probe);
  probe->add_option("--adapter", adapter_path, "adapter.json to apply before probing");
  probe->add_option("--split-seed", split_seed, "train/test split seed (default --seed)");
  probe->add_option("--test-fraction", test_fraction, "held-out share per class")
      ->check(CLI::Range(0.0, 1.0));
  probe->add_option("--probe-lr", probe_lr, "probe learning rate (default 0.1)");
  probe->add_option("--probe-epochs", probe_epochs, "probe epochs (default 1000)");

  auto* analyze = app.add_subcommand("analyze", "inter/intra-class cosine distances");
  add_input(analyze);
  add_thresholds(analyze);

  auto* pipeline = app.add_subcommand("pipeline", "cluster, debias and train in one run");
  add_input(pipeline);
  pipeline->add_option("--k", k, "number of clusters");
  pipeline->add_option("--rho", rho, "balance factor");
  pipeline->add_flag("--normalize", normalize, "cluster unit-L2 rows");
  pipeline->add_option("--rank", rank, "adapter rank");
  pipeline->add_flag("--tail-only", tail_only, "train the adapter on tail rows only");

  for (auto* sub : {synth, stats, cluster, debias, train, probe, analyze, pipeline})
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  // Any subcommand's flag, if given, overrides the config file.
  auto given = [&](const char* name) {
    for (auto* sub : app.get_subcommands())
      if (auto* o = sub->get_option_no_throw(name); o && o->count() > 0) return true;
    return false;
  };

  try {
    const FileFormat format = deblora::parse_format(global.format);
    const fs::path out = global.out.empty() ? fs::path(".") : fs::path(global.out);

    if (synth->parsed()) {
      deblora::SynthSpec spec = deblora::default_benchmark_spec();
      if (!global.config.empty()) spec = deblora::read_json(global.config).get<deblora::SynthSpec>();
      if (opt_seed->count() > 0) spec.seed = global.seed;
      const auto set = deblora::generate_synthetic(spec);
      ensure_dir(out);
      const auto path = out / ("features" + std::string(deblora::format_extension(format)));
      deblora::save_features(set, path, format);
      deblora::write_json(out / "synth_spec.json", json(spec));
      std::cout << "wrote " << path.string() << " (N=" << set.size() << ", d=" << set.dim()
                << ", C=" << set.num_classes() << ")\n";
      return 0;
    }

    deblora::PipelineConfig cfg = defaults;
    if (!global.config.empty()) deblora::from_json(deblora::read_json(global.config), cfg);
    if (!input.empty()) cfg.input = input;
    if (opt_format->count() > 0 || global.config.empty()) cfg.format = format;
    if (opt_seed->count() > 0) cfg.seed = global.seed;
    if (!global.out.empty()) cfg.out_dir = global.out;
    if (given("--k")) cfg.kmeans.k = k;
    if (given("--rho")) cfg.kmeans.rho = rho;
    if (given("--max-iter")) cfg.kmeans.max_iter = max_iter;
    if (normalize) cfg.kmeans.normalize = true;
    if (given("--tail-max-freq")) cfg.thresholds.tail_max_freq = tail_max;
    if (given("--head-min-freq")) cfg.thresholds.head_min_freq = head_min;
    if (given("--rank")) cfg.rank = rank;
    if (given("--lr")) cfg.adapter.learning_rate = lr;
    if (given("--epochs")) cfg.adapter.epochs = epochs;
    if (given("--probe-lr")) cfg.probe.learning_rate = probe_lr;
    if (given("--probe-epochs")) cfg.probe.epochs = probe_epochs;
    if (tail_only) cfg.tail_only = true;
    if (cfg.out_dir.empty()) cfg.out_dir = ".";

    if (pipeline->parsed()) {
      if (cfg.input.empty()) throw deblora::ValidationError("pipeline: --input is required");
      const auto manifest = deblora::run_deblora(cfg);
      for (const auto& [name, path] : manifest.artifacts)
        std::cout << name << ": " << path.string() << "\n";
      std::cout << "final adapter loss: " << manifest.final_loss << "\n";
      return 0;
    }

    if (cfg.input.empty()) throw deblora::ValidationError("--input is required");
    cfg.thresholds.validate();
    const deblora::FeatureSet set = deblora::load_features(cfg.input, cfg.format);

    if (stats->parsed()) {
      const auto s = deblora::compute_class_stats(set, cfg.thresholds);
      print_stats(s, set);
      if (!global.out.empty()) {
        ensure_dir(out);
        deblora::write_json(out / "stats.json", stats_json(s, set));
      }
    } else if (cluster->parsed()) {
      const auto model = deblora::stage_cluster(set, cfg.kmeans, cfg.seed);
      ensure_dir(cfg.out_dir);
      deblora::write_json(cfg.out_dir / "clusters.json", json(model));
      std::cout << "K=" << model.k << " rho=" << model.rho << " min_size=" << model.min_size
                << " inertia=" << model.inertia << "\n";
    } else if (debias->parsed()) {
      const auto clusters = deblora::read_json(clusters_path).get<deblora::ClusterModel>();
      const auto plan = deblora::stage_debias(set, cfg.thresholds, clusters, cfg.tail_only);
      ensure_dir(cfg.out_dir);
      deblora::write_json(cfg.out_dir / "plan.json", json(plan));
      deblora::save_features(set.with_features(plan.targets),
                             cfg.out_dir / ("targets" + std::string(deblora::format_extension(cfg.format))),
                             cfg.format);
      std::cout << plan.tail_classes.size() << " tail class(es) calibrated\n";
    } else if (train->parsed()) {
      const auto targets = deblora::load_features(targets_path, cfg.format);
      const auto plan = deblora::read_json(plan_path).get<deblora::DebiasPlan>();
      const auto result =
          deblora::stage_train(set, targets, plan, cfg.rank, cfg.adapter, cfg.seed);
      ensure_dir(cfg.out_dir);
      deblora::write_json(cfg.out_dir / "adapter.json", json(result.adapter));
      std::cout << "loss " << result.loss_history.front() << " -> "
                << result.loss_history[result.best_epoch] << "\n";
    } else if (probe->parsed()) {
      std::optional<deblora::LowRankAdapter> adapter;
      if (!adapter_path.empty())
        adapter = deblora::adapter_from_json(deblora::read_json(adapter_path));
      const auto report =
          deblora::evaluate(set, adapter ? &*adapter : nullptr, cfg.probe, cfg.thresholds,
                            test_fraction, split_seed.value_or(cfg.seed));
      std::cout << deblora::format_group_table(
          {{adapter ? "debLoRA" : "raw", report.groups}});
      std::cout << "split " << report.split_hash << "\n";
      if (!global.out.empty()) {
        ensure_dir(out);
        deblora::write_json(out / "report.json", json(report));
      }
    } else if (analyze->parsed()) {
      const auto s = deblora::compute_class_stats(set, cfg.thresholds);
      const auto report = deblora::feature_distances(set, s);
      print_distances(report);
      if (!global.out.empty()) {
        ensure_dir(out);
        deblora::write_json(out / "distances.json", json(report));
      }
    }
    return 0;
  } catch (const deblora::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
