#include "deblora/eval_probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "deblora/errors.hpp"

namespace deblora {

std::vector<double> pool_features(std::span<const double> map, std::size_t height,
                                  std::size_t width, std::size_t channels) {
  const std::size_t positions = height * width;
  if (positions == 0 || channels == 0) throw ValidationError("pool: empty feature map");
  if (map.size() != positions * channels)
    throw ValidationError("pool: map size does not match H x W x d");
  std::vector<double> out(channels, 0.0);
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t j = 0; j < channels; ++j) {
      const double v = map[p * channels + j];
      if (!std::isfinite(v)) throw ValidationError("pool: non-finite activation");
      out[j] += std::max(0.0, v);
    }
  for (double& v : out) v /= static_cast<double>(positions);
  return out;
}

void ProbeConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ValidationError("probe: learning_rate must be > 0");
  if (epochs == 0) throw ValidationError("probe: epochs must be >= 1");
}

std::vector<double> LinearProbe::logits(std::span<const double> z) const {
  if (z.size() != weights.cols()) throw ValidationError("probe: input has the wrong dimension");
  std::vector<double> out(weights.rows());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = dot(weights.row(c), z) + bias[c];
  return out;
}

std::uint32_t LinearProbe::predict(std::span<const double> z) const {
  const auto s = logits(z);
  return static_cast<std::uint32_t>(std::max_element(s.begin(), s.end()) - s.begin());
}

std::vector<std::uint32_t> LinearProbe::predict_all(const FeatureSet& set) const {
  const Matrix x = set.to_matrix();
  std::vector<std::uint32_t> out(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) out[i] = predict(x.row(i));
  return out;
}

ProbeGradient cross_entropy_gradient(const LinearProbe& probe, const Matrix& inputs,
                                     std::span<const std::uint32_t> labels) {
  const std::size_t n = inputs.rows();
  const std::size_t num_classes = probe.weights.rows();
  if (n == 0 || labels.size() != n) throw ValidationError("probe: labels and inputs differ");
  ProbeGradient g{0.0, Matrix(num_classes, inputs.cols()), std::vector<double>(num_classes, 0.0)};
  std::vector<double> p(num_classes);
  for (std::size_t i = 0; i < n; ++i) {
    const auto z = inputs.row(i);
    const auto s = probe.logits(z);
    const double top = *std::max_element(s.begin(), s.end());
    double total = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) total += p[c] = std::exp(s[c] - top);
    const std::uint32_t y = labels[i];
    if (y >= num_classes) throw ValidationError("probe: label out of range", i);
    g.loss += std::log(total) - (s[y] - top);
    for (std::size_t c = 0; c < num_classes; ++c) {
      const double delta = p[c] / total - (c == y ? 1.0 : 0.0);
      g.grad_bias[c] += delta;
      auto gw = g.grad_weights.row(c);
      for (std::size_t j = 0; j < z.size(); ++j) gw[j] += delta * z[j];
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  g.loss *= inv;
  for (double& v : g.grad_weights.data()) v *= inv;
  for (double& v : g.grad_bias) v *= inv;
  return g;
}

LinearProbe train_linear_probe(const FeatureSet& train, const ProbeConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> counts(train.num_classes(), 0);
  for (std::uint32_t y : train.labels()) ++counts[y];
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] == 0)
      throw ValidationError("probe: class '" + train.class_names()[c] + "' has no training sample");

  const Matrix x = train.to_matrix();
  LinearProbe probe{Matrix(train.num_classes(), train.dim()),
                    std::vector<double>(train.num_classes(), 0.0)};
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const ProbeGradient g = cross_entropy_gradient(probe, x, train.labels());
    if (!std::isfinite(g.loss)) throw DivergenceError("probe training diverged");
    auto w = probe.weights.data();
    auto gw = g.grad_weights.data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.learning_rate * gw[i];
    for (std::size_t c = 0; c < probe.bias.size(); ++c)
      probe.bias[c] -= cfg.learning_rate * g.grad_bias[c];
  }
  return probe;
}

F1Scores macro_f1(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> labels,
                  std::size_t num_classes) {
  if (predictions.size() != labels.size())
    throw ValidationError("macro F1: predictions and labels differ in length");
  if (num_classes == 0) throw ValidationError("macro F1: no classes");
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = labels[i];
    const auto p = predictions[i];
    if (y >= num_classes || p >= num_classes)
      throw ValidationError("macro F1: class index out of range", i);
    if (p == y) {
      ++tp[y];
    } else {
      ++fp[p];
      ++fn[y];
    }
  }
  auto ratio = [](double num, double den) { return den == 0.0 ? 0.0 : num / den; };
  F1Scores out;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double precision = ratio(static_cast<double>(tp[c]), static_cast<double>(tp[c] + fp[c]));
    const double recall = ratio(static_cast<double>(tp[c]), static_cast<double>(tp[c] + fn[c]));
    out.precision.push_back(precision);
    out.recall.push_back(recall);
    out.support.push_back(tp[c] + fn[c]);
    out.per_class.push_back(ratio(2.0 * precision * recall, precision + recall));
  }
  double sum = 0.0;
  for (double f : out.per_class) sum += f;
  out.macro = sum / static_cast<double>(num_classes);
  return out;
}

GroupReport group_report(std::span<const double> per_class_f1, const ClassStats& stats,
                         const std::vector<bool>& evaluated) {
  const std::size_t num_classes = stats.group.size();
  if (per_class_f1.size() != num_classes)
    throw ValidationError("group report: F1 vector length differs from class count");
  if (!evaluated.empty() && evaluated.size() != num_classes)
    throw ValidationError("group report: evaluation mask length differs from class count");

  GroupReport report;
  report.per_class_f1.assign(per_class_f1.begin(), per_class_f1.end());
  double sums[3] = {0.0, 0.0, 0.0};
  std::size_t counts[3] = {0, 0, 0};
  double total = 0.0;
  std::size_t total_count = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (!evaluated.empty() && !evaluated[c]) continue;
    const auto g = static_cast<std::size_t>(stats.group[c]);
    sums[g] += per_class_f1[c];
    ++counts[g];
    total += per_class_f1[c];
    ++total_count;
  }
  if (total_count == 0) throw ValidationError("group report: no evaluated classes");
  auto mean = [&](std::size_t g) -> std::optional<double> {
    if (counts[g] == 0) return std::nullopt;
    return sums[g] / static_cast<double>(counts[g]);
  };
  report.head = mean(static_cast<std::size_t>(FrequencyGroup::Head));
  report.middle = mean(static_cast<std::size_t>(FrequencyGroup::Middle));
  report.tail = mean(static_cast<std::size_t>(FrequencyGroup::Tail));
  report.head_classes = counts[static_cast<std::size_t>(FrequencyGroup::Head)];
  report.middle_classes = counts[static_cast<std::size_t>(FrequencyGroup::Middle)];
  report.tail_classes = counts[static_cast<std::size_t>(FrequencyGroup::Tail)];
  report.overall = total / static_cast<double>(total_count);
  return report;
}

double cosine_distance(std::span<const double> u, std::span<const double> v) {
  const double uu = dot(u, u);
  const double vv = dot(v, v);
  if (uu == 0.0 || vv == 0.0) throw DegenerateVectorError("cosine distance of a zero vector");
  // sqrt of the product keeps cos(u, u) == 1 exactly.
  return std::clamp(1.0 - dot(u, v) / std::sqrt(uu * vv), 0.0, 2.0);
}

DistanceReport feature_distances(const FeatureSet& set, const ClassStats& stats) {
  const std::size_t num_classes = set.num_classes();
  if (stats.group.size() != num_classes)
    throw ValidationError("distance analysis: class statistics do not match the feature set");
  Matrix centers(num_classes, set.dim());
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto dst = centers.row(set.label(i));
    auto src = set.row(i);
    for (std::size_t j = 0; j < set.dim(); ++j) dst[j] += src[j];
    ++counts[set.label(i)];
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    if (counts[c] > 0)
      for (double& v : centers.row(c)) v /= static_cast<double>(counts[c]);

  const auto heads = stats.classes_in(FrequencyGroup::Head);
  const auto tails = stats.classes_in(FrequencyGroup::Tail);
  DistanceReport report;
  if (!heads.empty() && !tails.empty()) {
    double sum = 0.0;
    for (auto h : heads)
      for (auto t : tails) sum += cosine_distance(centers.row(h), centers.row(t));
    report.inter_head_tail = sum / static_cast<double>(heads.size() * tails.size());
  }
  if (tails.size() >= 2) {
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < tails.size(); ++a)
      for (std::size_t b = a + 1; b < tails.size(); ++b, ++pairs)
        sum += cosine_distance(centers.row(tails[a]), centers.row(tails[b]));
    report.inter_tail_tail = sum / static_cast<double>(pairs);
  }
  if (!tails.empty()) {
    double sum = 0.0;
    std::size_t samples = 0;
    std::vector<double> z(set.dim());
    for (std::size_t i = 0; i < set.size(); ++i) {
      const auto c = set.label(i);
      if (stats.group[c] != FrequencyGroup::Tail) continue;
      std::copy(set.row(i).begin(), set.row(i).end(), z.begin());
      sum += cosine_distance(z, centers.row(c));
      ++samples;
    }
    if (samples > 0) report.intra_tail = sum / static_cast<double>(samples);
  }
  return report;
}

StratifiedSplit stratified_split(const FeatureSet& set, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ValidationError("test fraction must lie in (0, 1)");
  std::vector<std::vector<std::size_t>> by_class(set.num_classes());
  for (std::size_t i = 0; i < set.size(); ++i) by_class[set.label(i)].push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<bool> is_test(set.size(), false);
  StratifiedSplit split;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& rows = by_class[c];
    if (rows.size() < 2) {
      if (!rows.empty()) split.train_only_classes.push_back(static_cast<std::uint32_t>(c));
      continue;
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto wanted = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(rows.size())));
    const std::size_t n_test = std::clamp<std::size_t>(wanted, 1, rows.size() - 1);
    for (std::size_t k = 0; k < n_test; ++k) is_test[rows[k]] = true;
  }
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < set.size(); ++i) {
    (is_test[i] ? split.test : split.train).push_back(i);
    h ^= is_test[i] ? 0x54u : 0x52u;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  split.hash = buf;
  return split;
}

namespace {

nlohmann::ordered_json optional_value(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

void to_json(nlohmann::ordered_json& j, const GroupReport& report) {
  j = nlohmann::ordered_json::object();
  j["head"] = optional_value(report.head);
  j["middle"] = optional_value(report.middle);
  j["tail"] = optional_value(report.tail);
  j["overall"] = report.overall;
  j["head_classes"] = report.head_classes;
  j["middle_classes"] = report.middle_classes;
  j["tail_classes"] = report.tail_classes;
  j["per_class_f1"] = report.per_class_f1;
}

void to_json(nlohmann::ordered_json& j, const DistanceReport& report) {
  j = nlohmann::ordered_json::object();
  j["inter_head_tail"] = optional_value(report.inter_head_tail);
  j["inter_tail_tail"] = optional_value(report.inter_tail_tail);
  j["intra_tail"] = optional_value(report.intra_tail);
}

std::string format_group_table(const std::vector<std::pair<std::string, GroupReport>>& arms) {
  std::size_t width = 6;
  for (const auto& [name, _] : arms) width = std::max(width, name.size());
  auto cell = [](const std::optional<double>& v) {
    char buf[16];
    if (v)
      std::snprintf(buf, sizeof(buf), "%8.1f", 100.0 * *v);
    else
      std::snprintf(buf, sizeof(buf), "%8s", "-");
    return std::string(buf);
  };
  std::string out = std::string("Method") + std::string(width - 6, ' ') +
                    "    Head  Middle    Tail Overall\n";
  for (const auto& [name, r] : arms)
    out += name + std::string(width - name.size(), ' ') + cell(r.head) + cell(r.middle) +
           cell(r.tail) + cell(r.overall) + "\n";
  return out;
}

}  // namespace deblora
