#include "deblora/lowrank_adapter.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "deblora/errors.hpp"

namespace deblora {

LowRankAdapter::LowRankAdapter(Matrix b, Matrix a) : b_(std::move(b)), a_(std::move(a)) {
  if (b_.rows() == 0 || b_.cols() == 0) throw ValidationError("adapter: empty factor B");
  if (a_.rows() != b_.cols() || a_.cols() != b_.rows())
    throw ValidationError("adapter: B must be d x r and A must be r x d");
  if (rank() > dim()) throw ValidationError("adapter: rank exceeds dimension");
  for (double v : b_.data())
    if (!std::isfinite(v)) throw ValidationError("adapter: non-finite entry in B");
  for (double v : a_.data())
    if (!std::isfinite(v)) throw ValidationError("adapter: non-finite entry in A");
}

std::vector<double> LowRankAdapter::residual(std::span<const double> z) const {
  if (z.size() != dim())
    throw ValidationError("adapter: input has dimension " + std::to_string(z.size()) +
                          ", expected " + std::to_string(dim()));
  std::vector<double> u(rank(), 0.0);
  for (std::size_t k = 0; k < rank(); ++k) u[k] = dot(a_.row(k), z);
  std::vector<double> out(dim(), 0.0);
  for (std::size_t j = 0; j < dim(); ++j) out[j] = dot(b_.row(j), u);
  return out;
}

std::vector<double> LowRankAdapter::forward(std::span<const double> z) const {
  std::vector<double> out = residual(z);
  for (std::size_t j = 0; j < dim(); ++j) out[j] = z[j] + out[j];
  return out;
}

Matrix LowRankAdapter::forward_rows(const Matrix& rows) const {
  if (rows.cols() != dim()) throw ValidationError("adapter: input rows have the wrong dimension");
  Matrix out(rows.rows(), rows.cols());
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    const auto y = forward(rows.row(i));
    std::copy(y.begin(), y.end(), out.row(i).begin());
  }
  return out;
}

LowRankAdapter adapter_init(std::size_t d, std::size_t r, std::uint64_t seed) {
  if (d == 0 || r == 0) throw ValidationError("adapter: d and r must be >= 1");
  if (r > d) throw ValidationError("adapter: rank " + std::to_string(r) + " exceeds d = " +
                                   std::to_string(d));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  Matrix a(r, d);
  for (double& v : a.data()) v = normal(rng);
  return LowRankAdapter(Matrix(d, r), std::move(a));
}

CombinedAdapter::CombinedAdapter(std::vector<LowRankAdapter> adapters, std::vector<double> weights)
    : adapters_(std::move(adapters)), weights_(std::move(weights)), dim_(0) {
  if (adapters_.empty()) throw ValidationError("combine: no adapters");
  if (adapters_.size() != weights_.size())
    throw ValidationError("combine: " + std::to_string(adapters_.size()) + " adapters but " +
                          std::to_string(weights_.size()) + " weights");
  dim_ = adapters_.front().dim();
  for (const auto& ad : adapters_)
    if (ad.dim() != dim_) throw ValidationError("combine: adapters differ in dimension");
}

std::vector<double> CombinedAdapter::forward(std::span<const double> z) const {
  if (z.size() != dim_) throw ValidationError("combine: input has the wrong dimension");
  std::vector<double> delta(dim_, 0.0);
  for (std::size_t i = 0; i < adapters_.size(); ++i) {
    const auto r = adapters_[i].residual(z);
    for (std::size_t j = 0; j < dim_; ++j) delta[j] += weights_[i] * r[j];
  }
  for (std::size_t j = 0; j < dim_; ++j) delta[j] = z[j] + delta[j];
  return delta;
}

CombinedAdapter adapters_combine(std::span<const LowRankAdapter> adapters,
                                 std::span<const double> weights) {
  return CombinedAdapter({adapters.begin(), adapters.end()}, {weights.begin(), weights.end()});
}

ClassAdapterEnsemble::ClassAdapterEnsemble(std::vector<LowRankAdapter> adapters)
    : adapters_(std::move(adapters)) {
  if (adapters_.empty()) throw ValidationError("cLoRA: ensemble needs at least one adapter");
  for (const auto& ad : adapters_)
    if (ad.dim() != adapters_.front().dim() || ad.rank() != adapters_.front().rank())
      throw ValidationError("cLoRA: adapters must share d and r");
}

std::vector<double> ClassAdapterEnsemble::forward(std::span<const double> z) const {
  if (z.size() != dim()) throw ValidationError("cLoRA: input has the wrong dimension");
  std::vector<double> out;
  out.reserve(output_dim());
  for (const auto& ad : adapters_) {
    const auto y = ad.forward(z);
    out.insert(out.end(), y.begin(), y.end());
  }
  return out;
}

std::vector<double> clora_forward(const ClassAdapterEnsemble& ensemble,
                                  std::span<const double> z) {
  return ensemble.forward(z);
}

void AdapterTrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ValidationError("adapter training: learning_rate must be > 0");
  if (epochs == 0) throw ValidationError("adapter training: epochs must be >= 1");
}

namespace {

void check_shapes(const LowRankAdapter& adapter, const Matrix& inputs, const Matrix& targets) {
  if (inputs.rows() == 0) throw ValidationError("adapter training: no rows");
  if (inputs.rows() != targets.rows() || inputs.cols() != targets.cols())
    throw ValidationError("adapter training: inputs and targets differ in shape");
  if (inputs.cols() != adapter.dim())
    throw ValidationError("adapter training: feature dimension differs from adapter");
}

// R = Z + (Z A^T) B^T - T, plus U = Z A^T for reuse in the gradient.
struct Residuals {
  Matrix u;
  Matrix r;
};

Residuals residuals(const LowRankAdapter& adapter, const Matrix& inputs, const Matrix& targets) {
  Residuals out{matmul(inputs, adapter.a().transposed()), Matrix()};
  out.r = matmul(out.u, adapter.b().transposed());
  auto r = out.r.data();
  auto z = inputs.data();
  auto t = targets.data();
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = z[i] + r[i] - t[i];
  return out;
}

double mean_row_sq(const Matrix& r) {
  double s = 0.0;
  for (double v : r.data()) s += v * v;
  return s / static_cast<double>(r.rows());
}

}  // namespace

double adapter_loss(const LowRankAdapter& adapter, const Matrix& inputs, const Matrix& targets) {
  check_shapes(adapter, inputs, targets);
  return mean_row_sq(residuals(adapter, inputs, targets).r);
}

AdapterGradient adapter_gradient(const LowRankAdapter& adapter, const Matrix& inputs,
                                 const Matrix& targets) {
  check_shapes(adapter, inputs, targets);
  const Residuals res = residuals(adapter, inputs, targets);
  const double scale = 2.0 / static_cast<double>(inputs.rows());
  const Matrix rt = res.r.transposed();
  AdapterGradient g;
  g.loss = mean_row_sq(res.r);
  // dL/dB = 2/N R^T U ; dL/dA = 2/N (R B)^T Z
  g.grad_b = matmul(rt, res.u);
  g.grad_a = matmul(matmul(res.r, adapter.b()).transposed(), inputs);
  for (double& v : g.grad_b.data()) v *= scale;
  for (double& v : g.grad_a.data()) v *= scale;
  return g;
}

AdapterTrainResult adapter_train(const LowRankAdapter& init, const Matrix& inputs,
                                 const Matrix& targets, const AdapterTrainConfig& cfg) {
  cfg.validate();
  check_shapes(init, inputs, targets);
  for (double v : inputs.data())
    if (!std::isfinite(v)) throw ValidationError("adapter training: non-finite input");
  for (double v : targets.data())
    if (!std::isfinite(v)) throw ValidationError("adapter training: non-finite target");

  Matrix b = init.b();
  Matrix a = init.a();
  AdapterTrainResult result{init, {}, 0};
  result.loss_history.reserve(cfg.epochs + 1);
  double best = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 0;; ++epoch) {
    const LowRankAdapter current(b, a);
    const AdapterGradient g = adapter_gradient(current, inputs, targets);
    if (!std::isfinite(g.loss))
      throw DivergenceError("adapter training diverged at epoch " + std::to_string(epoch) +
                            "; lower the learning rate");
    result.loss_history.push_back(g.loss);
    if (g.loss < best) {
      best = g.loss;
      result.best_epoch = epoch;
      result.adapter = current;
    }
    if (epoch == cfg.epochs) break;
    auto bd = b.data();
    auto ad = a.data();
    auto gb = g.grad_b.data();
    auto ga = g.grad_a.data();
    for (std::size_t i = 0; i < bd.size(); ++i) bd[i] -= cfg.learning_rate * gb[i];
    for (std::size_t i = 0; i < ad.size(); ++i) ad[i] -= cfg.learning_rate * ga[i];
    for (double v : bd)
      if (!std::isfinite(v)) throw DivergenceError("adapter training diverged (B overflowed)");
    for (double v : ad)
      if (!std::isfinite(v)) throw DivergenceError("adapter training diverged (A overflowed)");
  }
  return result;
}

void to_json(nlohmann::ordered_json& j, const LowRankAdapter& adapter) {
  j = nlohmann::ordered_json::object();
  j["d"] = adapter.dim();
  j["rank"] = adapter.rank();
  j["B"] = adapter.b().to_rows();
  j["A"] = adapter.a().to_rows();
}

LowRankAdapter adapter_from_json(const nlohmann::ordered_json& j) {
  try {
    const auto d = j.at("d").get<std::size_t>();
    const auto rank = j.at("rank").get<std::size_t>();
    Matrix b = Matrix::from_rows(j.at("B").get<std::vector<std::vector<double>>>());
    Matrix a = Matrix::from_rows(j.at("A").get<std::vector<std::vector<double>>>());
    if (b.rows() != d || b.cols() != rank)
      throw ValidationError("adapter checkpoint: B is not d x rank");
    return LowRankAdapter(std::move(b), std::move(a));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("adapter checkpoint: ") + e.what());
  }
}

}  // namespace deblora
