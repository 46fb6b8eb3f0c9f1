#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "deblora/matrix.hpp"

namespace deblora {

/// Residual low-rank map g(z) = z + B (A z) with B: d x r and A: r x d.
/// With B = 0 the adapter is exactly the identity.
class LowRankAdapter {
 public:
  LowRankAdapter(Matrix b, Matrix a);

  std::size_t dim() const noexcept { return b_.rows(); }
  std::size_t rank() const noexcept { return b_.cols(); }
  const Matrix& b() const noexcept { return b_; }
  const Matrix& a() const noexcept { return a_; }

  std::vector<double> forward(std::span<const double> z) const;
  /// Applies forward to every row.
  Matrix forward_rows(const Matrix& rows) const;

  /// The residual term B (A z) alone.
  std::vector<double> residual(std::span<const double> z) const;

  bool operator==(const LowRankAdapter&) const = default;

 private:
  Matrix b_;
  Matrix a_;
};

/// B = 0, A ~ N(0, 1/d). Throws ValidationError unless 1 <= r <= d.
LowRankAdapter adapter_init(std::size_t d, std::size_t r, std::uint64_t seed);

/// z + sum_i w_i B_i A_i z over a set of adapters sharing d.
class CombinedAdapter {
 public:
  CombinedAdapter(std::vector<LowRankAdapter> adapters, std::vector<double> weights);

  std::size_t dim() const noexcept { return dim_; }
  std::vector<double> forward(std::span<const double> z) const;

 private:
  std::vector<LowRankAdapter> adapters_;
  std::vector<double> weights_;
  std::size_t dim_;
};

CombinedAdapter adapters_combine(std::span<const LowRankAdapter> adapters,
                                 std::span<const double> weights);

/// One adapter per class; forward concatenates [g_1(z); ...; g_C(z)] in class order.
class ClassAdapterEnsemble {
 public:
  explicit ClassAdapterEnsemble(std::vector<LowRankAdapter> adapters);

  std::size_t num_classes() const noexcept { return adapters_.size(); }
  std::size_t dim() const noexcept { return adapters_.front().dim(); }
  std::size_t output_dim() const noexcept { return adapters_.size() * dim(); }
  const std::vector<LowRankAdapter>& adapters() const noexcept { return adapters_; }

  std::vector<double> forward(std::span<const double> z) const;

 private:
  std::vector<LowRankAdapter> adapters_;
};

std::vector<double> clora_forward(const ClassAdapterEnsemble& ensemble, std::span<const double> z);

struct AdapterTrainConfig {
  double learning_rate = 1e-2;
  std::size_t epochs = 500;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Mean over rows of |g(z_i) - t_i|^2, with its exact gradients.
struct AdapterGradient {
  double loss = 0.0;
  Matrix grad_b;
  Matrix grad_a;
};

double adapter_loss(const LowRankAdapter& adapter, const Matrix& inputs, const Matrix& targets);
AdapterGradient adapter_gradient(const LowRankAdapter& adapter, const Matrix& inputs,
                                 const Matrix& targets);

struct AdapterTrainResult {
  LowRankAdapter adapter;
  /// loss_history[e] is the loss after e updates; size epochs + 1.
  std::vector<double> loss_history;
  /// Index into loss_history of the returned parameters (the lowest loss seen).
  std::size_t best_epoch = 0;
};

/// Full-batch gradient descent with a fixed step. Returns the lowest-loss iterate, so the
/// final loss never exceeds the initial one. Throws DivergenceError on a non-finite loss.
AdapterTrainResult adapter_train(const LowRankAdapter& init, const Matrix& inputs,
                                 const Matrix& targets, const AdapterTrainConfig& cfg);

void to_json(nlohmann::ordered_json& j, const LowRankAdapter& adapter);
LowRankAdapter adapter_from_json(const nlohmann::ordered_json& j);

}  // namespace deblora
