// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rin/error.hpp"
#include "rin/tensor.hpp"

namespace rin {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. step() leaves gradients in place; callers
/// zero them explicitly before the next backward pass.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamConfig config = {}) : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) {
      first_moment_.emplace_back(p.size(), 0.0);
      second_moment_.emplace_back(p.size(), 0.0);
    }
  }

  void step(double lr) {
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
    for (std::size_t k = 0; k < params_.size(); ++k)
      if (!params_[k].has_grad()) throw ContractError("adam: parameter " + std::to_string(k) + " has no gradient");
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double correction1 = 1.0 - std::pow(config_.beta1, t);
    const double correction2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto values = params_[k].mutable_values();
      const auto grad = params_[k].grad();
      auto& m = first_moment_[k];
      auto& v = second_moment_[k];
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = grad[i];
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
        const double m_hat = m[i] / correction1;
        const double v_hat = v[i] / correction2;
        values[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
      }
    }
  }

  std::size_t steps() const { return steps_; }
  const std::vector<double>& first_moment(std::size_t k) const { return first_moment_.at(k); }
  const std::vector<double>& second_moment(std::size_t k) const { return second_moment_.at(k); }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
  std::size_t steps_ = 0;
};

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    if (p.has_grad())
      for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : params)
      if (p.has_grad())
        for (double& g : p.mutable_grad()) g *= scale;
  }
  return norm;
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_component = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t components = 0;
};

/// Compares backward() gradients of the scalar objective `f` against central
/// finite differences (f(θ+eps) − f(θ−eps)) / 2eps for every component of
/// every tensor in `params`. The error metric is |a−n| / max(1e-8, |a|+|n|).
///
/// `f` must be deterministic; a second evaluation that differs from the first
/// raises DeterminismError. `corrupt` is a test hook applied to the analytic
/// gradients before comparison.
template <class Objective>
GradCheckResult grad_check(Objective&& f, std::span<Tensor> params, double eps,
                           const std::function<void(std::vector<std::vector<double>>&)>& corrupt = {}) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  for (auto& p : params) p.zero_grad();
  const Tensor loss = f();
  const double base = loss.item();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());
  if (corrupt) corrupt(analytic);

  NoGradGuard no_grad;
  const double again = f().item();
  if (again != base)
    throw DeterminismError("grad_check: objective is not deterministic (" + std::to_string(base) + " vs " +
                           std::to_string(again) + ")");

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = f().item();
      values[i] = saved - eps;
      const double minus = f().item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (result.components++ == 0 || err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_param = k;
        result.worst_component = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace rin
