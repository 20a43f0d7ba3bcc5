// SPDX-License-Identifier: Apache-2.0
//
// Task classifiers and their losses.
//
//   entity head    y     = softmax(W_e·h + b_e)                 over B,I,O,E,S
//   relation head  m     = relu(W_m·(h_i ⊕ h_j))
//                  y_ij  = sigmoid(W_r·m + b_r)                 one score per relation
//
// W_m·(h_i ⊕ h_j) is evaluated as A·h_i + B·h_j with W_m = [A | B], so the
// n² pair features cost two [n × d_m] products instead of n² concatenations.
#pragma once

#include <cmath>
#include <set>
#include <span>
#include <vector>

#include "rin/corpus.hpp"
#include "rin/error.hpp"
#include "rin/tensor.hpp"

namespace rin {

struct ErParams {
  Tensor W;  // [5 x d_h]
  Tensor b;  // [5]
};

struct RcParams {
  Tensor W_m;  // [d_m x 2d_h]
  Tensor W_r;  // [l x d_m]
  Tensor b_r;  // [l]

  std::size_t relations() const { return W_r.dim(0); }
};

/// Per-word BIOES distribution → [n × 5].
inline Tensor er_predict(const Tensor& h, const ErParams& p) {
  if (h.rank() != 2 || h.dim(1) != p.W.dim(1))
    throw DimensionError("er_predict: features " + to_string(h.shape()) + " vs weight " + to_string(p.W.shape()));
  return softmax(linear(h, p.W, p.b));
}

/// Per ordered pair, per relation probability → [n × n × l].
inline Tensor rc_predict(const Tensor& h, const RcParams& p) {
  const std::size_t d_h = p.W_m.dim(1) / 2;
  if (h.rank() != 2 || h.dim(1) != d_h || p.W_m.dim(1) != 2 * d_h)
    throw DimensionError("rc_predict: features " + to_string(h.shape()) + " vs weight " + to_string(p.W_m.shape()));
  const std::size_t n = h.dim(0);
  const Tensor subject_part = slice(p.W_m, 1, 0, d_h);
  const Tensor object_part = slice(p.W_m, 1, d_h, 2 * d_h);
  const Tensor m = relu(pairwise_sum(linear(h, subject_part), linear(h, object_part)));
  return reshape(sigmoid(linear(m, p.W_r, p.b_r)), {n, n, p.relations()});
}

/// Summed cross-entropy over unmasked words.
inline Tensor er_loss(const Tensor& y_e, std::span<const std::size_t> gold_tags, const std::vector<bool>& mask) {
  const std::size_t n = y_e.dim(0);
  if (gold_tags.size() != n || mask.size() != n)
    throw DimensionError("er_loss: " + std::to_string(gold_tags.size()) + " tags / " + std::to_string(mask.size()) +
                         " mask entries for " + to_string(y_e.shape()));
  std::vector<double> weight(n);
  for (std::size_t i = 0; i < n; ++i) weight[i] = mask[i] ? 1.0 : 0.0;
  return neg_log_likelihood(y_e, gold_tags, weight);
}

/// Summed binary cross-entropy over every unmasked ordered pair (self-pairs
/// included) and every relation; gold (i, j, t) has target 1.
inline Tensor rc_loss(const Tensor& y_r, const std::set<PairTarget>& gold, const std::vector<bool>& mask,
                      double positive_weight = 1.0) {
  if (y_r.rank() != 3 || y_r.dim(0) != y_r.dim(1) || mask.size() != y_r.dim(0))
    throw DimensionError("rc_loss: scores " + to_string(y_r.shape()) + " with " + std::to_string(mask.size()) + " mask entries");
  const std::size_t n = y_r.dim(0), l = y_r.dim(2);
  std::vector<double> target(y_r.size(), 0.0), weight(y_r.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (mask[i] && mask[j])
        for (std::size_t t = 0; t < l; ++t) weight[(i * n + j) * l + t] = 1.0;
  for (const auto& g : gold) {
    if (g.subj >= n || g.obj >= n || g.rel >= l) throw ContractError("rc_loss: gold pair outside score grid");
    const std::size_t k = (g.subj * n + g.obj) * l + g.rel;
    target[k] = 1.0;
    weight[k] *= positive_weight;
  }
  return binary_cross_entropy(y_r, target, weight);
}

}  // namespace rin
