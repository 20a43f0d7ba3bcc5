// SPDX-License-Identifier: Apache-2.0
//
// Recurrent interaction layers.
//
// Layer 0 applies both heads to the encoder output. Layer k ≥ 1 refines the
// shared features with two gated cells, one fed the entity predictions of
// layer k−1 and one fed the relation evidence of layer k−1:
//
//   H_e^k = GRU_e(H^{k−1}, Y_e^{k−1})
//   H_r^k = GRU_r(H^{k−1}, maxpool_j Y_r^{k−1}[i, j, :])
//   H^k   = H_r^k + H_e^k + H^{k−1}
//   Y_e^k = C_e(H_e^k),  Y_r^k = C_r(H_r^k)
//
// The gated cell on one row, with h the shared feature and y the prediction:
//
//   z = σ(W_z(h ⊕ y) + b_z)
//   u = σ(W_u(h ⊕ y) + b_u)
//   ȟ = tanh(W_o((u ⊙ h) ⊕ y) + b_o)
//   out = (1 − z) ⊙ h + z ⊙ ȟ
#pragma once

#include <cstddef>
#include <vector>

#include "rin/error.hpp"
#include "rin/heads.hpp"
#include "rin/tensor.hpp"

namespace rin {

struct GruParams {
  Tensor W_z, W_u, W_o;  // [d_h x (d_h + d_y)]
  Tensor b_z, b_u, b_o;  // [d_h]

  std::size_t hidden() const { return W_z.dim(0); }
  std::size_t evidence() const { return W_z.dim(1) - W_z.dim(0); }
};

/// Applies the gated cell independently to each row: H[n × d_h], Y[n × d_y].
inline Tensor gru_rows(const Tensor& h, const Tensor& y, const GruParams& p) {
  if (h.rank() != 2 || y.rank() != 2 || h.dim(0) != y.dim(0) || h.dim(1) != p.hidden() || y.dim(1) != p.evidence())
    throw DimensionError("gru: state " + to_string(h.shape()) + " and evidence " + to_string(y.shape()) +
                         " do not fit weights " + to_string(p.W_z.shape()));
  const Tensor hy = concat(h, y, 1);
  const Tensor z = sigmoid(linear(hy, p.W_z, p.b_z));
  const Tensor u = sigmoid(linear(hy, p.W_u, p.b_u));
  const Tensor candidate = tanh(linear(concat(u * h, y, 1), p.W_o, p.b_o));
  return (1.0 - z) * h + z * candidate;
}

/// Single-vector form: h[d_h], y[d_y] → [d_h].
inline Tensor gru_cell(const Tensor& h, const Tensor& y, const GruParams& p) {
  if (h.rank() != 1 || y.rank() != 1) throw DimensionError("gru_cell expects vectors");
  return reshape(gru_rows(reshape(h, {1, h.dim(0)}), reshape(y, {1, y.dim(0)}), p), {h.dim(0)});
}

/// Relation evidence for every word: row i is the elementwise max over j of
/// Y_r[i, j, :] → [n × l].
inline Tensor aggregate_relation_evidence(const Tensor& y_r) {
  if (y_r.rank() != 3 || y_r.dim(0) != y_r.dim(1))
    throw DimensionError("relation scores must be [n x n x l], got " + to_string(y_r.shape()));
  return max_over_axis1(y_r).values;
}

/// Relation evidence for word i → [l].
inline Tensor aggregate_relation_evidence(const Tensor& y_r, std::size_t i) {
  if (y_r.rank() != 3 || i >= y_r.dim(0)) throw DimensionError("aggregate_relation_evidence: bad index or shape");
  const std::size_t n = y_r.dim(1), l = y_r.dim(2);
  return reduce_max_rows(reshape(slice(y_r, 0, i, i + 1), {n, l})).values;
}

/// Which task features feed the fused shared representation.
struct FusionFlags {
  bool entity = true;    // H_e summand; false gives the "without ER" ablation
  bool relation = true;  // H_r summand; false gives the "without RC" ablation
};

struct LayerState {
  Tensor H;
  Tensor H_e;  // undefined at layer 0
  Tensor H_r;  // undefined at layer 0
  Tensor Y_e;  // [n x 5]
  Tensor Y_r;  // [n x n x l]
};

struct LayerOutput {
  Tensor H_e;
  Tensor H_r;
  Tensor H;
};

inline LayerOutput interaction_layer(const LayerState& prev, const GruParams& gru_e, const GruParams& gru_r,
                                     FusionFlags flags = {}) {
  LayerOutput out;
  out.H_e = gru_rows(prev.H, prev.Y_e, gru_e);
  out.H_r = gru_rows(prev.H, aggregate_relation_evidence(prev.Y_r), gru_r);
  if (flags.relation && flags.entity)
    out.H = (out.H_r + out.H_e) + prev.H;
  else if (flags.relation)
    out.H = out.H_r + prev.H;
  else if (flags.entity)
    out.H = out.H_e + prev.H;
  else
    out.H = prev.H;
  return out;
}

/// Parameters of the interaction stack and heads. Tied stacks hold one GRU
/// pair and one head pair reused at every layer; untied stacks hold K GRU
/// pairs (layers 1..K) and K+1 head pairs (layers 0..K).
struct StackParams {
  std::vector<GruParams> gru_e;
  std::vector<GruParams> gru_r;
  std::vector<ErParams> er;
  std::vector<RcParams> rc;

  bool tied() const { return er.size() == 1; }
  const GruParams& gru_e_at(std::size_t k) const { return gru_e.at(gru_e.size() == 1 ? 0 : k - 1); }
  const GruParams& gru_r_at(std::size_t k) const { return gru_r.at(gru_r.size() == 1 ? 0 : k - 1); }
  const ErParams& er_at(std::size_t k) const { return er.at(er.size() == 1 ? 0 : k); }
  const RcParams& rc_at(std::size_t k) const { return rc.at(rc.size() == 1 ? 0 : k); }
};

struct StackOutput {
  Tensor Y_e;  // layer-K entity distribution [n x 5]
  Tensor Y_r;  // layer-K relation scores [n x n x l]
  std::vector<LayerState> trace;  // layers 0..K
};

/// K = 0 is the model without interaction: both heads read the encoder
/// output directly.
inline StackOutput run_stack(const Tensor& h0, int k_layers, const StackParams& params, FusionFlags flags = {}) {
  if (k_layers < 0) throw ConfigError("number of interaction layers must be >= 0");
  const auto K = static_cast<std::size_t>(k_layers);
  StackOutput out;
  LayerState state;
  state.H = h0;
  state.Y_e = er_predict(h0, params.er_at(0));
  state.Y_r = rc_predict(h0, params.rc_at(0));
  out.trace.push_back(state);
  for (std::size_t k = 1; k <= K; ++k) {
    const LayerOutput layer = interaction_layer(state, params.gru_e_at(k), params.gru_r_at(k), flags);
    state = LayerState{layer.H, layer.H_e, layer.H_r, er_predict(layer.H_e, params.er_at(k)),
                       rc_predict(layer.H_r, params.rc_at(k))};
    out.trace.push_back(state);
  }
  out.Y_e = state.Y_e;
  out.Y_r = state.Y_r;
  return out;
}

}  // namespace rin
