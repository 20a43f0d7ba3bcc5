// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rin/error.hpp"
#include "rin/rng.hpp"
#include "rin/tensor.hpp"

namespace rin {

/// One LSTM direction. Each gate weight is [hidden × (d_in + hidden)] and
/// acts on x_t ⊕ h_{t−1}.
struct LstmParams {
  Tensor W_i, W_f, W_o, W_c;
  Tensor b_i, b_f, b_o, b_c;

  std::size_t hidden() const { return W_i.dim(0); }
  std::size_t input() const { return W_i.dim(1) - W_i.dim(0); }
};

struct EncoderParams {
  Tensor word_emb;  // [|V| x d_w]
  Tensor pos_emb;   // [|P| x d_p]; undefined when POS input is disabled
  LstmParams forward;
  LstmParams backward;

  bool use_pos() const { return pos_emb.defined(); }
  std::size_t d_input() const { return word_emb.dim(1) + (use_pos() ? pos_emb.dim(1) : 0); }
  std::size_t d_hidden() const { return forward.hidden() + backward.hidden(); }
};

/// Word (⊕ POS) embedding lookup followed by input dropout → [n × d_in].
inline Tensor embed(std::span<const std::size_t> token_ids, std::span<const std::size_t> pos_ids,
                    const EncoderParams& params, double rate, Mode mode, Rng& rng) {
  Tensor x = gather_rows(params.word_emb, token_ids);
  if (params.use_pos()) {
    if (pos_ids.size() != token_ids.size()) throw ContractError("embed: token and POS id counts differ");
    x = concat(x, gather_rows(params.pos_emb, pos_ids), 1);
  }
  return dropout(x, rate, mode, rng);
}

/// Runs one direction over X[n × d_in] from zero state; row t of the result
/// is the hidden state after consuming input row t.
inline Tensor lstm_run(const Tensor& x, const LstmParams& p, bool reverse) {
  const std::size_t n = x.dim(0), hidden = p.hidden();
  if (x.dim(1) != p.input())
    throw DimensionError("lstm: input width " + std::to_string(x.dim(1)) + " but weights expect " + std::to_string(p.input()));
  Tensor h = Tensor::zeros({1, hidden});
  Tensor c = Tensor::zeros({1, hidden});
  std::vector<Tensor> states(n);
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t t = reverse ? n - 1 - step : step;
    const Tensor xh = concat(slice(x, 0, t, t + 1), h, 1);
    const Tensor in_gate = sigmoid(linear(xh, p.W_i, p.b_i));
    const Tensor forget_gate = sigmoid(linear(xh, p.W_f, p.b_f));
    const Tensor out_gate = sigmoid(linear(xh, p.W_o, p.b_o));
    const Tensor candidate = tanh(linear(xh, p.W_c, p.b_c));
    c = forget_gate * c + in_gate * candidate;
    h = out_gate * tanh(c);
    states[t] = h;
  }
  return concat(std::span<const Tensor>(states), 0);
}

/// Shared features H[n × d_h]: forward and backward hidden states side by side.
inline Tensor bilstm_forward(const Tensor& x, const EncoderParams& params) {
  if (x.rank() != 2) throw DimensionError("bilstm: expected [n x d_in], got " + to_string(x.shape()));
  return concat(lstm_run(x, params.forward, false), lstm_run(x, params.backward, true), 1);
}

}  // namespace rin
