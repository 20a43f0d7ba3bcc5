// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rin/config.hpp"
#include "rin/corpus.hpp"
#include "rin/encoder.hpp"
#include "rin/heads.hpp"
#include "rin/interaction.hpp"
#include "rin/tensor.hpp"

namespace rin {

using NamedTensor = std::pair<std::string, Tensor>;

/// Every learnable tensor of the network.
struct ModelParams {
  EncoderParams encoder;
  StackParams stack;

  /// Stable, documented order; checkpoints and optimizers rely on it.
  std::vector<NamedTensor> named() const {
    std::vector<NamedTensor> out;
    out.emplace_back("encoder.word_emb", encoder.word_emb);
    if (encoder.use_pos()) out.emplace_back("encoder.pos_emb", encoder.pos_emb);
    auto lstm = [&](const std::string& prefix, const LstmParams& p) {
      out.emplace_back(prefix + ".W_i", p.W_i);
      out.emplace_back(prefix + ".W_f", p.W_f);
      out.emplace_back(prefix + ".W_o", p.W_o);
      out.emplace_back(prefix + ".W_c", p.W_c);
      out.emplace_back(prefix + ".b_i", p.b_i);
      out.emplace_back(prefix + ".b_f", p.b_f);
      out.emplace_back(prefix + ".b_o", p.b_o);
      out.emplace_back(prefix + ".b_c", p.b_c);
    };
    lstm("encoder.lstm_fwd", encoder.forward);
    lstm("encoder.lstm_bwd", encoder.backward);
    auto gru = [&](const std::string& prefix, const GruParams& p) {
      out.emplace_back(prefix + ".W_z", p.W_z);
      out.emplace_back(prefix + ".W_u", p.W_u);
      out.emplace_back(prefix + ".W_o", p.W_o);
      out.emplace_back(prefix + ".b_z", p.b_z);
      out.emplace_back(prefix + ".b_u", p.b_u);
      out.emplace_back(prefix + ".b_o", p.b_o);
    };
    for (std::size_t k = 0; k < stack.gru_e.size(); ++k) gru("gru_e." + std::to_string(k), stack.gru_e[k]);
    for (std::size_t k = 0; k < stack.gru_r.size(); ++k) gru("gru_r." + std::to_string(k), stack.gru_r[k]);
    for (std::size_t k = 0; k < stack.er.size(); ++k) {
      out.emplace_back("er." + std::to_string(k) + ".W", stack.er[k].W);
      out.emplace_back("er." + std::to_string(k) + ".b", stack.er[k].b);
    }
    for (std::size_t k = 0; k < stack.rc.size(); ++k) {
      out.emplace_back("rc." + std::to_string(k) + ".W_m", stack.rc[k].W_m);
      out.emplace_back("rc." + std::to_string(k) + ".W_r", stack.rc[k].W_r);
      out.emplace_back("rc." + std::to_string(k) + ".b_r", stack.rc[k].b_r);
    }
    return out;
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named()) out.push_back(t);
    return out;
  }

  std::size_t count() const {
    std::size_t total = 0;
    for (const auto& t : tensors()) total += t.size();
    return total;
  }

  /// Deep copy with fresh leaves.
  ModelParams clone() const {
    ModelParams copy = *this;
    auto c = [](Tensor& t) {
      if (t.defined()) t = t.clone(t.requires_grad());
    };
    c(copy.encoder.word_emb);
    c(copy.encoder.pos_emb);
    for (auto* l : {&copy.encoder.forward, &copy.encoder.backward})
      for (auto* t : {&l->W_i, &l->W_f, &l->W_o, &l->W_c, &l->b_i, &l->b_f, &l->b_o, &l->b_c}) c(*t);
    for (auto* v : {&copy.stack.gru_e, &copy.stack.gru_r})
      for (auto& g : *v)
        for (auto* t : {&g.W_z, &g.W_u, &g.W_o, &g.b_z, &g.b_u, &g.b_o}) c(*t);
    for (auto& e : copy.stack.er) c(e.W), c(e.b);
    for (auto& r : copy.stack.rc) c(r.W_m), c(r.W_r), c(r.b_r);
    return copy;
  }

  /// Copies values (not graph state) from another parameter set of identical layout.
  void assign(const ModelParams& other) {
    auto mine = tensors();
    const auto theirs = other.tensors();
    if (mine.size() != theirs.size()) throw ContractError("parameter layouts differ");
    for (std::size_t k = 0; k < mine.size(); ++k) {
      if (mine[k].shape() != theirs[k].shape()) throw ContractError("parameter shapes differ");
      std::copy(theirs[k].values().begin(), theirs[k].values().end(), mine[k].mutable_values().begin());
    }
  }
};

inline double glorot_bound(std::size_t fan_out, std::size_t fan_in) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

namespace detail {

inline Tensor glorot(std::size_t out, std::size_t in, Rng& rng) {
  const double bound = glorot_bound(out, in);
  return Tensor::uniform({out, in}, -bound, bound, rng, true);
}

inline Tensor embedding_table(std::size_t rows, std::size_t dim, Rng& rng) {
  Tensor t = Tensor::uniform({rows, dim}, -0.1, 0.1, rng, true);
  std::fill_n(t.mutable_values().begin(), dim, 0.0);  // <pad>
  return t;
}

inline LstmParams init_lstm(std::size_t d_in, std::size_t hidden, Rng& rng) {
  LstmParams p;
  p.W_i = glorot(hidden, d_in + hidden, rng);
  p.W_f = glorot(hidden, d_in + hidden, rng);
  p.W_o = glorot(hidden, d_in + hidden, rng);
  p.W_c = glorot(hidden, d_in + hidden, rng);
  p.b_i = Tensor::zeros({hidden}, true);
  p.b_f = Tensor::full({hidden}, 1.0, true);
  p.b_o = Tensor::zeros({hidden}, true);
  p.b_c = Tensor::zeros({hidden}, true);
  return p;
}

inline GruParams init_gru(std::size_t hidden, std::size_t evidence, Rng& rng) {
  GruParams p;
  p.W_z = glorot(hidden, hidden + evidence, rng);
  p.W_u = glorot(hidden, hidden + evidence, rng);
  p.W_o = glorot(hidden, hidden + evidence, rng);
  p.b_z = Tensor::zeros({hidden}, true);
  p.b_u = Tensor::zeros({hidden}, true);
  p.b_o = Tensor::zeros({hidden}, true);
  return p;
}

}  // namespace detail

/// Glorot-uniform weights, zero biases (LSTM forget gate 1.0), embeddings
/// from `pretrained` when given, else U(−0.1, 0.1); <pad> rows are zero.
inline ModelParams init_params(const TrainConfig& config, const Vocabulary& vocab, std::size_t relations, Rng& rng,
                               const Tensor* pretrained = nullptr) {
  config.validate();
  if (relations == 0) throw ConfigError("at least one relation type is required");
  const std::size_t d_h = config.d_hidden, half = d_h / 2;
  ModelParams p;
  if (pretrained) {
    if (pretrained->rank() != 2 || pretrained->dim(0) != vocab.size() || pretrained->dim(1) != config.d_word)
      throw ConfigError("pretrained embeddings " + to_string(pretrained->shape()) + " do not match vocabulary size " +
                        std::to_string(vocab.size()) + " and d_word " + std::to_string(config.d_word));
    p.encoder.word_emb = pretrained->clone(true);
  } else {
    p.encoder.word_emb = detail::embedding_table(vocab.size(), config.d_word, rng);
  }
  if (config.use_pos) p.encoder.pos_emb = detail::embedding_table(vocab.pos_size(), config.d_pos, rng);
  p.encoder.forward = detail::init_lstm(config.d_input(), half, rng);
  p.encoder.backward = detail::init_lstm(config.d_input(), half, rng);

  const std::size_t K = static_cast<std::size_t>(config.k_layers);
  const std::size_t grus = config.tie_layers ? 1 : K;
  const std::size_t heads = config.tie_layers ? 1 : K + 1;
  for (std::size_t k = 0; k < grus; ++k) {
    p.stack.gru_e.push_back(detail::init_gru(d_h, kNumTags, rng));
    p.stack.gru_r.push_back(detail::init_gru(d_h, relations, rng));
  }
  for (std::size_t k = 0; k < heads; ++k) {
    p.stack.er.push_back({detail::glorot(kNumTags, d_h, rng), Tensor::zeros({kNumTags}, true)});
    p.stack.rc.push_back({detail::glorot(config.d_pair, 2 * d_h, rng), detail::glorot(relations, config.d_pair, rng),
                          Tensor::zeros({relations}, true)});
  }
  return p;
}

inline FusionFlags fusion_flags(const TrainConfig& c) { return {c.interact_er, c.interact_rc}; }

/// Encoder plus interaction stack for one sentence given as id sequences.
inline StackOutput forward(const ModelParams& params, const TrainConfig& config, std::span<const std::size_t> token_ids,
                           std::span<const std::size_t> pos_ids, Mode mode, Rng& rng) {
  const Tensor x = embed(token_ids, pos_ids, params.encoder, config.dropout, mode, rng);
  return run_stack(bilstm_forward(x, params.encoder), config.k_layers, params.stack, fusion_flags(config));
}

/// er_loss + rc_loss at layer K for row `row` of a batch. Padding is stripped
/// before encoding so a padded row yields the same loss as the bare sentence.
inline Tensor sentence_loss(const ModelParams& params, const TrainConfig& config, const Batch& batch, std::size_t row,
                            Mode mode, Rng& rng) {
  const std::size_t n = batch.lengths.at(row);
  const std::span<const std::size_t> words(batch.token_ids[row].data(), n);
  const std::span<const std::size_t> tags(batch.pos_ids[row].data(), n);
  const StackOutput out = forward(params, config, words, tags, mode, rng);
  const std::vector<bool> mask(batch.mask[row].begin(), batch.mask[row].begin() + static_cast<std::ptrdiff_t>(n));
  const std::span<const std::size_t> gold(batch.gold_tags[row].data(), n);
  const Tensor terms[] = {er_loss(out.Y_e, gold, mask),
                          rc_loss(out.Y_r, batch.gold_pair_targets[row], mask, config.positive_weight)};
  return sum(std::span<const Tensor>(terms));
}

/// Σ over sentences of (er_loss + rc_loss).
inline Tensor total_loss(std::span<const Tensor> sentence_losses) { return sum(sentence_losses); }

}  // namespace rin
