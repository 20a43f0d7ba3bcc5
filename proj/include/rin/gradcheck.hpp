// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <set>
#include <string>
#include <vector>

#include "rin/config.hpp"
#include "rin/corpus.hpp"
#include "rin/heads.hpp"
#include "rin/model.hpp"
#include "rin/optim.hpp"

namespace rin {

/// A random model plus one labelled sentence, small enough to difference
/// every parameter.
struct GradCheckInstance {
  TrainConfig config;
  Vocabulary vocab;
  ModelParams params;
  std::vector<std::size_t> words, pos, tags;
  std::vector<bool> mask;
  std::set<PairTarget> gold;

  Tensor loss() const {
    Rng unused(0);
    const auto out = forward(params, config, words, pos, Mode::eval, unused);
    const Tensor terms[] = {er_loss(out.Y_e, tags, mask), rc_loss(out.Y_r, gold, mask, config.positive_weight)};
    return sum(std::span<const Tensor>(terms));
  }
};

/// "tiny": n=4, d_h=8, d_w=6, d_p=2, l=3, K=2. "small": n=6, d_h=12, d_w=8,
/// d_p=4, l=3, K=3. Flags and seed come from `base`; dropout is forced off.
inline GradCheckInstance make_gradcheck_instance(const std::string& scale, const TrainConfig& base) {
  GradCheckInstance g;
  g.config = base;
  g.config.dropout = 0.0;
  std::size_t n = 0;
  if (scale == "tiny") {
    n = 4;
    g.config.k_layers = 2, g.config.d_hidden = 8, g.config.d_word = 6, g.config.d_pos = 2, g.config.d_pair = 8;
  } else if (scale == "small") {
    n = 6;
    g.config.k_layers = 3, g.config.d_hidden = 12, g.config.d_word = 8, g.config.d_pos = 4, g.config.d_pair = 10;
  } else {
    throw ConfigError("unknown gradcheck scale '" + scale + "' (expected tiny or small)");
  }
  g.config.validate();
  g.vocab = Vocabulary({"a", "b", "c", "d"}, {"X", "Y"});
  Rng rng(base.seed);
  g.params = init_params(g.config, g.vocab, 3, rng);
  // S B E S [B E]: a multi-token entity between singletons.
  const std::vector<std::size_t> pattern{4, 0, 3, 4, 0, 3};
  for (std::size_t i = 0; i < n; ++i) {
    g.words.push_back(2 + i % 4);
    g.pos.push_back(2 + i % 2);
    g.tags.push_back(pattern[i]);
    g.mask.push_back(true);
  }
  g.gold = {{0, 3, 1}, {3, 0, 2}};
  return g;
}

inline GradCheckResult run_gradcheck(GradCheckInstance& g, double eps = 1e-5,
                                     const std::function<void(std::vector<std::vector<double>>&)>& corrupt = {}) {
  auto tensors = g.params.tensors();
  return grad_check([&] { return g.loss(); }, tensors, eps, corrupt);
}

}  // namespace rin
