// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations used as oracles by the unit and
// acceptance suites. Everything here works on plain std::vector<double>
// with explicit loops and never calls into the tensor library's ops.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "rin/rin.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major, m[i][j]

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Mat to_mat(const rin::Tensor& t) {
  Mat m(t.dim(0), Vec(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.values()[i * t.dim(1) + j];
  return m;
}

inline Vec to_vec(const rin::Tensor& t) { return {t.values().begin(), t.values().end()}; }

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), Vec(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// W x + b for W[out x in].
inline Vec affine(const Mat& w, const Vec& x, const Vec& b) {
  Vec y(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    double acc = b.empty() ? 0.0 : b[i];
    for (std::size_t k = 0; k < x.size(); ++k) acc += w[i][k] * x[k];
    y[i] = acc;
  }
  return y;
}

inline Vec cat(const Vec& a, const Vec& b) {
  Vec out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

inline Vec lstm_step(const rin::LstmParams& p, const Vec& x, Vec& h, Vec& c) {
  const Vec xh = cat(x, h);
  const Vec i = affine(to_mat(p.W_i), xh, to_vec(p.b_i));
  const Vec f = affine(to_mat(p.W_f), xh, to_vec(p.b_f));
  const Vec o = affine(to_mat(p.W_o), xh, to_vec(p.b_o));
  const Vec g = affine(to_mat(p.W_c), xh, to_vec(p.b_c));
  for (std::size_t k = 0; k < h.size(); ++k) {
    c[k] = sigmoid(f[k]) * c[k] + sigmoid(i[k]) * std::tanh(g[k]);
    h[k] = sigmoid(o[k]) * std::tanh(c[k]);
  }
  return h;
}

inline Mat bilstm(const Mat& x, const rin::EncoderParams& p) {
  const std::size_t n = x.size(), hf = p.forward.hidden(), hb = p.backward.hidden();
  Mat out(n, Vec(hf + hb));
  Vec h(hf, 0.0), c(hf, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    lstm_step(p.forward, x[t], h, c);
    std::copy(h.begin(), h.end(), out[t].begin());
  }
  Vec hr(hb, 0.0), cr(hb, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t t = n - 1 - s;
    lstm_step(p.backward, x[t], hr, cr);
    std::copy(hr.begin(), hr.end(), out[t].begin() + static_cast<std::ptrdiff_t>(hf));
  }
  return out;
}

inline Vec gru(const rin::GruParams& p, const Vec& h, const Vec& y) {
  const Vec hy = cat(h, y);
  const Vec z = affine(to_mat(p.W_z), hy, to_vec(p.b_z));
  const Vec u = affine(to_mat(p.W_u), hy, to_vec(p.b_u));
  Vec uh(h.size());
  for (std::size_t k = 0; k < h.size(); ++k) uh[k] = sigmoid(u[k]) * h[k];
  const Vec cand = affine(to_mat(p.W_o), cat(uh, y), to_vec(p.b_o));
  Vec out(h.size());
  for (std::size_t k = 0; k < h.size(); ++k) {
    const double zk = sigmoid(z[k]);
    out[k] = (1.0 - zk) * h[k] + zk * std::tanh(cand[k]);
  }
  return out;
}

inline Mat er(const Mat& h, const rin::ErParams& p) {
  Mat out;
  for (const auto& row : h) {
    Vec logits = affine(to_mat(p.W), row, to_vec(p.b));
    double z = 0.0;
    for (double v : logits) z += std::exp(v);
    for (double& v : logits) v = std::exp(v) / z;
    out.push_back(logits);
  }
  return out;
}

// out[(i*n + j)*l + t] = σ(W_r relu(W_m (h_i ⊕ h_j)) + b_r)_t
inline Vec rc(const Mat& h, const rin::RcParams& p) {
  const std::size_t n = h.size(), l = p.relations();
  const Mat wm = to_mat(p.W_m), wr = to_mat(p.W_r);
  const Vec br = to_vec(p.b_r);
  Vec out(n * n * l);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Vec m = affine(wm, cat(h[i], h[j]), {});
      for (double& v : m) v = std::max(0.0, v);
      const Vec s = affine(wr, m, br);
      for (std::size_t t = 0; t < l; ++t) out[(i * n + j) * l + t] = sigmoid(s[t]);
    }
  return out;
}

inline double er_loss(const Mat& probs, const std::vector<std::size_t>& tags, const std::vector<bool>& mask) {
  double loss = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (mask[i]) loss -= std::log(std::max(probs[i][tags[i]], 1e-12));
  return loss;
}

inline double rc_loss(const Vec& y, std::size_t n, std::size_t l, const std::set<rin::PairTarget>& gold,
                      const std::vector<bool>& mask) {
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < l; ++t) {
        if (!mask[i] || !mask[j]) continue;
        const double p = y[(i * n + j) * l + t];
        const bool positive = gold.contains(rin::PairTarget{i, j, t});
        loss -= positive ? std::log(std::max(p, 1e-12)) : std::log(std::max(1.0 - p, 1e-12));
      }
  return loss;
}

// Triples as (subj, rel, obj) tuples for set comparisons.
using Key = std::tuple<std::size_t, std::size_t, std::size_t>;

inline std::set<Key> keys(const rin::Prediction& p) {
  std::set<Key> out;
  for (const auto& t : p.triples) out.insert({t.subj, t.rel, t.obj});
  return out;
}

inline std::set<Key> keys(const rin::Sentence& s) {
  std::set<Key> out;
  for (const auto& t : s.triples) out.insert({t.subj, t.rel, t.obj});
  return out;
}

// Span [start, end) that covers token i, by linear scan; {-1,-1} if none.
inline std::pair<long, long> covering(const std::vector<rin::EntitySpan>& spans, std::size_t i) {
  for (const auto& s : spans)
    if (s.start <= i && i < s.end) return {static_cast<long>(s.start), static_cast<long>(s.end)};
  return {-1, -1};
}

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

inline Counts partial(const rin::Prediction& p, const rin::Sentence& g) {
  const auto pk = keys(p), gk = keys(g);
  Counts c;
  for (const auto& k : pk) (gk.count(k) ? c.tp : c.fp)++;
  c.fn = gk.size() - c.tp;
  return c;
}

inline Counts exact(const rin::Prediction& p, const rin::Sentence& g) {
  const auto pk = keys(p), gk = keys(g);
  Counts c;
  for (const auto& [s, r, o] : pk) {
    bool ok = gk.count({s, r, o}) > 0;
    for (std::size_t a : {s, o}) {
      const auto ps = covering(p.spans, a);
      const auto gs = covering(g.entities, a);
      ok = ok && ps.first >= 0 && ps == gs;
    }
    (ok ? c.tp : c.fp)++;
  }
  c.fn = gk.size() - c.tp;
  return c;
}

}  // namespace oracle

namespace testing_support {

inline std::string fixture(const std::string& name) { return std::string(RIN_FIXTURE_DIR) + "/" + name; }

inline rin::Tensor random_tensor(rin::Shape shape, rin::Rng& rng, double scale = 1.0, bool grad = true) {
  return rin::Tensor::uniform(std::move(shape), -scale, scale, rng, grad);
}

inline rin::GruParams random_gru(std::size_t d_h, std::size_t d_y, rin::Rng& rng, double scale = 0.5) {
  return {random_tensor({d_h, d_h + d_y}, rng, scale), random_tensor({d_h, d_h + d_y}, rng, scale),
          random_tensor({d_h, d_h + d_y}, rng, scale), random_tensor({d_h}, rng, scale),
          random_tensor({d_h}, rng, scale),            random_tensor({d_h}, rng, scale)};
}

inline rin::GruParams zero_gru(std::size_t d_h, std::size_t d_y) {
  using rin::Tensor;
  return {Tensor::zeros({d_h, d_h + d_y}, true), Tensor::zeros({d_h, d_h + d_y}, true),
          Tensor::zeros({d_h, d_h + d_y}, true), Tensor::zeros({d_h}, true),
          Tensor::zeros({d_h}, true),            Tensor::zeros({d_h}, true)};
}

inline rin::LstmParams random_lstm(std::size_t d_in, std::size_t hidden, rin::Rng& rng, double scale = 0.5) {
  return {random_tensor({hidden, d_in + hidden}, rng, scale), random_tensor({hidden, d_in + hidden}, rng, scale),
          random_tensor({hidden, d_in + hidden}, rng, scale), random_tensor({hidden, d_in + hidden}, rng, scale),
          random_tensor({hidden}, rng, scale),                random_tensor({hidden}, rng, scale),
          random_tensor({hidden}, rng, scale),                random_tensor({hidden}, rng, scale)};
}

inline rin::ErParams random_er(std::size_t d_h, rin::Rng& rng, double scale = 0.5) {
  return {random_tensor({rin::kNumTags, d_h}, rng, scale), random_tensor({rin::kNumTags}, rng, scale)};
}

inline rin::RcParams random_rc(std::size_t d_h, std::size_t d_m, std::size_t l, rin::Rng& rng, double scale = 0.5) {
  return {random_tensor({d_m, 2 * d_h}, rng, scale), random_tensor({l, d_m}, rng, scale), random_tensor({l}, rng, scale)};
}

inline rin::StackParams random_stack(std::size_t d_h, std::size_t d_m, std::size_t l, std::size_t layers,
                                     rin::Rng& rng) {
  rin::StackParams s;
  for (std::size_t k = 0; k < layers; ++k) {
    s.gru_e.push_back(random_gru(d_h, rin::kNumTags, rng));
    s.gru_r.push_back(random_gru(d_h, l, rng));
  }
  for (std::size_t k = 0; k <= layers; ++k) {
    s.er.push_back(random_er(d_h, rng));
    s.rc.push_back(random_rc(d_h, d_m, l, rng));
  }
  return s;
}

inline rin::EncoderParams random_encoder(std::size_t vocab, std::size_t d_w, std::size_t pos, std::size_t d_p,
                                        std::size_t d_h, rin::Rng& rng) {
  rin::EncoderParams p;
  p.word_emb = random_tensor({vocab, d_w}, rng);
  if (d_p > 0) p.pos_emb = random_tensor({pos, d_p}, rng);
  p.forward = random_lstm(d_w + d_p, d_h / 2, rng);
  p.backward = random_lstm(d_w + d_p, d_h / 2, rng);
  return p;
}

inline std::vector<rin::Tensor> lstm_tensors(const rin::LstmParams& p) {
  return {p.W_i, p.W_f, p.W_o, p.W_c, p.b_i, p.b_f, p.b_o, p.b_c};
}

inline std::vector<rin::Tensor> tensors_of(const rin::GruParams& p) { return {p.W_z, p.W_u, p.W_o, p.b_z, p.b_u, p.b_o}; }

// Non-overlapping random spans with last-token anchors.
inline std::vector<rin::EntitySpan> random_spans(std::size_t n, rin::Rng& rng, double p_entity = 0.5,
                                                std::size_t max_len = 3) {
  std::vector<rin::EntitySpan> spans;
  for (std::size_t i = 0; i < n;) {
    if (rng.bernoulli(p_entity)) {
      const std::size_t len = 1 + rng.below(std::min(max_len, n - i));
      spans.push_back(rin::make_span(i, i + len));
      i += len;
    } else {
      ++i;
    }
  }
  return spans;
}

inline rin::Sentence random_gold(std::size_t n, std::size_t l, rin::Rng& rng) {
  rin::Sentence s;
  s.tokens.assign(n, "w");
  s.pos.assign(n, "X");
  s.entities = random_spans(n, rng);
  if (s.entities.size() >= 2)
    for (std::size_t k = 0; k < 1 + rng.below(4); ++k) {
      const auto& a = s.entities[rng.below(s.entities.size())];
      const auto& b = s.entities[rng.below(s.entities.size())];
      if (a.anchor != b.anchor) s.triples.push_back({a.anchor, rng.below(l), b.anchor});
    }
  std::sort(s.triples.begin(), s.triples.end());
  s.triples.erase(std::unique(s.triples.begin(), s.triples.end()), s.triples.end());
  return s;
}

// Perturbs gold into a prediction: drops, adds and shifts spans and triples.
inline rin::Prediction perturb(const rin::Sentence& gold, std::size_t l, rin::Rng& rng) {
  rin::Prediction p;
  const std::size_t n = gold.size();
  if (rng.bernoulli(0.3)) {
    p.spans = random_spans(n, rng);
  } else {
    for (auto s : gold.entities) {
      if (rng.bernoulli(0.15)) continue;
      if (rng.bernoulli(0.2) && s.start > 0 && rin::span_containing(p.spans, s.start - 1) == nullptr) --s.start;
      p.spans.push_back(s);
    }
  }
  for (const auto& t : gold.triples)
    if (!rng.bernoulli(0.25)) p.triples.push_back({t.subj, t.rel, t.obj, 0.9});
  for (std::size_t k = 0; k < rng.below(3); ++k) {
    const std::size_t i = rng.below(n), j = rng.below(n);
    if (i != j) p.triples.push_back({i, rng.below(l), j, 0.7});
  }
  if (!p.triples.empty() && rng.bernoulli(0.2)) p.triples.push_back(p.triples.front());  // duplicate
  p.normalize();
  return p;
}

inline rin::RelationSchema fixture_schema() { return rin::load_schema(fixture("schema.txt")); }

// Fixture config with paths made absolute.
inline rin::TrainConfig fixture_config() {
  auto c = rin::load_config(fixture("fixture.cfg"));
  c.schema_path = fixture("schema.txt");
  return c;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rin_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_support
