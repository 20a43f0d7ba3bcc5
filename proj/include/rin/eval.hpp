// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <set>
#include <span>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "rin/config.hpp"
#include "rin/corpus.hpp"
#include "rin/model.hpp"
#include "rin/tensor.hpp"

namespace rin {

struct ScoredTriple {
  std::size_t subj = 0;
  std::size_t rel = 0;
  std::size_t obj = 0;
  double score = 0.0;

  GoldTriple key() const { return {subj, rel, obj}; }
};

struct Prediction {
  std::vector<EntitySpan> spans;
  std::vector<ScoredTriple> triples;  // sorted by (subj, rel, obj), no duplicates

  /// Sorts triples and collapses duplicates, keeping the highest score.
  void normalize() {
    std::sort(triples.begin(), triples.end(), [](const ScoredTriple& a, const ScoredTriple& b) {
      return std::tie(a.subj, a.rel, a.obj, b.score) < std::tie(b.subj, b.rel, b.obj, a.score);
    });
    triples.erase(std::unique(triples.begin(), triples.end(),
                              [](const ScoredTriple& a, const ScoredTriple& b) { return a.key() == b.key(); }),
                  triples.end());
  }

  std::set<GoldTriple> triple_set() const {
    std::set<GoldTriple> out;
    for (const auto& t : triples) out.insert(t.key());
    return out;
  }
};

/// Argmax tag per word (ties to the lower tag index), then BIOES decoding
/// with repair.
inline std::vector<EntitySpan> decode_entities(const Tensor& y_e, AnchorPolicy policy = AnchorPolicy::last) {
  if (y_e.rank() != 2 || y_e.dim(1) != kNumTags) throw DimensionError("decode_entities: expected [n x 5], got " + to_string(y_e.shape()));
  std::vector<Tag> tags(y_e.dim(0));
  for (std::size_t i = 0; i < tags.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t t = 1; t < kNumTags; ++t)
      if (y_e.at(i, t) > y_e.at(i, best)) best = t;
    tags[i] = static_cast<Tag>(best);
  }
  return bioes_decode(tags, policy);
}

/// Every (i, t, j) with score ≥ threshold and i ≠ j.
inline std::vector<ScoredTriple> decode_triples(const Tensor& y_r, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
  if (y_r.rank() != 3 || y_r.dim(0) != y_r.dim(1)) throw DimensionError("decode_triples: expected [n x n x l]");
  const std::size_t n = y_r.dim(0), l = y_r.dim(2);
  std::vector<ScoredTriple> out;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < l; ++t)
      for (std::size_t j = 0; j < n; ++j) {
        const double s = y_r.at(i, j, t);
        if (i != j && s >= threshold) out.push_back({i, t, j, s});
      }
  return out;
}

inline Prediction predict(const ModelParams& params, const TrainConfig& config, const Vocabulary& vocab,
                          const Sentence& sentence) {
  NoGradGuard no_grad;
  Rng unused(0);
  const auto words = vocab.encode_words(sentence.tokens);
  const auto tags = vocab.encode_pos(sentence.pos);
  const StackOutput out = forward(params, config, words, tags, Mode::eval, unused);
  Prediction p;
  p.spans = decode_entities(out.Y_e, config.anchor_policy);
  p.triples = decode_triples(out.Y_r, config.threshold);
  p.normalize();
  return p;
}

/// Runs predict() over a corpus, fanning out over at most `threads` workers.
inline std::vector<Prediction> predict_corpus(const ModelParams& params, const TrainConfig& config,
                                              const Vocabulary& vocab, const Corpus& corpus, std::size_t threads = 1) {
  std::vector<Prediction> out(corpus.size());
  threads = std::max<std::size_t>(1, std::min(threads, corpus.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < corpus.size(); ++i) out[i] = predict(params, config, vocab, corpus[i]);
    return out;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < corpus.size(); i += threads) out[i] = predict(params, config, vocab, corpus[i]);
    });
  pool.clear();
  return out;
}

// ---------------------------------------------------------------------------
// Scoring

struct MatchCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  MatchCounts& operator+=(const MatchCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const MatchCounts&) const = default;
};

struct PRF {
  MatchCounts counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Zero denominators give 0.
inline PRF make_prf(const MatchCounts& c) {
  PRF r{c};
  r.precision = c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  r.recall = c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  r.f1 = r.precision + r.recall == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

inline std::set<GoldTriple> gold_triple_set(const Sentence& gold) {
  return {gold.triples.begin(), gold.triples.end()};
}

/// Predicted triples that match under partial match: relation and both
/// anchor words correct.
inline std::set<GoldTriple> partial_match_hits(const Prediction& pred, const Sentence& gold) {
  const auto g = gold_triple_set(gold);
  std::set<GoldTriple> hits;
  for (const auto& t : pred.triple_set())
    if (g.contains(t)) hits.insert(t);
  return hits;
}

/// Partial match plus: the predicted span containing each anchor has the
/// same extent as the gold span containing it. An anchor outside every
/// predicted span never matches.
inline std::set<GoldTriple> exact_match_hits(const Prediction& pred, const Sentence& gold) {
  auto spans_agree = [&](std::size_t anchor) {
    const EntitySpan* p = span_containing(pred.spans, anchor);
    const EntitySpan* g = span_containing(gold.entities, anchor);
    return p && g && p->same_extent(*g);
  };
  std::set<GoldTriple> hits;
  for (const auto& t : partial_match_hits(pred, gold))
    if (spans_agree(t.subj) && spans_agree(t.obj)) hits.insert(t);
  return hits;
}

namespace detail {

inline MatchCounts counts_from_hits(std::size_t hits, const Prediction& pred, const Sentence& gold) {
  const std::size_t predicted = pred.triple_set().size();
  const std::size_t truth = gold_triple_set(gold).size();
  return {hits, predicted - hits, truth - hits};
}

}  // namespace detail

inline MatchCounts partial_match_score(const Prediction& pred, const Sentence& gold) {
  return detail::counts_from_hits(partial_match_hits(pred, gold).size(), pred, gold);
}

inline MatchCounts exact_match_score(const Prediction& pred, const Sentence& gold) {
  return detail::counts_from_hits(exact_match_hits(pred, gold).size(), pred, gold);
}

inline MatchCounts match_score(const Prediction& pred, const Sentence& gold, EvalMode mode) {
  return mode == EvalMode::partial ? partial_match_score(pred, gold) : exact_match_score(pred, gold);
}

/// Pools counts corpus-wide, then computes P/R/F1 once.
inline PRF micro_aggregate(std::span<const MatchCounts> contributions) {
  MatchCounts total;
  for (const auto& c : contributions) total += c;
  return make_prf(total);
}

inline PRF score_corpus(std::span<const Prediction> preds, const Corpus& gold, EvalMode mode) {
  if (preds.size() != gold.size())
    throw DataError("prediction count " + std::to_string(preds.size()) + " differs from gold count " + std::to_string(gold.size()));
  std::vector<MatchCounts> counts;
  for (std::size_t i = 0; i < gold.size(); ++i) counts.push_back(match_score(preds[i], gold[i], mode));
  return micro_aggregate(counts);
}

inline PRF evaluate(const ModelParams& params, const TrainConfig& config, const Vocabulary& vocab, const Corpus& corpus,
                    EvalMode mode, std::size_t threads = 1) {
  const auto preds = predict_corpus(params, config, vocab, corpus, threads);
  return score_corpus(preds, corpus, mode);
}

// ---------------------------------------------------------------------------
// Prediction dump: one JSON object per sentence, fixed key order.

inline nlohmann::ordered_json prediction_to_json(const Prediction& p, const RelationSchema& schema) {
  nlohmann::ordered_json j;
  j["spans"] = nlohmann::ordered_json::array();
  for (const auto& s : p.spans) j["spans"].push_back({{"start", s.start}, {"end", s.end}});
  j["triples"] = nlohmann::ordered_json::array();
  for (const auto& t : p.triples)
    j["triples"].push_back({{"subj", t.subj}, {"rel", schema.label(t.rel)}, {"obj", t.obj}, {"score", t.score}});
  return j;
}

inline Prediction prediction_from_json(const nlohmann::json& j, const RelationSchema& schema) {
  Prediction p;
  for (const auto& s : j.at("spans")) p.spans.push_back(make_span(s.at("start").get<std::size_t>(), s.at("end").get<std::size_t>()));
  for (const auto& t : j.at("triples"))
    p.triples.push_back({t.at("subj").get<std::size_t>(), schema.index(t.at("rel").get<std::string>()),
                         t.at("obj").get<std::size_t>(), t.value("score", 1.0)});
  p.normalize();
  return p;
}

}  // namespace rin
