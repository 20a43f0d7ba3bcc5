// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rin/checkpoint.hpp"
#include "rin/config.hpp"
#include "rin/corpus.hpp"
#include "rin/eval.hpp"
#include "rin/model.hpp"
#include "rin/optim.hpp"

namespace rin {

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  PRF dev;
};

inline nlohmann::ordered_json epoch_to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"dev_p", r.dev.precision}, {"dev_r", r.dev.recall},
          {"dev_f1", r.dev.f1}};
}

struct TrainOptions {
  std::function<void(const EpochRecord&)> on_epoch;
  std::size_t eval_threads = 1;
};

struct TrainResult {
  Checkpoint best;
  std::size_t best_epoch = 0;
  PRF best_dev;
  std::vector<EpochRecord> log;
};

/// Independent random streams derived from the configured seed.
struct SeedStreams {
  Rng init, shuffle, dropout, embeddings;
  explicit SeedStreams(std::uint64_t seed)
      : init(Rng(seed).fork(1)), shuffle(Rng(seed).fork(2)), dropout(Rng(seed).fork(3)), embeddings(Rng(seed).fork(4)) {}
};

/// Fresh parameters for a training run, honouring config.embeddings_path.
inline ModelParams initial_params(const TrainConfig& config, const Vocabulary& vocab, const RelationSchema& schema,
                                  SeedStreams& streams) {
  if (config.embeddings_path.empty()) return init_params(config, vocab, schema.size(), streams.init);
  const auto pretrained = load_pretrained_embeddings(config.embeddings_path, vocab, config.d_word, streams.embeddings);
  return init_params(config, vocab, schema.size(), streams.init, &pretrained.matrix);
}

/// Minimizes the summed loss with Adam for config.epochs epochs. After each
/// epoch the model is scored on `dev` (on `train` when dev is empty) under
/// config.eval_mode and the best epoch is kept; ties keep the earlier one.
inline TrainResult train(const Corpus& train_corpus, const Corpus& dev_corpus, const RelationSchema& schema,
                         const TrainConfig& config, const TrainOptions& options = {}) {
  config.validate();
  if (train_corpus.empty()) throw DataError("training corpus is empty");
  SeedStreams streams(config.seed);
  const Vocabulary vocab = build_vocab(train_corpus, config.min_freq);
  ModelParams params = initial_params(config, vocab, schema, streams);
  std::vector<Tensor> tensors = params.tensors();
  zero_grads(tensors);
  Adam adam(tensors);
  const Corpus& selection = dev_corpus.empty() ? train_corpus : dev_corpus;

  TrainResult result;
  result.best = {config, vocab, schema, params.clone()};
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (const Batch& batch : make_batches(train_corpus, vocab, config.batch_size, streams.shuffle, true)) {
      zero_grads(tensors);
      std::vector<Tensor> losses;
      for (std::size_t row = 0; row < batch.size(); ++row) {
        losses.push_back(sentence_loss(params, config, batch, row, Mode::train, streams.dropout));
        if (!std::isfinite(losses.back().item()))
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " on training sentence " +
                             std::to_string(batch.sentence_index[row]));
      }
      const Tensor loss = total_loss(losses);
      backward(loss);
      if (config.clip_norm > 0.0) clip_grad_norm(tensors, config.clip_norm);
      adam.step(config.lr);
      epoch_loss += loss.item();
    }

    EpochRecord record{epoch, epoch_loss, evaluate(params, config, vocab, selection, config.eval_mode, options.eval_threads)};
    if (epoch == 1 || record.dev.f1 > result.best_dev.f1) {
      result.best.params = params.clone();
      result.best_epoch = epoch;
      result.best_dev = record.dev;
    }
    result.log.push_back(record);
    if (options.on_epoch) options.on_epoch(record);
  }
  return result;
}

// ---------------------------------------------------------------------------
// K sweep

struct SweepRow {
  int k_layers = 0;
  double mean_f1 = 0.0;  // best-epoch dev F1
  double std_f1 = 0.0;
  double mean_train_f1 = 0.0;
  double std_train_f1 = 0.0;
  std::vector<double> dev_f1;
  std::vector<double> train_f1;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Sample standard deviation; a single value has std 0.
inline MeanStd mean_std(std::span<const double> xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return r;
  double sq = 0.0;
  for (double x : xs) sq += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(sq / static_cast<double>(xs.size() - 1));
  return r;
}

/// Trains one model per (K, seed) and reports per-K mean ± std of dev F1 and
/// of train F1 under config.eval_mode.
inline std::vector<SweepRow> sweep_k(const Corpus& train_corpus, const Corpus& dev_corpus, const RelationSchema& schema,
                                     const TrainConfig& config, std::span<const int> k_values,
                                     std::span<const std::uint64_t> seeds, const TrainOptions& options = {}) {
  if (k_values.empty() || seeds.empty()) throw ConfigError("sweep needs at least one K and one seed");
  std::vector<SweepRow> rows;
  for (int k : k_values) {
    SweepRow row;
    row.k_layers = k;
    for (auto seed : seeds) {
      TrainConfig c = config;
      c.k_layers = k;
      c.seed = seed;
      const TrainResult r = train(train_corpus, dev_corpus, schema, c, options);
      row.dev_f1.push_back(r.best_dev.f1);
      row.train_f1.push_back(
          evaluate(r.best.params, c, r.best.vocab, train_corpus, c.eval_mode, options.eval_threads).f1);
    }
    const auto dev = mean_std(row.dev_f1);
    const auto tr = mean_std(row.train_f1);
    row.mean_f1 = dev.mean;
    row.std_f1 = dev.std;
    row.mean_train_f1 = tr.mean;
    row.std_train_f1 = tr.std;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace rin
