// SPDX-License-Identifier: Apache-2.0
//
// rin: train, evaluate and inspect joint entity/relation extraction models.
//
//   rin train     --train T --dev D --out DIR [--config F] [key=value ...]
//   rin eval      --ckpt DIR --data F [--mode partial|exact] [--json] [--pred P]
//   rin predict   --ckpt DIR --data F --out P
//   rin gradcheck [--config F] [--scale tiny|small] [key=value ...]
//   rin sweep-k   --train T --dev D --k 0,1,2 --seeds 1,2 [--config F] [key=value ...]
//
// Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric failure.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rin/rin.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::size_t thread_budget() {
  const char* env = std::getenv("RIN_THREADS");
  if (!env || !*env) return 1;
  try {
    std::size_t used = 0;
    const long v = std::stol(env, &used);
    if (used == std::string(env).size() && v >= 1) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  throw rin::ConfigError(std::string("RIN_THREADS must be a positive integer, got '") + env + "'");
}

// Relative paths inside a config file are resolved against the file's directory.
void resolve_relative(std::string& path, const fs::path& base) {
  if (!path.empty() && fs::path(path).is_relative()) path = (base / path).lexically_normal().string();
}

rin::TrainConfig build_config(const std::string& file, const std::vector<std::string>& overrides) {
  rin::TrainConfig config;
  if (!file.empty()) {
    config = rin::load_config(file);
    const fs::path base = fs::path(file).parent_path();
    resolve_relative(config.schema_path, base);
    resolve_relative(config.embeddings_path, base);
  }
  for (const auto& o : overrides) rin::apply_override(config, o);
  config.validate();
  return config;
}

rin::RelationSchema schema_for(const rin::TrainConfig& config) {
  if (config.schema_path.empty()) throw rin::ConfigError("schema_path is not set");
  return rin::load_schema(config.schema_path);
}

template <class T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::istringstream conv(item);
    T v{};
    if (!(conv >> v) || !conv.eof()) throw rin::ConfigError(std::string("bad ") + what + " list entry '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw rin::ConfigError(std::string(what) + " list is empty");
  return out;
}

std::string format_prf(const rin::PRF& prf) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4) << "P=" << prf.precision << " R=" << prf.recall << " F1=" << prf.f1;
  return out.str();
}

struct Options {
  std::string config_file, train_path, dev_path, out_path, ckpt, data, mode, pred_path, scale = "tiny", k_list, seed_list;
  bool json = false;
  std::vector<std::string> overrides;
};

int cmd_train(const Options& o) {
  const auto config = build_config(o.config_file, o.overrides);
  const auto schema = schema_for(config);
  const auto train = rin::load_corpus(o.train_path, schema, config.anchor_policy);
  const auto dev = o.dev_path.empty() ? rin::Corpus{} : rin::load_corpus(o.dev_path, schema, config.anchor_policy);

  std::error_code ec;
  fs::create_directories(o.out_path, ec);
  if (ec) throw rin::DataError("cannot create '" + o.out_path + "': " + ec.message());
  std::ofstream log(fs::path(o.out_path) / "log.jsonl", std::ios::trunc);
  if (!log) throw rin::DataError("cannot write epoch log under '" + o.out_path + "'");

  rin::TrainOptions options;
  options.eval_threads = thread_budget();
  options.on_epoch = [&](const rin::EpochRecord& r) { log << rin::epoch_to_json(r).dump() << '\n' << std::flush; };
  const auto result = rin::train(train, dev, schema, config, options);
  rin::save_checkpoint(result.best, o.out_path);
  std::cout << "best epoch " << result.best_epoch << ": " << format_prf(result.best_dev) << '\n';
  return 0;
}

int cmd_eval(const Options& o) {
  const auto ckpt = rin::load_checkpoint(o.ckpt);
  const auto mode = o.mode.empty() ? ckpt.config.eval_mode : rin::parse_eval_mode(o.mode);
  const auto gold = rin::load_corpus(o.data, ckpt.schema, ckpt.config.anchor_policy);

  std::vector<rin::Prediction> preds;
  if (o.pred_path.empty()) {
    preds = rin::predict_corpus(ckpt.params, ckpt.config, ckpt.vocab, gold, thread_budget());
  } else {
    std::ifstream in(o.pred_path);
    if (!in) throw rin::DataError("cannot open '" + o.pred_path + "'");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        preds.push_back(rin::prediction_from_json(nlohmann::json::parse(line), ckpt.schema));
      } catch (const nlohmann::json::exception& e) {
        throw rin::ParseError(o.pred_path + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
  const auto prf = rin::score_corpus(preds, gold, mode);
  if (o.json) {
    nlohmann::ordered_json j{{"mode", rin::to_string(mode)}, {"precision", prf.precision}, {"recall", prf.recall},
                             {"f1", prf.f1},  {"tp", prf.counts.tp},        {"fp", prf.counts.fp},
                             {"fn", prf.counts.fn}};
    std::cout << j.dump() << '\n';
  } else {
    std::cout << format_prf(prf) << '\n';
  }
  return 0;
}

int cmd_predict(const Options& o) {
  const auto ckpt = rin::load_checkpoint(o.ckpt);
  const auto corpus = rin::load_corpus(o.data, ckpt.schema, ckpt.config.anchor_policy);
  const auto preds = rin::predict_corpus(ckpt.params, ckpt.config, ckpt.vocab, corpus, thread_budget());
  std::ofstream out(o.out_path, std::ios::trunc);
  if (!out) throw rin::DataError("cannot write '" + o.out_path + "'");
  for (const auto& p : preds) out << rin::prediction_to_json(p, ckpt.schema).dump() << '\n';
  if (!out) throw rin::DataError("failed writing '" + o.out_path + "'");
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const auto config = build_config(o.config_file, o.overrides);
  auto instance = rin::make_gradcheck_instance(o.scale, config);
  std::function<void(std::vector<std::vector<double>>&)> corrupt;
#ifdef RIN_GRADCHECK_FAULT
  corrupt = [](std::vector<std::vector<double>>& g) { g.back().front() += 0.5; };
#endif
  const auto r = rin::run_gradcheck(instance, 1e-5, corrupt);
  const auto named = instance.params.named();
  const std::string worst = named[r.worst_param].first + "[" + std::to_string(r.worst_component) + "]";
  std::cout << std::setprecision(6) << "max relative error " << r.max_relative_error << " over " << r.components
            << " components (worst " << worst << ")\n";
  if (r.max_relative_error < 1e-4) return 0;
  std::cerr << "gradient check failed at " << worst << ": analytic " << r.worst_analytic << ", numeric "
            << r.worst_numeric << '\n';
  return kExitNumeric;
}

int cmd_sweep(const Options& o) {
  const auto config = build_config(o.config_file, o.overrides);
  const auto schema = schema_for(config);
  const auto train = rin::load_corpus(o.train_path, schema, config.anchor_policy);
  const auto dev = o.dev_path.empty() ? rin::Corpus{} : rin::load_corpus(o.dev_path, schema, config.anchor_policy);
  const auto ks = parse_list<int>(o.k_list, "K");
  const auto seeds = parse_list<std::uint64_t>(o.seed_list, "seed");
  rin::TrainOptions options;
  options.eval_threads = thread_budget();
  const auto rows = rin::sweep_k(train, dev, schema, config, ks, seeds, options);
  std::cout << "K,mean_f1,std_f1,mean_train_f1,std_train_f1\n" << std::fixed << std::setprecision(6);
  for (const auto& r : rows)
    std::cout << r.k_layers << ',' << r.mean_f1 << ',' << r.std_f1 << ',' << r.mean_train_f1 << ',' << r.std_train_f1
              << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint entity and relation extraction with recurrent task interaction"};
  app.require_subcommand(1);
  Options o;

  auto add_overrides = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_file, "Config file (key = value lines)");
    sub->add_option("overrides", o.overrides, "key=value settings applied after the config file");
  };

  auto* train = app.add_subcommand("train", "Train a model and write the best checkpoint");
  add_overrides(train);
  train->add_option("--train", o.train_path, "Training corpus (JSONL)")->required();
  train->add_option("--dev", o.dev_path, "Development corpus (JSONL)");
  train->add_option("--out", o.out_path, "Checkpoint directory")->required();

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a labelled corpus");
  eval->add_option("--ckpt", o.ckpt, "Checkpoint directory")->required();
  eval->add_option("--data", o.data, "Gold corpus (JSONL)")->required();
  eval->add_option("--mode", o.mode, "partial or exact (default: checkpoint eval_mode)");
  eval->add_option("--pred", o.pred_path, "Score this prediction dump instead of running the model");
  eval->add_flag("--json", o.json, "Print machine-readable JSON");

  auto* predict = app.add_subcommand("predict", "Write one prediction per input sentence");
  predict->add_option("--ckpt", o.ckpt, "Checkpoint directory")->required();
  predict->add_option("--data", o.data, "Input corpus (JSONL)")->required();
  predict->add_option("--out", o.out_path, "Prediction dump (JSONL)")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every parameter gradient");
  add_overrides(gradcheck);
  gradcheck->add_option("--scale", o.scale, "tiny or small");

  auto* sweep = app.add_subcommand("sweep-k", "Train across interaction depths and seeds");
  add_overrides(sweep);
  sweep->add_option("--train", o.train_path, "Training corpus (JSONL)")->required();
  sweep->add_option("--dev", o.dev_path, "Development corpus (JSONL)");
  sweep->add_option("--k", o.k_list, "Comma-separated K values")->required();
  sweep->add_option("--seeds", o.seed_list, "Comma-separated seeds")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitConfig;
  }

  try {
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*predict) return cmd_predict(o);
    if (*gradcheck) return cmd_gradcheck(o);
    return cmd_sweep(o);
  } catch (const rin::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const rin::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const rin::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
}
