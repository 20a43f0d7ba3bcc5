// SPDX-License-Identifier: Apache-2.0
//
// Training configuration and its flat text format:
//
//   # comment
//   k_layers = 2
//   lr = 0.001
//
// One `key = value` per line. Unknown keys are rejected. Command-line
// overrides use the same `key=value` syntax and are applied after the file.
#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rin/corpus.hpp"
#include "rin/error.hpp"

namespace rin {

enum class EvalMode { partial, exact };

inline std::string to_string(EvalMode m) { return m == EvalMode::partial ? "partial" : "exact"; }
inline std::string to_string(AnchorPolicy p) { return p == AnchorPolicy::last ? "last" : "first"; }

inline EvalMode parse_eval_mode(const std::string& s) {
  if (s == "partial") return EvalMode::partial;
  if (s == "exact") return EvalMode::exact;
  throw ConfigError("eval mode must be 'partial' or 'exact', got '" + s + "'");
}

inline AnchorPolicy parse_anchor_policy(const std::string& s) {
  if (s == "last") return AnchorPolicy::last;
  if (s == "first") return AnchorPolicy::first;
  throw ConfigError("anchor_policy must be 'last' or 'first', got '" + s + "'");
}

/// Defaults follow the NYT exact-match setting (K=7, d=0.1, lr=1e-3, bs=50,
/// 100 epochs) with 100-d words, 10-d POS tags and a 100-d BiLSTM.
struct TrainConfig {
  int k_layers = 7;
  double dropout = 0.1;
  double lr = 1e-3;
  std::size_t batch_size = 50;
  std::size_t epochs = 100;
  std::uint64_t seed = 1;
  std::size_t d_word = 100;
  std::size_t d_pos = 10;
  std::size_t d_hidden = 100;
  std::size_t d_pair = 100;
  bool use_pos = true;
  bool interact_er = true;
  bool interact_rc = true;
  bool tie_layers = true;
  double threshold = 0.5;
  AnchorPolicy anchor_policy = AnchorPolicy::last;
  EvalMode eval_mode = EvalMode::exact;
  std::size_t min_freq = 1;
  std::string embeddings_path;
  std::string schema_path;
  double positive_weight = 1.0;
  double clip_norm = 0.0;  // 0 disables clipping

  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k = {
        "k_layers", "dropout",     "lr",          "batch_size", "epochs",        "seed",
        "d_word",   "d_pos",       "d_hidden",    "d_pair",     "use_pos",       "interact_er",
        "interact_rc", "tie_layers", "threshold", "anchor_policy", "eval_mode",   "min_freq",
        "embeddings_path", "schema_path", "positive_weight", "clip_norm"};
    return k;
  }

  void set(const std::string& key, const std::string& value) {
    if (key == "k_layers") k_layers = static_cast<int>(parse_int(key, value));
    else if (key == "dropout") dropout = parse_real(key, value);
    else if (key == "lr") lr = parse_real(key, value);
    else if (key == "batch_size") batch_size = parse_count(key, value);
    else if (key == "epochs") epochs = parse_count(key, value);
    else if (key == "seed") seed = static_cast<std::uint64_t>(parse_count(key, value));
    else if (key == "d_word") d_word = parse_count(key, value);
    else if (key == "d_pos") d_pos = parse_count(key, value);
    else if (key == "d_hidden") d_hidden = parse_count(key, value);
    else if (key == "d_pair") d_pair = parse_count(key, value);
    else if (key == "use_pos") use_pos = parse_bool(key, value);
    else if (key == "interact_er") interact_er = parse_bool(key, value);
    else if (key == "interact_rc") interact_rc = parse_bool(key, value);
    else if (key == "tie_layers") tie_layers = parse_bool(key, value);
    else if (key == "threshold") threshold = parse_real(key, value);
    else if (key == "anchor_policy") anchor_policy = parse_anchor_policy(value);
    else if (key == "eval_mode") eval_mode = parse_eval_mode(value);
    else if (key == "min_freq") min_freq = parse_count(key, value);
    else if (key == "embeddings_path") embeddings_path = value;
    else if (key == "schema_path") schema_path = value;
    else if (key == "positive_weight") positive_weight = parse_real(key, value);
    else if (key == "clip_norm") clip_norm = parse_real(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
  }

  std::map<std::string, std::string> to_map() const {
    auto real = [](double v) {
      std::ostringstream o;
      o.precision(17);
      o << v;
      return o.str();
    };
    auto flag = [](bool b) { return std::string(b ? "true" : "false"); };
    return {{"k_layers", std::to_string(k_layers)},
            {"dropout", real(dropout)},
            {"lr", real(lr)},
            {"batch_size", std::to_string(batch_size)},
            {"epochs", std::to_string(epochs)},
            {"seed", std::to_string(seed)},
            {"d_word", std::to_string(d_word)},
            {"d_pos", std::to_string(d_pos)},
            {"d_hidden", std::to_string(d_hidden)},
            {"d_pair", std::to_string(d_pair)},
            {"use_pos", flag(use_pos)},
            {"interact_er", flag(interact_er)},
            {"interact_rc", flag(interact_rc)},
            {"tie_layers", flag(tie_layers)},
            {"threshold", real(threshold)},
            {"anchor_policy", to_string(anchor_policy)},
            {"eval_mode", to_string(eval_mode)},
            {"min_freq", std::to_string(min_freq)},
            {"embeddings_path", embeddings_path},
            {"schema_path", schema_path},
            {"positive_weight", real(positive_weight)},
            {"clip_norm", real(clip_norm)}};
  }

  void validate() const {
    if (k_layers < 0) throw ConfigError("k_layers must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
    if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (d_word == 0 || d_hidden == 0 || d_pair == 0 || (use_pos && d_pos == 0))
      throw ConfigError("embedding and hidden extents must be positive");
    if (d_hidden % 2 != 0) throw ConfigError("d_hidden must be even (two LSTM directions)");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
    if (!(positive_weight > 0.0)) throw ConfigError("positive_weight must be positive");
    if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be >= 0");
  }

  std::size_t d_input() const { return use_pos ? d_word + d_pos : d_word; }

 private:
  static long long parse_int(const std::string& key, const std::string& v) {
    long long out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
    return out;
  }
  static std::size_t parse_count(const std::string& key, const std::string& v) {
    const auto x = parse_int(key, v);
    if (x < 0) throw ConfigError("'" + key + "' must be non-negative");
    return static_cast<std::size_t>(x);
  }
  static double parse_real(const std::string& key, const std::string& v) {
    double out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
    return out;
  }
  static bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("'" + key + "' expects true/false, got '" + v + "'");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace detail

/// Applies one `key=value` assignment.
inline void apply_override(TrainConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  config.set(detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline void parse_config(std::istream& in, TrainConfig& config, const std::string& origin = "<config>") {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    try {
      apply_override(config, line);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  TrainConfig config;
  parse_config(in, config, path);
  return config;
}

inline nlohmann::ordered_json config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  const auto m = c.to_map();
  for (const auto& key : TrainConfig::keys()) j[key] = m.at(key);
  return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_string()) throw ConfigError("config value for '" + it.key() + "' must be a string");
    c.set(it.key(), it.value().get<std::string>());
  }
  return c;
}

}  // namespace rin
