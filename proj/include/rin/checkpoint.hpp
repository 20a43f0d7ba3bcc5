// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint directory layout:
//
//   manifest.json  {"format_version", "config", "vocab", "schema", "tensors"}
//   params.bin     little-endian float64 values of every tensor, concatenated
//                  in manifest order; "offset" is in bytes
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rin/config.hpp"
#include "rin/corpus.hpp"
#include "rin/error.hpp"
#include "rin/model.hpp"

namespace rin {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  Vocabulary vocab;
  RelationSchema schema;
  ModelParams params;
};

namespace detail {

inline std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t out = 0;
  for (int b = 0; b < 8; ++b) out |= ((v >> (8 * b)) & 0xFFu) << (8 * (7 - b));
  return out;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create checkpoint directory '" + dir.string() + "': " + ec.message());

  nlohmann::ordered_json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["config"] = config_to_json(ckpt.config);
  manifest["vocab"] = {{"tokens", ckpt.vocab.words()}, {"pos", ckpt.vocab.pos_tags()}};
  manifest["schema"] = ckpt.schema.labels();
  manifest["tensors"] = nlohmann::ordered_json::array();

  std::ofstream bin(dir / "params.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw DataError("cannot write '" + (dir / "params.bin").string() + "'");
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.params.named()) {
    manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    for (double v : t.values()) {
      const std::uint64_t le = detail::to_little_endian(std::bit_cast<std::uint64_t>(v));
      bin.write(reinterpret_cast<const char*>(&le), sizeof le);
    }
    offset += t.size() * sizeof(double);
  }
  if (!bin) throw DataError("failed writing checkpoint payload");

  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw DataError("cannot write '" + (dir / "manifest.json").string() + "'");
  out << manifest.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("cannot open '" + (dir / "manifest.json").string() + "'");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt checkpoint manifest: ") + e.what());
  }

  Checkpoint ckpt;
  std::vector<nlohmann::json> table;
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointVersion)
      throw FormatError("incompatible checkpoint format version " + std::to_string(version) + " (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    ckpt.config = config_from_json(manifest.at("config"));
    ckpt.config.validate();
    ckpt.vocab = Vocabulary(manifest.at("vocab").at("tokens").get<std::vector<std::string>>(),
                            manifest.at("vocab").at("pos").get<std::vector<std::string>>());
    ckpt.schema = RelationSchema(manifest.at("schema").get<std::vector<std::string>>());
    table = manifest.at("tensors").get<std::vector<nlohmann::json>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt checkpoint manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config rejected: ") + e.what());
  }

  Rng scratch(0);
  ckpt.params = init_params(ckpt.config, ckpt.vocab, ckpt.schema.size(), scratch);
  auto named = ckpt.params.named();
  if (named.size() != table.size())
    throw FormatError("checkpoint lists " + std::to_string(table.size()) + " tensors, model needs " + std::to_string(named.size()));

  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw DataError("cannot open '" + (dir / "params.bin").string() + "'");
  std::vector<char> payload((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  std::uint64_t expected_offset = 0;
  for (std::size_t k = 0; k < named.size(); ++k) {
    auto& [name, tensor] = named[k];
    const auto& entry = table[k];
    std::uint64_t offset = 0;
    Shape shape;
    try {
      if (entry.at("name").get<std::string>() != name)
        throw FormatError("checkpoint tensor " + std::to_string(k) + " is '" + entry.at("name").get<std::string>() +
                          "', expected '" + name + "'");
      shape = entry.at("shape").get<Shape>();
      offset = entry.at("offset").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("corrupt tensor table: ") + e.what());
    }
    if (shape != tensor.shape())
      throw FormatError("tensor '" + name + "' has shape " + to_string(shape) + ", model needs " + to_string(tensor.shape()));
    if (offset != expected_offset) throw FormatError("tensor '" + name + "' offset is not contiguous with its predecessor");
    const std::uint64_t bytes = tensor.size() * sizeof(double);
    if (offset + bytes > payload.size()) throw FormatError("params.bin is truncated at tensor '" + name + "'");
    auto values = tensor.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::uint64_t le = 0;
      std::memcpy(&le, payload.data() + offset + i * sizeof(double), sizeof le);
      values[i] = std::bit_cast<double>(detail::to_little_endian(le));
    }
    expected_offset = offset + bytes;
  }
  if (expected_offset != payload.size())
    throw FormatError("params.bin has " + std::to_string(payload.size() - expected_offset) + " trailing bytes");
  return ckpt;
}

}  // namespace rin
