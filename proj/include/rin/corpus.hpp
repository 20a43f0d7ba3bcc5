// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <charconv>
#include <compare>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "rin/error.hpp"
#include "rin/rng.hpp"
#include "rin/tensor.hpp"

namespace rin {

// ---------------------------------------------------------------------------
// Relation schema

class RelationSchema {
 public:
  RelationSchema() = default;
  explicit RelationSchema(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.empty()) throw SchemaError("relation schema is empty");
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i].empty()) throw SchemaError("relation schema contains an empty label");
      if (!index_.emplace(labels_[i], i).second) throw SchemaError("duplicate relation label '" + labels_[i] + "'");
    }
  }

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& label(std::size_t i) const { return labels_.at(i); }

  std::size_t index(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) throw SchemaError("unknown relation label '" + label + "'");
    return it->second;
  }
  bool contains(const std::string& label) const { return index_.contains(label); }

  bool operator==(const RelationSchema& other) const { return labels_ == other.labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// One label per line; blank lines and surrounding whitespace are ignored.
inline RelationSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema file '" + path + "'");
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    labels.push_back(line.substr(b, e - b + 1));
  }
  return RelationSchema(std::move(labels));
}

// ---------------------------------------------------------------------------
// Sentences

enum class AnchorPolicy { last, first };

struct EntitySpan {
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // exclusive
  std::size_t anchor = 0;

  bool contains(std::size_t i) const { return start <= i && i < end; }
  std::size_t length() const { return end - start; }
  bool same_extent(const EntitySpan& o) const { return start == o.start && end == o.end; }
  auto operator<=>(const EntitySpan&) const = default;
};

inline EntitySpan make_span(std::size_t start, std::size_t end, AnchorPolicy policy = AnchorPolicy::last) {
  return {start, end, policy == AnchorPolicy::last ? end - 1 : start};
}

struct GoldTriple {
  std::size_t subj = 0;
  std::size_t rel = 0;  // index into the schema
  std::size_t obj = 0;
  auto operator<=>(const GoldTriple&) const = default;
};

struct Sentence {
  std::vector<std::string> tokens;
  std::vector<std::string> pos;
  std::vector<EntitySpan> entities;
  std::vector<GoldTriple> triples;

  std::size_t size() const { return tokens.size(); }
  bool operator==(const Sentence&) const = default;
};

using Corpus = std::vector<Sentence>;

/// Gold span covering token i, if any.
inline const EntitySpan* span_containing(const std::vector<EntitySpan>& spans, std::size_t i) {
  for (const auto& s : spans)
    if (s.contains(i)) return &s;
  return nullptr;
}

inline void check_spans(const std::vector<EntitySpan>& spans, std::size_t n) {
  std::vector<EntitySpan> sorted = spans;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    const auto& s = sorted[k];
    if (!(s.start < s.end && s.end <= n))
      throw ValidationError("span [" + std::to_string(s.start) + "," + std::to_string(s.end) + ") outside sentence of length " +
                            std::to_string(n));
    if (k > 0 && sorted[k - 1].end > s.start)
      throw ValidationError("overlapping spans [" + std::to_string(sorted[k - 1].start) + "," +
                            std::to_string(sorted[k - 1].end) + ") and [" + std::to_string(s.start) + "," +
                            std::to_string(s.end) + ")");
  }
}

inline void validate(const Sentence& s, const RelationSchema& schema) {
  const std::size_t n = s.size();
  if (n == 0) throw ValidationError("sentence has no tokens");
  if (s.pos.size() != n)
    throw ValidationError("sentence has " + std::to_string(n) + " tokens but " + std::to_string(s.pos.size()) + " POS tags");
  check_spans(s.entities, n);
  for (const auto& e : s.entities)
    if (!e.contains(e.anchor))
      throw ValidationError("anchor " + std::to_string(e.anchor) + " outside its span [" + std::to_string(e.start) + "," +
                            std::to_string(e.end) + ")");
  for (const auto& t : s.triples) {
    if (t.rel >= schema.size()) throw SchemaError("relation index " + std::to_string(t.rel) + " outside schema");
    if (t.subj == t.obj) throw ValidationError("triple links token " + std::to_string(t.subj) + " to itself");
    if (t.subj >= n || t.obj >= n) throw ValidationError("triple anchor outside sentence");
    if (!span_containing(s.entities, t.subj) || !span_containing(s.entities, t.obj))
      throw ValidationError("triple anchor " + std::to_string(span_containing(s.entities, t.subj) ? t.obj : t.subj) +
                            " lies in no entity span");
  }
}

namespace detail {

inline std::size_t json_index(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ParseError(std::string("missing field '") + key + "'");
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) throw ParseError(std::string("field '") + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

inline std::vector<std::string> json_strings(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_array()) throw ParseError(std::string("field '") + key + "' must be an array");
  std::vector<std::string> out;
  for (const auto& v : j.at(key)) {
    if (!v.is_string()) throw ParseError(std::string("field '") + key + "' must contain strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

inline bool blank(std::string_view line) { return line.find_first_not_of(" \t\r\n") == std::string_view::npos; }

}  // namespace detail

/// Parses and validates one corpus record. Entities without an "anchor"
/// field get one from `policy`.
inline Sentence parse_sentence(const nlohmann::json& j, const RelationSchema& schema,
                               AnchorPolicy policy = AnchorPolicy::last) {
  if (!j.is_object()) throw ParseError("record is not a JSON object");
  Sentence s;
  s.tokens = detail::json_strings(j, "tokens");
  s.pos = detail::json_strings(j, "pos");
  if (j.contains("entities")) {
    if (!j.at("entities").is_array()) throw ParseError("field 'entities' must be an array");
    for (const auto& e : j.at("entities")) {
      EntitySpan span = make_span(detail::json_index(e, "start"), detail::json_index(e, "end"), policy);
      if (span.end <= span.start) throw ValidationError("empty or reversed span");
      if (e.contains("anchor")) span.anchor = detail::json_index(e, "anchor");
      s.entities.push_back(span);
    }
  }
  if (j.contains("triples")) {
    if (!j.at("triples").is_array()) throw ParseError("field 'triples' must be an array");
    for (const auto& t : j.at("triples")) {
      if (!t.contains("rel") || !t.at("rel").is_string()) throw ParseError("triple needs a string 'rel'");
      s.triples.push_back({detail::json_index(t, "subj"), schema.index(t.at("rel").get<std::string>()),
                           detail::json_index(t, "obj")});
    }
  }
  validate(s, schema);
  return s;
}

inline nlohmann::ordered_json sentence_to_json(const Sentence& s, const RelationSchema& schema) {
  nlohmann::ordered_json j;
  j["tokens"] = s.tokens;
  j["pos"] = s.pos;
  j["entities"] = nlohmann::ordered_json::array();
  for (const auto& e : s.entities) j["entities"].push_back({{"start", e.start}, {"end", e.end}, {"anchor", e.anchor}});
  j["triples"] = nlohmann::ordered_json::array();
  for (const auto& t : s.triples)
    j["triples"].push_back({{"subj", t.subj}, {"rel", schema.label(t.rel)}, {"obj", t.obj}});
  return j;
}

inline Corpus parse_corpus(std::istream& in, const RelationSchema& schema, AnchorPolicy policy = AnchorPolicy::last,
                           const std::string& origin = "<stream>") {
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line)) continue;
    const auto where = origin + ":" + std::to_string(lineno) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + "malformed JSON: " + e.what());
    }
    try {
      corpus.push_back(parse_sentence(j, schema, policy));
    } catch (const SchemaError& e) {
      throw SchemaError(where + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    } catch (const ParseError& e) {
      throw ParseError(where + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + e.what());
    }
  }
  return corpus;
}

inline Corpus load_corpus(const std::string& path, const RelationSchema& schema, AnchorPolicy policy = AnchorPolicy::last) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file '" + path + "'");
  return parse_corpus(in, schema, policy, path);
}

inline void write_corpus(std::ostream& out, const Corpus& corpus, const RelationSchema& schema) {
  for (const auto& s : corpus) out << sentence_to_json(s, schema).dump() << '\n';
}

inline void save_corpus(const std::string& path, const Corpus& corpus, const RelationSchema& schema) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write corpus file '" + path + "'");
  write_corpus(out, corpus, schema);
}

// ---------------------------------------------------------------------------
// Vocabulary

/// Token and POS index maps. Index 0 is <pad> and index 1 is <unk> in both.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kUnkToken = "<unk>";

  Vocabulary() : Vocabulary({}, {}) {}

  /// Lists exclude the reserved entries.
  Vocabulary(const std::vector<std::string>& tokens, const std::vector<std::string>& pos_tags) {
    words_ = {kPadToken, kUnkToken};
    tags_ = {kPadToken, kUnkToken};
    for (const auto& t : tokens) add(words_, word_index_, t);
    for (const auto& t : pos_tags) add(tags_, tag_index_, t);
  }

  std::size_t size() const { return words_.size(); }
  std::size_t pos_size() const { return tags_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  const std::vector<std::string>& pos_tags() const { return tags_; }

  std::size_t word_id(const std::string& token) const {
    auto it = word_index_.find(token);
    return it == word_index_.end() ? kUnk : it->second;
  }
  std::size_t pos_id(const std::string& tag) const {
    auto it = tag_index_.find(tag);
    return it == tag_index_.end() ? kUnk : it->second;
  }
  bool has_word(const std::string& token) const { return word_index_.contains(token); }

  std::vector<std::size_t> encode_words(const std::vector<std::string>& tokens) const {
    std::vector<std::size_t> ids;
    for (const auto& t : tokens) ids.push_back(word_id(t));
    return ids;
  }
  std::vector<std::size_t> encode_pos(const std::vector<std::string>& tags) const {
    std::vector<std::size_t> ids;
    for (const auto& t : tags) ids.push_back(pos_id(t));
    return ids;
  }

  bool operator==(const Vocabulary& o) const { return words_ == o.words_ && tags_ == o.tags_; }

 private:
  static void add(std::vector<std::string>& list, std::unordered_map<std::string, std::size_t>& index,
                  const std::string& item) {
    if (item == kPadToken || item == kUnkToken) return;
    if (index.emplace(item, list.size()).second) list.push_back(item);
  }

  std::vector<std::string> words_;
  std::vector<std::string> tags_;
  std::unordered_map<std::string, std::size_t> word_index_;
  std::unordered_map<std::string, std::size_t> tag_index_;
};

/// Tokens seen at least min_freq times, in first-occurrence order. Every POS
/// tag is indexed.
inline Vocabulary build_vocab(const Corpus& corpus, std::size_t min_freq = 1) {
  if (corpus.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::unordered_map<std::string, std::size_t> freq;
  std::vector<std::string> order, tags;
  std::set<std::string> seen_tags;
  for (const auto& s : corpus) {
    for (const auto& t : s.tokens)
      if (freq[t]++ == 0) order.push_back(t);
    for (const auto& p : s.pos)
      if (seen_tags.insert(p).second) tags.push_back(p);
  }
  std::vector<std::string> kept;
  for (const auto& t : order)
    if (freq[t] >= min_freq) kept.push_back(t);
  return Vocabulary(kept, tags);
}

// ---------------------------------------------------------------------------
// Pretrained embeddings

struct PretrainedEmbeddings {
  Tensor matrix;            // [|V| x dim]
  std::size_t covered = 0;  // vocabulary rows taken from the file
};

/// Reads a GloVe text file. Rows of tokens found in the file are copied;
/// every other row is drawn from U(−0.1, 0.1) and <pad> is zero.
inline PretrainedEmbeddings load_pretrained_embeddings(std::istream& in, const Vocabulary& vocab, std::size_t dim,
                                                       Rng& rng, const std::string& origin = "<stream>") {
  if (dim == 0) throw ConfigError("embedding dimension must be positive");
  std::vector<double> rows(vocab.size() * dim);
  for (auto& v : rows) v = rng.uniform(-0.1, 0.1);
  std::fill_n(rows.begin(), dim, 0.0);

  std::vector<bool> filled(vocab.size(), false);
  std::size_t covered = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::blank(line)) continue;
    const auto where = origin + ":" + std::to_string(lineno) + ": ";
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (!rest.empty()) {
      const auto cut = rest.find(' ');
      if (cut != 0) fields.push_back(rest.substr(0, cut));
      if (cut == std::string_view::npos) break;
      rest.remove_prefix(cut + 1);
    }
    if (fields.size() != dim + 1)
      throw FormatError(where + "expected token and " + std::to_string(dim) + " values, got " +
                        std::to_string(fields.size() - 1));
    std::vector<double> vec(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      const auto f = fields[k + 1];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), vec[k]);
      if (ec != std::errc() || ptr != f.data() + f.size())
        throw FormatError(where + "bad number '" + std::string(f) + "'");
    }
    const std::string token(fields[0]);
    if (!vocab.has_word(token)) continue;
    const std::size_t id = vocab.word_id(token);
    std::copy(vec.begin(), vec.end(), rows.begin() + static_cast<std::ptrdiff_t>(id * dim));
    if (!filled[id]) {
      filled[id] = true;
      ++covered;
    }
  }
  return {Tensor::from({vocab.size(), dim}, std::move(rows)), covered};
}

inline PretrainedEmbeddings load_pretrained_embeddings(const std::string& path, const Vocabulary& vocab, std::size_t dim,
                                                       Rng& rng) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file '" + path + "'");
  return load_pretrained_embeddings(in, vocab, dim, rng, path);
}

// ---------------------------------------------------------------------------
// BIOES

/// Column order of the entity head; argmax ties resolve to the lower index.
enum class Tag : std::size_t { B = 0, I = 1, O = 2, E = 3, S = 4 };
inline constexpr std::size_t kNumTags = 5;

inline char tag_char(Tag t) { return "BIOES"[static_cast<std::size_t>(t)]; }

inline std::vector<Tag> bioes_encode(const std::vector<EntitySpan>& spans, std::size_t n) {
  check_spans(spans, n);
  std::vector<Tag> tags(n, Tag::O);
  for (const auto& s : spans) {
    if (s.length() == 1) {
      tags[s.start] = Tag::S;
      continue;
    }
    tags[s.start] = Tag::B;
    for (std::size_t i = s.start + 1; i + 1 < s.end; ++i) tags[i] = Tag::I;
    tags[s.end - 1] = Tag::E;
  }
  return tags;
}

/// Total decoder. S gives a singleton, B I* E gives a span; a B not closed by
/// an E before the next B, S, O or the end is dropped, as are I/E without an
/// open B.
inline std::vector<EntitySpan> bioes_decode(const std::vector<Tag>& tags, AnchorPolicy policy = AnchorPolicy::last) {
  std::vector<EntitySpan> spans;
  std::size_t i = 0;
  while (i < tags.size()) {
    if (tags[i] == Tag::S) {
      spans.push_back(make_span(i, i + 1, policy));
      ++i;
    } else if (tags[i] == Tag::B) {
      std::size_t j = i + 1;
      while (j < tags.size() && tags[j] == Tag::I) ++j;
      if (j < tags.size() && tags[j] == Tag::E) {
        spans.push_back(make_span(i, j + 1, policy));
        i = j + 1;
      } else {
        i = j;
      }
    } else {
      ++i;
    }
  }
  return spans;
}

// ---------------------------------------------------------------------------
// Batching

struct PairTarget {
  std::size_t subj = 0;
  std::size_t obj = 0;
  std::size_t rel = 0;
  auto operator<=>(const PairTarget&) const = default;
};

inline std::set<PairTarget> pair_targets(const Sentence& s) {
  std::set<PairTarget> out;
  for (const auto& t : s.triples) out.insert({t.subj, t.obj, t.rel});
  return out;
}

struct Batch {
  std::vector<std::size_t> sentence_index;  // position in the source corpus
  std::vector<std::size_t> lengths;
  std::vector<std::vector<std::size_t>> token_ids;  // bs x n_max, 0 = <pad>
  std::vector<std::vector<std::size_t>> pos_ids;
  std::vector<std::vector<bool>> mask;
  std::vector<std::vector<std::size_t>> gold_tags;
  std::vector<std::set<PairTarget>> gold_pair_targets;

  std::size_t size() const { return sentence_index.size(); }
  std::size_t max_length() const { return token_ids.empty() ? 0 : token_ids.front().size(); }
};

inline std::vector<Batch> make_batches(const Corpus& corpus, const Vocabulary& vocab, std::size_t bs, Rng& rng,
                                       bool shuffle) {
  if (bs == 0) throw ConfigError("batch size must be at least 1");
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle) rng.shuffle(std::span<std::size_t>(order));

  std::vector<Batch> batches;
  for (std::size_t begin = 0; begin < order.size(); begin += bs) {
    const std::size_t end = std::min(order.size(), begin + bs);
    std::size_t n_max = 0;
    for (std::size_t k = begin; k < end; ++k) n_max = std::max(n_max, corpus[order[k]].size());
    Batch b;
    for (std::size_t k = begin; k < end; ++k) {
      const Sentence& s = corpus[order[k]];
      const std::size_t n = s.size();
      b.sentence_index.push_back(order[k]);
      b.lengths.push_back(n);
      auto words = vocab.encode_words(s.tokens);
      auto tags = vocab.encode_pos(s.pos);
      words.resize(n_max, Vocabulary::kPad);
      tags.resize(n_max, Vocabulary::kPad);
      b.token_ids.push_back(std::move(words));
      b.pos_ids.push_back(std::move(tags));
      std::vector<bool> mask(n_max, false);
      std::fill_n(mask.begin(), n, true);
      b.mask.push_back(std::move(mask));
      std::vector<std::size_t> gold(n_max, 0);
      const auto bioes = bioes_encode(s.entities, n);
      for (std::size_t i = 0; i < n; ++i) gold[i] = static_cast<std::size_t>(bioes[i]);
      b.gold_tags.push_back(std::move(gold));
      b.gold_pair_targets.push_back(pair_targets(s));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace rin
