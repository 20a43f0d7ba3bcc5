// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "support.hpp"

using namespace rin;
using testing_support::fixture;
using testing_support::fixture_schema;
using testing_support::random_spans;

namespace {

Corpus parse(const std::string& text, const RelationSchema& schema) {
  std::istringstream in(text);
  return parse_corpus(in, schema, AnchorPolicy::last, "<test>");
}

}  // namespace

TEST(Schema, LoadsLabelsInFileOrder) {
  const auto schema = fixture_schema();
  ASSERT_EQ(schema.size(), 3u);
  EXPECT_EQ(schema.index("born_in"), 0u);
  EXPECT_EQ(schema.index("located_in"), 2u);
  EXPECT_EQ(schema.label(1), "works_for");
  EXPECT_THROW(schema.index("contains"), SchemaError);
}

TEST(LoadCorpus, SingleTokenSentence) {
  const auto corpus = parse(R"({"tokens":["x"],"pos":["NN"],"entities":[],"triples":[]})", fixture_schema());
  ASSERT_EQ(corpus.size(), 1u);
  EXPECT_EQ(corpus[0].size(), 1u);
  EXPECT_TRUE(corpus[0].entities.empty());
  EXPECT_TRUE(corpus[0].triples.empty());
}

TEST(LoadCorpus, UnknownRelationIsSchemaError) {
  const std::string line =
      R"({"tokens":["a","b"],"pos":["X","X"],"entities":[{"start":0,"end":1},{"start":1,"end":2}],)"
      R"("triples":[{"subj":0,"rel":"contains","obj":1}]})";
  EXPECT_THROW(parse(line, fixture_schema()), SchemaError);
}

TEST(LoadCorpus, ErrorsNameTheLine) {
  try {
    parse("\n{\"tokens\":[\"a\"],\"pos\":[\"X\"]}\n{not json\n", fixture_schema());
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("<test>:3"), std::string::npos) << e.what();
  }
}

TEST(LoadCorpus, RejectsInvalidRecords) {
  const auto schema = fixture_schema();
  // POS count mismatch, overlapping spans, anchor outside span, anchor in no entity, self-loop
  EXPECT_THROW(parse(R"({"tokens":["a","b"],"pos":["X"]})", schema), ValidationError);
  EXPECT_THROW(parse(R"({"tokens":["a","b","c"],"pos":["X","X","X"],"entities":[{"start":0,"end":2},{"start":1,"end":3}]})", schema),
               ValidationError);
  EXPECT_THROW(parse(R"({"tokens":["a","b"],"pos":["X","X"],"entities":[{"start":0,"end":1,"anchor":1}]})", schema),
               ValidationError);
  EXPECT_THROW(parse(R"({"tokens":["a","b"],"pos":["X","X"],"entities":[{"start":0,"end":1}],"triples":[{"subj":0,"rel":"born_in","obj":1}]})", schema),
               ValidationError);
  EXPECT_THROW(parse(R"({"tokens":["a","b"],"pos":["X","X"],"entities":[{"start":0,"end":1}],"triples":[{"subj":0,"rel":"born_in","obj":0}]})", schema),
               ValidationError);
  EXPECT_THROW(parse(R"({"tokens":["a"],"pos":["X"],"entities":[{"start":-1,"end":1}]})", schema), ParseError);
}

TEST(LoadCorpus, AnchorDefaultsFromPolicy) {
  const std::string line = R"({"tokens":["a","b","c"],"pos":["X","X","X"],"entities":[{"start":0,"end":3}]})";
  std::istringstream in1(line), in2(line);
  EXPECT_EQ(parse_corpus(in1, fixture_schema(), AnchorPolicy::last)[0].entities[0].anchor, 2u);
  EXPECT_EQ(parse_corpus(in2, fixture_schema(), AnchorPolicy::first)[0].entities[0].anchor, 0u);
}

TEST(LoadCorpus, FixtureRoundTripsThroughSerialization) {
  const auto schema = fixture_schema();
  const auto first = load_corpus(fixture("roundtrip.jsonl"), schema);
  ASSERT_EQ(first.size(), 6u);
  std::ostringstream out;
  write_corpus(out, first, schema);
  std::istringstream in(out.str());
  const auto second = parse_corpus(in, schema);
  EXPECT_EQ(first, second);
  std::ostringstream again;
  write_corpus(again, second, schema);
  EXPECT_EQ(out.str(), again.str());
}

TEST(TrainingFixture, MeetsItsStatedShape) {
  const auto schema = fixture_schema();
  const auto train = load_corpus(fixture("train.jsonl"), schema);
  const auto dev = load_corpus(fixture("dev.jsonl"), schema);
  EXPECT_EQ(train.size(), 32u);
  EXPECT_EQ(dev.size(), 8u);
  EXPECT_LE(build_vocab(train).size() - 2, 60u);
  EXPECT_EQ(schema.size(), 3u);

  std::size_t entities = 0, multi = 0, overlapping = 0, two_relations_one_pair = 0;
  for (const auto& s : train) {
    for (const auto& e : s.entities) {
      ++entities;
      multi += e.length() > 1;
    }
    overlapping += s.triples.size() > 1;
    std::map<std::pair<std::size_t, std::size_t>, int> per_pair;
    for (const auto& t : s.triples)
      if (++per_pair[{t.subj, t.obj}] == 2) ++two_relations_one_pair;
  }
  EXPECT_GE(static_cast<double>(multi) / static_cast<double>(entities), 0.4);
  EXPECT_GE(overlapping, 4u);
  EXPECT_GE(two_relations_one_pair, 1u);
}

TEST(Vocabulary, ReservedEntriesAndFirstOccurrenceOrder) {
  const auto schema = fixture_schema();
  const auto corpus = parse(R"({"tokens":["a","b"],"pos":["X","Y"]})"
                            "\n"
                            R"({"tokens":["a"],"pos":["X"]})",
                            schema);
  const auto v1 = build_vocab(corpus, 1);
  EXPECT_EQ(v1.words(), (std::vector<std::string>{"<pad>", "<unk>", "a", "b"}));
  const auto v2 = build_vocab(corpus, 2);
  EXPECT_EQ(v2.word_id("b"), Vocabulary::kUnk);
  EXPECT_EQ(v2.word_id("a"), 2u);
  EXPECT_EQ(v1.pos_id("unseen"), Vocabulary::kUnk);
}

TEST(Vocabulary, SizeMatchesFrequencyCount) {
  const auto corpus = load_corpus(fixture("train.jsonl"), fixture_schema());
  std::map<std::string, std::size_t> freq;
  for (const auto& s : corpus)
    for (const auto& t : s.tokens) ++freq[t];
  for (std::size_t min_freq : {1u, 2u, 3u, 5u}) {
    std::size_t kept = 0;
    for (const auto& [token, count] : freq) kept += count >= min_freq;
    EXPECT_EQ(build_vocab(corpus, min_freq).size(), kept + 2) << "min_freq " << min_freq;
  }
}

TEST(PretrainedEmbeddings, FixtureRowsEqualFileValues) {
  const Vocabulary vocab({"john", "paris", "lima"}, {});
  Rng rng(1);
  const auto emb = load_pretrained_embeddings(fixture("glove.txt"), vocab, 4, rng);
  EXPECT_EQ(emb.covered, 2u);
  const Tensor& m = emb.matrix;
  const std::vector<double> paris{0.1, -0.2, 0.3, 0.4}, john{0.5, 0.5, -0.5, 0.25};
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(m.at(vocab.word_id("paris"), k), paris[k]);
    EXPECT_EQ(m.at(vocab.word_id("john"), k), john[k]);
    EXPECT_EQ(m.at(Vocabulary::kPad, k), 0.0);
    EXPECT_LE(std::abs(m.at(vocab.word_id("lima"), k)), 0.1);
  }
}

TEST(PretrainedEmbeddings, EmptyFileLeavesRandomRowsAndZeroPad) {
  const Vocabulary vocab({"a", "b"}, {});
  Rng rng(2);
  std::istringstream empty("");
  const auto emb = load_pretrained_embeddings(empty, vocab, 3, rng);
  EXPECT_EQ(emb.covered, 0u);
  for (std::size_t r = 0; r < vocab.size(); ++r)
    for (std::size_t k = 0; k < 3; ++k) {
      if (r == Vocabulary::kPad)
        EXPECT_EQ(emb.matrix.at(r, k), 0.0);
      else
        EXPECT_NE(emb.matrix.at(r, k), 0.0);
    }
}

TEST(PretrainedEmbeddings, FullCoverageLeavesOnlyReservedRowsRandom) {
  const Vocabulary vocab({"a", "b"}, {});
  Rng rng(3);
  std::istringstream file("a 1 2\nb 3 4\n");
  const auto emb = load_pretrained_embeddings(file, vocab, 2, rng);
  EXPECT_EQ(emb.covered, 2u);
  EXPECT_EQ(emb.matrix.at(vocab.word_id("b"), 1), 4.0);
}

TEST(PretrainedEmbeddings, MalformedLinesAreFormatErrors) {
  const Vocabulary vocab({"a"}, {});
  Rng rng(4);
  std::istringstream short_row("a 1\n"), bad_number("a 1 x\n");
  EXPECT_THROW(load_pretrained_embeddings(short_row, vocab, 2, rng), FormatError);
  EXPECT_THROW(load_pretrained_embeddings(bad_number, vocab, 2, rng), FormatError);
}

TEST(Bioes, EncodeExamples) {
  using enum Tag;
  EXPECT_EQ(bioes_encode({make_span(1, 3)}, 4), (std::vector<Tag>{O, B, E, O}));
  EXPECT_EQ(bioes_encode({make_span(2, 3)}, 3), (std::vector<Tag>{O, O, S}));
  EXPECT_EQ(bioes_encode({make_span(0, 4)}, 4), (std::vector<Tag>{B, I, I, E}));
}

TEST(Bioes, DecodeExamplesAndRepair) {
  using enum Tag;
  EXPECT_EQ(bioes_decode({O, B, E, O}), std::vector<EntitySpan>{make_span(1, 3)});
  EXPECT_TRUE(bioes_decode({I, E, O}).empty());
  EXPECT_TRUE(bioes_decode({B, I, O}).empty());
  EXPECT_EQ(bioes_decode({B, B, E}), std::vector<EntitySpan>{make_span(1, 3)});
  EXPECT_EQ(bioes_decode({B, S, E}), std::vector<EntitySpan>{make_span(1, 2)});
}

TEST(Bioes, RoundTripOnRandomSpans) {
  Rng rng(5);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng.below(15);
    const auto spans = random_spans(n, rng, 0.4, 4);
    EXPECT_EQ(bioes_decode(bioes_encode(spans, n)), spans);
  }
}

TEST(Bioes, RandomTagStringsDecodeToConsistentSpans) {
  Rng rng(6);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng.below(12);
    std::vector<Tag> tags(n);
    for (auto& t : tags) t = static_cast<Tag>(rng.below(kNumTags));
    const auto spans = bioes_decode(tags);
    ASSERT_NO_THROW(check_spans(spans, n));
    // Every decoded span's tags appear verbatim in the input.
    const auto re = bioes_encode(spans, n);
    for (const auto& s : spans)
      for (std::size_t i = s.start; i < s.end; ++i) EXPECT_EQ(re[i], tags[i]);
  }
}

TEST(Batching, SizesAndOrder) {
  const auto corpus = load_corpus(fixture("roundtrip.jsonl"), fixture_schema());
  const Corpus five(corpus.begin(), corpus.begin() + 5);
  const auto vocab = build_vocab(five);
  Rng rng(7);
  const auto batches = make_batches(five, vocab, 2, rng, false);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].size(), 2u);
  EXPECT_EQ(batches[1].size(), 2u);
  EXPECT_EQ(batches[2].size(), 1u);
  std::vector<std::size_t> order;
  for (const auto& b : batches) order.insert(order.end(), b.sentence_index.begin(), b.sentence_index.end());
  EXPECT_EQ(order, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Batching, PaddingAndMask) {
  const auto corpus = load_corpus(fixture("roundtrip.jsonl"), fixture_schema());
  const auto vocab = build_vocab(corpus);
  Rng rng(8);
  const auto batch = make_batches(corpus, vocab, 6, rng, false).front();
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const std::size_t n = batch.lengths[r];
    ASSERT_EQ(batch.token_ids[r].size(), batch.max_length());
    for (std::size_t i = 0; i < batch.max_length(); ++i) {
      EXPECT_EQ(static_cast<bool>(batch.mask[r][i]), i < n);
      if (i >= n) EXPECT_EQ(batch.token_ids[r][i], Vocabulary::kPad);
    }
  }
}

TEST(Batching, ShuffledBatchesKeepEveryGoldTarget) {
  const auto corpus = load_corpus(fixture("train.jsonl"), fixture_schema());
  const auto vocab = build_vocab(corpus);
  Rng rng(9);
  std::set<std::pair<std::size_t, PairTarget>> expected, seen;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    for (const auto& t : pair_targets(corpus[i])) expected.insert({i, t});
  std::vector<std::size_t> order;
  for (const auto& b : make_batches(corpus, vocab, 5, rng, true))
    for (std::size_t r = 0; r < b.size(); ++r) {
      order.push_back(b.sentence_index[r]);
      for (const auto& t : b.gold_pair_targets[r]) seen.insert({b.sentence_index[r], t});
    }
  EXPECT_EQ(seen, expected);
  std::sort(order.begin(), order.end());
  for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ(order[i], i);
}

TEST(Config, DefaultsMirrorPublishedSettings) {
  const TrainConfig c;
  EXPECT_EQ(c.k_layers, 7);
  EXPECT_EQ(c.dropout, 0.1);
  EXPECT_EQ(c.lr, 1e-3);
  EXPECT_EQ(c.batch_size, 50u);
  EXPECT_EQ(c.epochs, 100u);
  EXPECT_EQ(c.threshold, 0.5);
}

TEST(Config, FileAndOverridePrecedence) {
  std::istringstream file("# comment\nk_layers = 4\nlr=0.0005  # trailing\n\n");
  TrainConfig c;
  parse_config(file, c);
  EXPECT_EQ(c.k_layers, 4);
  EXPECT_EQ(c.lr, 5e-4);
  apply_override(c, "k_layers=0");
  EXPECT_EQ(c.k_layers, 0);
}

TEST(Config, RejectsBadInput) {
  TrainConfig c;
  EXPECT_THROW(apply_override(c, "no_such_key=1"), ConfigError);
  EXPECT_THROW(apply_override(c, "k_layers"), ConfigError);
  EXPECT_THROW(apply_override(c, "k_layers=two"), ConfigError);
  EXPECT_THROW(apply_override(c, "eval_mode=fuzzy"), ConfigError);
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  std::istringstream bad("k_layers = 2\nbogus = 1\n");
  try {
    parse_config(bad, c, "f.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("f.cfg:2"), std::string::npos);
  }
}

TEST(Config, JsonRoundTrip) {
  TrainConfig c;
  c.k_layers = 3;
  c.lr = 1.0 / 3.0;
  c.anchor_policy = AnchorPolicy::first;
  const auto back = config_from_json(nlohmann::json::parse(config_to_json(c).dump()));
  EXPECT_EQ(back.to_map(), c.to_map());
  EXPECT_EQ(back.lr, c.lr);
}
