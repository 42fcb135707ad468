#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "edg/corpus.hpp"
#include "edg/error.hpp"
#include "support.hpp"

using namespace edg;

TEST_CASE("parse_conll: single sentence") {
  std::istringstream in("EU B-ORG\nrejects O\n\n");
  const auto parsed = parse_conll(in);
  REQUIRE(parsed.dataset.sentences.size() == 1);
  CHECK(parsed.dataset.sentences[0].size() == 2);
  CHECK(parsed.dataset.label_inventory == std::set<std::string>{"ORG"});
  CHECK(parsed.dataset.sentences[0].tokens[0].surface == "EU");
  CHECK(*parsed.dataset.sentences[0].tokens[0].gold == "B-ORG");
  CHECK(parsed.bio_warnings == 0);
}

TEST_CASE("parse_conll: empty input") {
  std::istringstream in("");
  const auto parsed = parse_conll(in);
  CHECK(parsed.dataset.sentences.empty());
  CHECK(parsed.bio_warnings == 0);
}

TEST_CASE("parse_conll: stray inside tag is kept and counted") {
  std::istringstream in("a O\nb B-PER\n\nc O\nd I-LOC\n");
  const auto parsed = parse_conll(in);
  REQUIRE(parsed.dataset.sentences.size() == 2);
  CHECK(parsed.bio_warnings == 1);
  CHECK(*parsed.dataset.sentences[1].tokens[1].gold == "I-LOC");
}

TEST_CASE("parse_conll: documents and middle columns") {
  std::istringstream in(
      "-DOCSTART- -X- O\n\nA NNP B-PER\nb VB O\n\nc NN O\n\n-DOCSTART- -X- O\n\nd NN O\n");
  const auto d = parse_conll(in).dataset;
  REQUIRE(d.sentences.size() == 3);
  CHECK(d.sentences[0].doc_id == d.sentences[1].doc_id);
  CHECK(d.sentences[2].doc_id != d.sentences[0].doc_id);
  CHECK(*d.sentences[0].tokens[0].gold == "B-PER");
  for (std::size_t i = 0; i < d.sentences.size(); ++i) CHECK(d.sentences[i].id == i);
}

TEST_CASE("parse_conll: unlabeled pool") {
  std::istringstream in("x\ny\n\nz\n");
  const auto d = parse_conll(in, DatasetRole::kPool).dataset;
  REQUIRE(d.sentences.size() == 2);
  CHECK_FALSE(d.labeled());
  CHECK_FALSE(d.sentences[0].tokens[0].gold.has_value());
  CHECK(d.token_count() == 3);
}

TEST_CASE("parse_conll: invalid UTF-8 reports the line") {
  std::istringstream in("ok O\nbad\xC3\x28 O\n");
  try {
    parse_conll(in);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("serialize_conll round trip") {
  const std::string text =
      "-DOCSTART- O\n\nEU B-ORG\nrejects O\nGerman B-MISC\n\nPeter B-PER\nBlackburn I-PER\n\n"
      "-DOCSTART- O\n\nBRUSSELS B-LOC\n\n";
  std::istringstream in(text);
  const auto first = parse_conll(in).dataset;
  const std::string out = serialize_conll(first);
  std::istringstream in2(out);
  const auto second = parse_conll(in2).dataset;
  CHECK(serialize_conll(second) == out);
  REQUIRE(second.sentences.size() == first.sentences.size());
  for (std::size_t i = 0; i < first.sentences.size(); ++i) {
    CHECK(first.sentences[i].doc_id == second.sentences[i].doc_id);
    REQUIRE(first.sentences[i].size() == second.sentences[i].size());
    for (std::size_t l = 0; l < first.sentences[i].size(); ++l) {
      CHECK(first.sentences[i].tokens[l].surface == second.sentences[i].tokens[l].surface);
      CHECK(first.sentences[i].tokens[l].gold == second.sentences[i].tokens[l].gold);
    }
  }
}

TEST_CASE("serialize_conll round trip on random datasets") {
  std::mt19937_64 rng(7);
  const std::vector<std::string> tags{"O", "B-PER", "I-PER", "B-LOC", "I-LOC"};
  for (int trial = 0; trial < 50; ++trial) {
    std::string text;
    const int n = 1 + static_cast<int>(rng() % 6);
    for (int s = 0; s < n; ++s) {
      if (rng() % 4 == 0) text += "-DOCSTART- O\n\n";
      const int len = 1 + static_cast<int>(rng() % 8);
      for (int l = 0; l < len; ++l)
        text += "w" + std::to_string(rng() % 30) + " " + tags[rng() % tags.size()] + "\n";
      text += "\n";
    }
    const auto d = testing::conll(text);
    const auto once = serialize_conll(d);
    CHECK(serialize_conll(testing::conll(once)) == once);
  }
}

TEST_CASE("strip_labels") {
  const auto d = testing::conll("a B-PER\nb O\n");
  const auto s = strip_labels(d);
  CHECK(d.labeled());
  CHECK_FALSE(s.labeled());
  CHECK(s.sentences[0].tokens[1].surface == "b");
}

TEST_CASE("split_bio") {
  CHECK(split_bio("O")->prefix == 'O');
  CHECK(split_bio("B-PER")->type == "PER");
  CHECK(split_bio("I-MISC")->prefix == 'I');
  CHECK_FALSE(split_bio("X-PER"));
  CHECK_FALSE(split_bio("B-"));
  CHECK_FALSE(split_bio(""));
}

TEST_CASE("load_embeddings: normalization, zero vectors, OOV") {
  std::istringstream in("a 3 4\nb 0 0\nc 1 0\n");
  const auto t = load_embeddings(in, true);
  REQUIRE(t.dim() == 2);
  CHECK(t.lookup("a")[0] == doctest::Approx(0.6));
  CHECK(t.lookup("a")[1] == doctest::Approx(0.8));
  const auto oov = t.oov_vector();
  CHECK(t.lookup("b")[0] == doctest::Approx(oov[0]));
  CHECK(t.lookup("b")[1] == doctest::Approx(oov[1]));
  CHECK(t.lookup("zzz")[0] == doctest::Approx(oov[0]));
  CHECK(std::hypot(oov[0], oov[1]) == doctest::Approx(1.0));
}

TEST_CASE("load_embeddings: dimension mismatch and duplicates") {
  std::istringstream bad("a 1 2\nb 1 2 3\n");
  try {
    load_embeddings(bad, true);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.line() == 2);
  }
  std::istringstream dup("a 1 0\na 0 1\n");
  const auto t = load_embeddings(dup, false);
  CHECK(t.duplicate_warnings == 1);
  CHECK(t.lookup("a")[1] == 1.0);
}

TEST_CASE("unit vectors: squared distance is twice the cosine distance") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  std::string text;
  for (int i = 0; i < 200; ++i) {
    text += "w" + std::to_string(i);
    for (int d = 0; d < 8; ++d) text += " " + std::to_string(normal(rng));
    text += "\n";
  }
  std::istringstream in(text);
  const auto t = load_embeddings(in, true);
  for (int i = 0; i + 1 < 200; ++i) {
    const auto x = t.lookup("w" + std::to_string(i));
    const auto y = t.lookup("w" + std::to_string(i + 1));
    double d2 = 0, cos = 0;
    for (int d = 0; d < 8; ++d) {
      d2 += (x[d] - y[d]) * (x[d] - y[d]);
      cos += x[d] * y[d];
    }
    CHECK(std::abs(d2 - 2 * (1 - cos)) < 1e-9);
  }
}

TEST_CASE("sentence_embedding") {
  std::istringstream in("p 0.6 0.8\nq 1 0\nv 1 1\nnv -1 -1\n");
  const auto t = load_embeddings(in, true);
  const auto d = testing::conll("p O\nq O\n\np O\n\nv O\nnv O\n");
  auto e = sentence_embedding(d.sentences[0], t);
  CHECK(e[0] == doctest::Approx(0.8));
  CHECK(e[1] == doctest::Approx(0.4));
  e = sentence_embedding(d.sentences[1], t);
  CHECK(e[0] == doctest::Approx(0.6));
  e = sentence_embedding(d.sentences[2], t);
  CHECK(std::abs(e[0]) < 1e-15);
  CHECK(std::abs(e[1]) < 1e-15);
}

TEST_CASE("one_hot_embeddings") {
  const auto t = one_hot_embeddings({"a", "b", "c"});
  CHECK(t.dim() == 3);
  CHECK(t.lookup("b")[1] == 1.0);
  CHECK(t.lookup("b")[0] == 0.0);
}

TEST_CASE("shape_class") {
  CHECK(shape_class("NATO") == ShapeClass::kAllUpper);
  CHECK(shape_class("paris") == ShapeClass::kAllLower);
  CHECK(shape_class("Paris") == ShapeClass::kInitCap);
  CHECK(shape_class("mRNA") == ShapeClass::kOther);
  CHECK(shape_class("1999") == ShapeClass::kOther);
  CHECK(shape_class("") == ShapeClass::kOther);
  CHECK(shape_class("U.S.") == ShapeClass::kAllUpper);
  CHECK(shape_class("McDonald") == ShapeClass::kOther);
}

TEST_CASE("shape_class covers random strings with one class each") {
  std::mt19937_64 rng(3);
  const std::string alphabet = "aZbY09.-";
  for (int i = 0; i < 2000; ++i) {
    std::string s;
    const int n = static_cast<int>(rng() % 6);
    for (int k = 0; k < n; ++k) s += alphabet[rng() % alphabet.size()];
    const int c = static_cast<int>(shape_class(s));
    CHECK(c >= 0);
    CHECK(c < static_cast<int>(kShapeClassCount));
  }
}
