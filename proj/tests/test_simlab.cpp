#include "doctest.h"

#include <array>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "edg/eval.hpp"
#include "edg/simlab.hpp"
#include "support.hpp"

using namespace edg;

namespace {

// Category-level model of the generator, written from the design rather
// than the implementation: first word uniform over the vocabulary, stay in
// the category with p = 0.9, otherwise switch to one of the other two
// uniformly; stop with p = 0.1 after each word once length >= 5, at most 50.
struct ChainOracle {
  std::array<double, 3> proportion{};
  std::array<double, 3> sigma_100k{};  // std. error of the proportion at 100k tokens
};

ChainOracle chain_oracle(std::size_t steps) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> first(0, 99);
  std::vector<std::array<double, 3>> per_sentence;
  std::vector<double> lengths;
  std::size_t total = 0;
  while (total < steps) {
    const int w = first(rng);
    int cat = w < 50 ? 0 : (w < 75 ? 1 : 2);
    std::array<double, 3> counts{};
    counts[cat] += 1;
    std::size_t len = 1;
    while (len < 50 && !(len >= 5 && u(rng) < 0.1)) {
      if (u(rng) >= 0.9) cat = (cat + (u(rng) < 0.5 ? 1 : 2)) % 3;
      counts[cat] += 1;
      ++len;
    }
    per_sentence.push_back(counts);
    lengths.push_back(static_cast<double>(len));
    total += len;
  }
  ChainOracle o;
  const double n = static_cast<double>(per_sentence.size());
  const double mean_len = static_cast<double>(total) / n;
  for (int c = 0; c < 3; ++c) {
    double sum = 0;
    for (const auto& s : per_sentence) sum += s[c];
    o.proportion[c] = sum / static_cast<double>(total);
    double var = 0;
    for (std::size_t i = 0; i < per_sentence.size(); ++i) {
      const double r = per_sentence[i][c] - o.proportion[c] * lengths[i];
      var += r * r;
    }
    var /= n - 1;
    const double sentences_100k = 100000.0 / mean_len;
    o.sigma_100k[c] = std::sqrt(var / sentences_100k) / mean_len;
  }
  return o;
}

double entropy(const std::map<std::string, double>& counts) {
  double total = 0, h = 0;
  for (const auto& [_, c] : counts) total += c;
  for (const auto& [_, c] : counts)
    if (c > 0) h -= c / total * std::log(c / total);
  return h;
}

}  // namespace

TEST_CASE("spec validation") {
  SynthSpec s;
  CHECK_NOTHROW(s.validate());
  s.min_length = 60;
  CHECK_THROWS(s.validate());
}

TEST_CASE("generator: labels by category, lengths, determinism") {
  SynthSpec spec;
  spec.seed = 9;
  const SyntheticGenerator gen(spec);
  CHECK(gen.vocabulary().size() == 100);
  CHECK(gen.vocabulary()[0] == "w00");
  const auto d = gen.generate(30000, 0);
  CHECK(d.token_count() >= 30000);
  CHECK(d.token_count() - d.sentences.back().size() < 30000);
  std::size_t none = 0, noise = 0, ctx = 0;
  std::map<std::string, double> noise_labels;
  for (const auto& s : d.sentences) {
    CHECK(s.size() >= 5);
    CHECK(s.size() <= 50);
    for (const auto& t : s.tokens) {
      switch (gen.category(t.surface)) {
        case WordCategory::kNone:
          ++none;
          CHECK(*t.gold == "O");
          break;
        case WordCategory::kNoise:
          ++noise;
          noise_labels[*t.gold] += 1;
          break;
        case WordCategory::kContext:
          ++ctx;
          CHECK(*t.gold != "O");
          CHECK(t.gold->rfind("B-", 0) == 0);
          break;
      }
    }
  }
  CHECK(none > 0);
  CHECK(ctx > 0);
  REQUIRE(noise_labels.size() == 5);
  const double sigma = std::sqrt(noise * 0.2 * 0.8);
  for (const auto& [_, c] : noise_labels) CHECK(std::abs(c - 0.2 * noise) < 3.5 * sigma);

  const auto again = gen_synthetic(spec, 30000, 0);
  CHECK(serialize_conll(again) == serialize_conll(d));
  CHECK(serialize_conll(gen_synthetic(spec, 30000, 1)) != serialize_conll(d));
  SynthSpec other = spec;
  other.seed = 10;
  CHECK(serialize_conll(gen_synthetic(other, 30000, 0)) != serialize_conll(d));
}

TEST_CASE("generator: category proportions match the chain design") {
  const auto oracle = chain_oracle(1000000);
  SynthSpec spec;
  spec.seed = 1;
  const SyntheticGenerator gen(spec);
  const auto d = gen.generate(100000, 0);
  std::array<double, 3> counts{};
  for (const auto& s : d.sentences)
    for (const auto& t : s.tokens) counts[static_cast<int>(gen.category(t.surface))] += 1;
  const double total = static_cast<double>(d.token_count());
  for (int c = 0; c < 3; ++c) {
    CAPTURE(c);
    CAPTURE(oracle.proportion[c]);
    CHECK(std::abs(counts[c] / total - oracle.proportion[c]) < 3 * oracle.sigma_100k[c]);
  }
}

TEST_CASE("generator: context words follow their weights") {
  SynthSpec spec;
  spec.seed = 4;
  const SyntheticGenerator gen(spec);
  const auto d = gen.generate(200000, 0);
  std::vector<double> count(25, 0.0);
  double total = 0;
  for (const auto& s : d.sentences)
    for (std::size_t l = 1; l < s.size(); ++l) {
      // Only words entered from inside the context category, which are drawn
      // by weight; the first word of a sentence is uniform.
      if (gen.category(s.tokens[l].surface) != WordCategory::kContext) continue;
      const auto idx = static_cast<std::size_t>(std::stoi(s.tokens[l].surface.substr(1))) - 75;
      count[idx] += 1;
      total += 1;
    }
  double wsum = 0;
  for (std::size_t i = 0; i < 25; ++i) {
    CHECK(gen.weight(i) >= spec.weight_min);
    CHECK(gen.weight(i) <= spec.weight_max);
    wsum += gen.weight(i);
  }
  for (std::size_t i = 0; i < 25; ++i) {
    const double p = gen.weight(i) / wsum;
    CHECK(std::abs(count[i] / total - p) < 5 * std::sqrt(p * (1 - p) / total) + 0.01);
  }
}

TEST_CASE("reference tagger: count dominance") {
  const std::vector<std::string> tags{"B-PER", "O"};
  double last = 0;
  for (int reps : {1, 10, 100, 1000}) {
    std::string text = "y O\n\n";
    for (int r = 0; r < reps; ++r) text += "x B-PER\n\n";
    const auto tagger = ReferenceTagger::train(testing::conll(text), tags);
    const auto d = testing::conll("x\n");
    std::vector<double> lp(2);
    tagger.token_logprobs(d.sentences[0], 0, lp.data());
    const double p = std::exp(lp[0]);
    CHECK(p > last);
    last = p;
  }
  CHECK(last > 0.99);
}

TEST_CASE("reference tagger: unseen word is near uniform") {
  const std::vector<std::string> tags{"B-LOC", "B-MISC", "B-ORG", "B-PER", "O"};
  const auto train = testing::conll("a B-LOC\nb B-MISC\nc B-ORG\nd B-PER\ne O\n");
  const auto tagger = ReferenceTagger::train(train, tags, 1.0);
  const auto q = testing::conll("zzz\n");
  std::vector<double> lp(5);
  tagger.token_logprobs(q.sentences[0], 0, lp.data());
  double total = 0, best = 0;
  for (double v : lp) {
    total += std::exp(v);
    best = std::max(best, std::exp(v));
  }
  CHECK(total == doctest::Approx(1.0));
  CHECK(best < 0.5);
}

TEST_CASE("reference tagger: predictions, save and load") {
  SynthSpec spec;
  spec.seed = 2;
  const auto train = gen_synthetic(spec, 5000, 0);
  const auto val = gen_synthetic(spec, 2000, 1);
  const auto tags = tagset_of({&train, &val});
  CHECK(std::is_sorted(tags.begin(), tags.end()));
  CHECK(std::find(tags.begin(), tags.end(), "I-PER") != tags.end());
  const auto tagger = ReferenceTagger::train(train, tags);
  const auto pred = tagger_predict(tagger, val, true);
  CHECK_FALSE(pred.has_ensemble());
  CHECK(pred.tagset == tags);
  for (const auto& r : pred.records) {
    for (std::size_t l = 0; l < r.size(); ++l) {
      double total = 0, best = -1e300;
      std::size_t arg = 0;
      for (std::size_t y = 0; y < tags.size(); ++y) {
        const double v = (*r.logprobs)[l * tags.size() + y];
        total += std::exp(v);
        if (v > best) {
          best = v;
          arg = y;
        }
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(r.labels[l] == tags[arg]);
    }
  }

  std::ostringstream out;
  tagger.save(out);
  std::istringstream in(out.str());
  const auto loaded = ReferenceTagger::load(in);
  const auto again = tagger_predict(loaded, val, true);
  for (std::size_t i = 0; i < pred.records.size(); ++i) {
    CHECK(again.records[i].labels == pred.records[i].labels);
    CHECK(*again.records[i].logprobs == *pred.records[i].logprobs);
  }
}

TEST_CASE("bootstrap ensemble is deterministic") {
  SynthSpec spec;
  const auto train = gen_synthetic(spec, 4000, 0);
  const auto val = gen_synthetic(spec, 1000, 1);
  const auto tags = tagset_of({&train, &val});
  const auto tagger = ReferenceTagger::train(train, tags);
  const auto e1 = train_bootstrap_ensemble(train, tags, 1.0, 10, 42);
  const auto e2 = train_bootstrap_ensemble(train, tags, 1.0, 10, 42);
  const auto p1 = tagger_predict(tagger, val, false, &e1);
  const auto p2 = tagger_predict(tagger, val, false, &e2);
  CHECK(p1.has_ensemble());
  double disagreement = 0;
  for (std::size_t i = 0; i < p1.records.size(); ++i) {
    CHECK(*p1.records[i].ensemble == *p2.records[i].ensemble);
    CHECK(p1.records[i].ensemble->size() == 10);
    disagreement += p1.records[i].ensemble->front() != p1.records[i].ensemble->back();
  }
  CHECK(disagreement > 0);
}

TEST_CASE("reference tagger shows the three decay regimes") {
  SynthSpec spec;
  spec.seed = 3;
  const SyntheticGenerator gen(spec);
  const auto train = gen.generate(100000, 0);
  const auto val = gen.generate(20000, 1);
  const auto tags = tagset_of({&train, &val});
  auto errors_at = [&](std::size_t tokens) {
    Dataset sub;
    std::size_t n = 0;
    for (const auto& s : train.sentences) {
      if (n >= tokens) break;
      sub.sentences.push_back(s);
      n += s.size();
    }
    const auto tagger = ReferenceTagger::train(sub, tags);
    std::array<double, 3> err{}, cnt{};
    for (const auto& s : val.sentences) {
      const auto r = tagger.predict(s, false);
      for (std::size_t l = 0; l < s.size(); ++l) {
        const int c = static_cast<int>(gen.category(s.tokens[l].surface));
        cnt[c] += 1;
        err[c] += r.labels[l] != *s.tokens[l].gold;
      }
    }
    for (int c = 0; c < 3; ++c) err[c] /= cnt[c];
    return err;
  };
  const auto small = errors_at(1000);
  const auto large = errors_at(100000);
  // Always-O words: learned almost immediately.
  CHECK(small[0] < 0.15);
  CHECK(large[0] < 0.01);
  CHECK(large[0] < 0.1 * small[0]);
  // Noise words: a plateau at the Bayes error of a uniform 5-way label.
  CHECK(std::abs(small[1] - 0.8) < 0.02);
  CHECK(std::abs(large[1] - 0.8) < 0.02);
  // Context words: still improving, but much more slowly.
  CHECK(large[2] < small[2] - 0.05);
  CHECK(large[2] / small[2] > large[0] / small[0]);
  CHECK(large[2] > 0.1);
}

TEST_CASE("pseudo pool") {
  SynthSpec spec;
  spec.seed = 6;
  const SyntheticGenerator gen(spec);
  const auto train = gen.generate(20000, 0);
  const auto pool_gold = gen.generate(20000, 1);
  const auto tags = tagset_of({&train, &pool_gold});
  const auto pseudo = make_pseudo_pool(train, strip_labels(pool_gold), tags);
  REQUIRE(pseudo.pool.sentences.size() == pool_gold.sentences.size());
  CHECK(pseudo.pool.labeled());
  const auto again = tagger_predict(pseudo.oracle, pseudo.pool, false);
  std::map<std::string, std::map<std::string, double>> labels_of_noise;
  for (std::size_t i = 0; i < pseudo.pool.sentences.size(); ++i) {
    const auto& s = pseudo.pool.sentences[i];
    CHECK(s.size() == pool_gold.sentences[i].size());
    for (std::size_t l = 0; l < s.size(); ++l) {
      CHECK(again.records[i].labels[l] == *s.tokens[l].gold);
      if (gen.category(s.tokens[l].surface) == WordCategory::kNoise)
        labels_of_noise[s.tokens[l].surface][*s.tokens[l].gold] += 1;
    }
  }
  double mean_entropy = 0;
  for (const auto& [_, c] : labels_of_noise) mean_entropy += entropy(c);
  mean_entropy /= static_cast<double>(labels_of_noise.size());
  CHECK(mean_entropy > 0.0);
}
