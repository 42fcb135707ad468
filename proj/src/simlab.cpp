#include "edg/simlab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "edg/error.hpp"

namespace edg {

namespace {

constexpr std::uint64_t kWorldStream = 0x574f524c44;

double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Marsaglia-Tsang; shape < 1 boosted by U^(1/shape).
double gamma_draw(Rng& rng, double shape) {
  if (shape < 1.0) {
    double u = uniform01(rng);
    while (u <= 0.0) u = uniform01(rng);
    return gamma_draw(rng, shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  if (shape == 1.0) {
    double u = uniform01(rng);
    return -std::log1p(-u);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = standard_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform01(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::size_t argmax4(const std::array<double, 4>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < 4; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace

void SynthSpec::validate() const {
  if (none_words == 0 || noise_words == 0 || context_words == 0)
    throw ConfigError("synthetic spec: every word category needs at least one word");
  if (!(stay_probability >= 0.0 && stay_probability <= 1.0))
    throw ConfigError("synthetic spec: stay probability outside [0,1]");
  if (!(stop_probability >= 0.0 && stop_probability <= 1.0))
    throw ConfigError("synthetic spec: stop probability outside [0,1]");
  if (!(weight_min > 0.0 && weight_min <= weight_max))
    throw ConfigError("synthetic spec: invalid context weight range");
  for (double a : dirichlet_alpha)
    if (!(a > 0.0)) throw ConfigError("synthetic spec: Dirichlet parameters must be positive");
  if (min_length == 0 || min_length > max_length)
    throw ConfigError("synthetic spec: invalid sentence length range");
}

SyntheticGenerator::SyntheticGenerator(const SynthSpec& spec) : spec_(spec) {
  spec_.validate();
  const std::size_t n = spec_.vocab_size();
  const int width = n <= 100 ? 2 : static_cast<int>(std::to_string(n - 1).size());
  for (std::size_t i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "w%0*zu", width, i);
    vocab_.emplace_back(buf);
    index_.emplace(vocab_.back(), i);
  }
  auto rng = make_rng(spec_.seed, kWorldStream);
  likelihood_.resize(spec_.context_words);
  weights_.resize(spec_.context_words);
  for (std::size_t i = 0; i < spec_.context_words; ++i) {
    double total = 0.0;
    for (std::size_t t = 0; t < 4; ++t) {
      likelihood_[i][t] = gamma_draw(rng, spec_.dirichlet_alpha[t]);
      total += likelihood_[i][t];
    }
    for (auto& v : likelihood_[i]) v /= total;
    weights_[i] = spec_.weight_min + (spec_.weight_max - spec_.weight_min) * uniform01(rng);
    weight_total_ += weights_[i];
  }
}

WordCategory SyntheticGenerator::category(std::size_t word) const {
  if (word < spec_.none_words) return WordCategory::kNone;
  if (word < spec_.none_words + spec_.noise_words) return WordCategory::kNoise;
  return WordCategory::kContext;
}

WordCategory SyntheticGenerator::category(const std::string& surface) const {
  auto it = index_.find(surface);
  if (it == index_.end()) throw ParameterError("not a synthetic word: '" + surface + "'");
  return category(it->second);
}

std::size_t SyntheticGenerator::draw_in_category(Rng& rng, WordCategory cat) const {
  switch (cat) {
    case WordCategory::kNone:
      return uniform_index(rng, spec_.none_words);
    case WordCategory::kNoise:
      return spec_.none_words + uniform_index(rng, spec_.noise_words);
    case WordCategory::kContext: {
      const double target = uniform01(rng) * weight_total_;
      double acc = 0.0;
      for (std::size_t i = 0; i < weights_.size(); ++i) {
        acc += weights_[i];
        if (target < acc) return spec_.none_words + spec_.noise_words + i;
      }
      return spec_.vocab_size() - 1;
    }
  }
  return 0;
}

std::size_t SyntheticGenerator::next_word(Rng& rng, std::size_t current) const {
  const auto cat = static_cast<int>(category(current));
  int next = cat;
  if (uniform01(rng) >= spec_.stay_probability) {
    const int shift = uniform01(rng) < 0.5 ? 1 : 2;
    next = (cat + shift) % 3;
  }
  return draw_in_category(rng, static_cast<WordCategory>(next));
}

Sentence SyntheticGenerator::sample_sentence(Rng& rng, std::size_t id) const {
  std::vector<std::size_t> words;
  words.push_back(uniform_index(rng, spec_.vocab_size()));
  for (;;) {
    if (words.size() >= spec_.max_length) break;
    if (words.size() >= spec_.min_length && uniform01(rng) < spec_.stop_probability) break;
    words.push_back(next_word(rng, words.back()));
  }

  Sentence s;
  s.id = id;
  const std::size_t context_base = spec_.none_words + spec_.noise_words;
  for (std::size_t l = 0; l < words.size(); ++l) {
    Token tok;
    tok.surface = vocab_[words[l]];
    switch (category(words[l])) {
      case WordCategory::kNone:
        tok.gold = "O";
        break;
      case WordCategory::kNoise: {
        const std::size_t pick = uniform_index(rng, 5);
        tok.gold = pick == 4 ? std::string("O") : "B-" + spec_.entity_types[pick];
        break;
      }
      case WordCategory::kContext: {
        std::array<double, 4> avg{};
        std::size_t neighbors = 0;
        const std::size_t lo = l >= 2 ? l - 2 : 0;
        const std::size_t hi = std::min(words.size() - 1, l + 2);
        for (std::size_t k = lo; k <= hi; ++k) {
          if (k == l || category(words[k]) != WordCategory::kContext) continue;
          const auto& lk = likelihood_[words[k] - context_base];
          for (std::size_t t = 0; t < 4; ++t) avg[t] += lk[t];
          ++neighbors;
        }
        if (neighbors == 0) avg = likelihood_[words[l] - context_base];
        tok.gold = "B-" + spec_.entity_types[argmax4(avg)];
        break;
      }
    }
    s.tokens.push_back(std::move(tok));
  }
  return s;
}

Dataset SyntheticGenerator::generate(std::size_t n_tokens, std::uint64_t stream,
                                     DatasetRole role) const {
  if (n_tokens < spec_.min_length)
    throw ParameterError("gen_synthetic: token count below the minimum sentence length");
  auto rng = make_rng(spec_.seed, stream + 1);
  Dataset out;
  out.role = role;
  for (const auto& t : spec_.entity_types) out.label_inventory.insert(t);
  std::size_t total = 0;
  while (total < n_tokens) {
    out.sentences.push_back(sample_sentence(rng, out.sentences.size()));
    total += out.sentences.back().size();
  }
  return out;
}

Dataset gen_synthetic(const SynthSpec& spec, std::size_t n_tokens, std::uint64_t stream) {
  return SyntheticGenerator(spec).generate(n_tokens, stream);
}

std::size_t ReferenceTagger::word_index(const std::string& surface) const {
  auto it = vocab_.find(surface);
  return it == vocab_.end() ? words_.size() : it->second;
}

ReferenceTagger ReferenceTagger::train(const Dataset& data,
                                       const std::vector<std::string>& tagset, double alpha) {
  if (!(alpha > 0.0)) throw ParameterError("tagger smoothing must be positive");
  if (data.sentences.empty()) throw ParameterError("tagger training data is empty");
  ReferenceTagger t;
  t.alpha_ = alpha;
  std::set<std::string> tags(tagset.begin(), tagset.end());
  for (const auto& s : data.sentences)
    for (const auto& tok : s.tokens) {
      if (!tok.gold) throw ParameterError("tagger training data has unlabeled tokens");
      tags.insert(*tok.gold);
      if (t.vocab_.emplace(tok.surface, t.words_.size()).second) t.words_.push_back(tok.surface);
    }
  t.tagset_.assign(tags.begin(), tags.end());
  const std::size_t y = t.tagset_.size();
  const std::size_t rows = t.words_.size() + 1;
  std::unordered_map<std::string, std::size_t> tag_index;
  for (std::size_t i = 0; i < y; ++i) tag_index.emplace(t.tagset_[i], i);

  t.token_counts_.assign(rows * y, 0.0);
  for (auto& c : t.context_counts_) c.assign(rows * y, 0.0);
  t.tag_counts_.assign(y, 0.0);
  for (const auto& s : data.sentences) {
    std::vector<std::size_t> w(s.size());
    for (std::size_t l = 0; l < s.size(); ++l) w[l] = t.vocab_.at(s.tokens[l].surface);
    for (std::size_t l = 0; l < s.size(); ++l) {
      const std::size_t tag = tag_index.at(*s.tokens[l].gold);
      t.token_counts_[w[l] * y + tag] += 1.0;
      t.tag_counts_[tag] += 1.0;
      for (std::size_t o = 0; o < kContextOffsets.size(); ++o) {
        const auto pos = static_cast<std::ptrdiff_t>(l) + kContextOffsets[o];
        if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(s.size())) continue;
        t.context_counts_[o][w[static_cast<std::size_t>(pos)] * y + tag] += 1.0;
      }
    }
  }
  t.finalize();
  return t;
}

void ReferenceTagger::finalize() {
  const std::size_t y = tagset_.size();
  const std::size_t rows = words_.size() + 1;
  const double v = static_cast<double>(rows);
  log_token_.resize(rows * y);
  for (std::size_t i = 0; i < rows * y; ++i) log_token_[i] = std::log(token_counts_[i] + alpha_);
  for (std::size_t o = 0; o < 4; ++o) {
    log_context_[o].resize(rows * y);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < y; ++k)
        log_context_[o][r * y + k] = std::log(context_counts_[o][r * y + k] + alpha_) -
                                     std::log(tag_counts_[k] + alpha_ * v);
  }
}

void ReferenceTagger::token_logprobs(const Sentence& sentence, std::size_t pos,
                                     double* out) const {
  const std::size_t y = tagset_.size();
  const std::size_t w = word_index(sentence.tokens[pos].surface);
  for (std::size_t k = 0; k < y; ++k) out[k] = log_token_[w * y + k];
  for (std::size_t o = 0; o < kContextOffsets.size(); ++o) {
    const auto p = static_cast<std::ptrdiff_t>(pos) + kContextOffsets[o];
    if (p < 0 || p >= static_cast<std::ptrdiff_t>(sentence.size())) continue;
    const std::size_t c = word_index(sentence.tokens[static_cast<std::size_t>(p)].surface);
    for (std::size_t k = 0; k < y; ++k) out[k] += log_context_[o][c * y + k];
  }
  const double mx = *std::max_element(out, out + y);
  double z = 0.0;
  for (std::size_t k = 0; k < y; ++k) z += std::exp(out[k] - mx);
  const double lz = mx + std::log(z);
  for (std::size_t k = 0; k < y; ++k) out[k] -= lz;
}

PredictionRecord ReferenceTagger::predict(const Sentence& sentence, bool want_logprobs) const {
  const std::size_t y = tagset_.size();
  PredictionRecord rec;
  rec.sentence_id = sentence.id;
  std::vector<double> lp(sentence.size() * y);
  for (std::size_t l = 0; l < sentence.size(); ++l) {
    double* row = lp.data() + l * y;
    token_logprobs(sentence, l, row);
    rec.labels.push_back(tagset_[static_cast<std::size_t>(std::max_element(row, row + y) - row)]);
  }
  if (want_logprobs) rec.logprobs = std::move(lp);
  return rec;
}

void ReferenceTagger::save(std::ostream& out) const {
  out << "edg-tagger 1\n";
  const auto old_precision = out.precision(17);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", alpha_);
  out << "alpha " << buf << "\n";
  out << "tags " << tagset_.size();
  for (const auto& t : tagset_) out << ' ' << t;
  out << "\nwords " << words_.size() << "\n";
  const std::size_t y = tagset_.size();
  auto write_row = [&](const std::vector<double>& table, std::size_t r) {
    for (std::size_t k = 0; k < y; ++k) out << (k ? " " : "") << table[r * y + k];
  };
  for (std::size_t r = 0; r <= words_.size(); ++r) {
    out << (r < words_.size() ? words_[r] : std::string("<unk>")) << '\t';
    write_row(token_counts_, r);
    for (std::size_t o = 0; o < 4; ++o) {
      out << '\t';
      write_row(context_counts_[o], r);
    }
    out << '\n';
  }
  out << "totals";
  for (double c : tag_counts_) out << ' ' << c;
  out << '\n';
  out.precision(old_precision);
}

ReferenceTagger ReferenceTagger::load(std::istream& in) {
  ReferenceTagger t;
  std::string line, word;
  if (!std::getline(in, line) || line != "edg-tagger 1")
    throw FormatError("not a tagger file (expected 'edg-tagger 1')", 1);
  std::size_t n = 0;
  if (!(in >> word >> t.alpha_) || word != "alpha") throw FormatError("missing alpha", 2);
  if (!(in >> word >> n) || word != "tags") throw FormatError("missing tags", 3);
  t.tagset_.resize(n);
  for (auto& tag : t.tagset_) in >> tag;
  std::size_t words = 0;
  if (!(in >> word >> words) || word != "words") throw FormatError("missing words", 4);
  const std::size_t y = t.tagset_.size();
  t.token_counts_.assign((words + 1) * y, 0.0);
  for (auto& c : t.context_counts_) c.assign((words + 1) * y, 0.0);
  for (std::size_t r = 0; r <= words; ++r) {
    if (!(in >> word)) throw FormatError("truncated tagger table", 5 + r);
    if (r < words) {
      t.vocab_.emplace(word, t.words_.size());
      t.words_.push_back(word);
    }
    for (std::size_t k = 0; k < y; ++k) in >> t.token_counts_[r * y + k];
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t k = 0; k < y; ++k) in >> t.context_counts_[o][r * y + k];
    if (!in) throw FormatError("truncated tagger table", 5 + r);
  }
  if (!(in >> word) || word != "totals") throw FormatError("missing totals", 6 + words);
  t.tag_counts_.resize(y);
  for (auto& c : t.tag_counts_) in >> c;
  if (!in) throw FormatError("truncated totals", 6 + words);
  t.finalize();
  return t;
}

std::vector<std::string> tagset_of(std::initializer_list<const Dataset*> datasets,
                                   bool include_inside) {
  std::set<std::string> tags{"O"};
  for (const Dataset* d : datasets) {
    if (!d) continue;
    for (const auto& type : d->label_inventory) {
      tags.insert("B-" + type);
      if (include_inside) tags.insert("I-" + type);
    }
    for (const auto& s : d->sentences)
      for (const auto& tok : s.tokens)
        if (tok.gold) tags.insert(*tok.gold);
  }
  return {tags.begin(), tags.end()};
}

std::vector<ReferenceTagger> train_bootstrap_ensemble(const Dataset& data,
                                                      const std::vector<std::string>& tagset,
                                                      double alpha, std::size_t k,
                                                      std::uint64_t seed) {
  if (k < 2) throw ParameterError("ensemble needs at least two members");
  std::vector<ReferenceTagger> members(k);
  const std::size_t n = data.sentences.size();
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t m = 0; m < static_cast<std::ptrdiff_t>(k); ++m) {
    auto rng = make_rng(seed, 0x424f4f54 + static_cast<std::uint64_t>(m));
    Dataset sample;
    sample.label_inventory = data.label_inventory;
    sample.sentences.reserve(n);
    for (std::size_t i = 0; i < n; ++i) sample.sentences.push_back(data.sentences[uniform_index(rng, n)]);
    members[static_cast<std::size_t>(m)] = ReferenceTagger::train(sample, tagset, alpha);
  }
  return members;
}

PredictionSet tagger_predict(const ReferenceTagger& tagger, const Dataset& data,
                             bool want_logprobs, const std::vector<ReferenceTagger>* ensemble) {
  PredictionSet out;
  out.tagset = tagger.tagset();
  out.records.resize(data.sentences.size());
  const auto n = static_cast<std::ptrdiff_t>(data.sentences.size());
#pragma omp parallel for schedule(dynamic, 64)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& s = data.sentences[static_cast<std::size_t>(i)];
    auto rec = tagger.predict(s, want_logprobs);
    if (ensemble) {
      std::vector<std::vector<std::string>> passes;
      passes.reserve(ensemble->size());
      for (const auto& member : *ensemble) passes.push_back(member.predict(s, false).labels);
      rec.ensemble = std::move(passes);
    }
    out.records[static_cast<std::size_t>(i)] = std::move(rec);
  }
  return out;
}

PseudoPool make_pseudo_pool(const Dataset& full_gold_train, const Dataset& pool_inputs,
                            const std::vector<std::string>& tagset, double alpha) {
  PseudoPool out{pool_inputs, ReferenceTagger::train(full_gold_train, tagset, alpha)};
  for (auto& s : out.pool.sentences) {
    auto rec = out.oracle.predict(s, false);
    for (std::size_t l = 0; l < s.size(); ++l) s.tokens[l].gold = rec.labels[l];
  }
  out.pool.label_inventory.insert(full_gold_train.label_inventory.begin(),
                                  full_gold_train.label_inventory.end());
  return out;
}

}  // namespace edg
