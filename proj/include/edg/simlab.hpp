#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "edg/corpus.hpp"
#include "edg/prediction.hpp"
#include "edg/rng.hpp"

namespace edg {

struct SynthSpec {
  std::size_t none_words = 50;     // always tagged O
  std::size_t noise_words = 25;    // tag drawn uniformly per mention
  std::size_t context_words = 25;  // tag decided by neighboring context words
  std::array<double, 4> dirichlet_alpha{1.0, 1.0, 1.0, 1.0};
  std::array<std::string, 4> entity_types{"PER", "LOC", "ORG", "MISC"};
  double stay_probability = 0.9;
  double weight_min = 0.1;
  double weight_max = 1.0;
  std::size_t min_length = 5;
  std::size_t max_length = 50;
  double stop_probability = 0.1;
  std::uint64_t seed = 0;

  std::size_t vocab_size() const { return none_words + noise_words + context_words; }
  void validate() const;  // throws ConfigError
};

enum class WordCategory { kNone = 0, kNoise = 1, kContext = 2 };

// The synthetic world (vocabulary, context-word likelihoods and transition
// weights) is fixed by the spec seed; each call to generate() draws
// sentences from an independent stream.
class SyntheticGenerator {
 public:
  explicit SyntheticGenerator(const SynthSpec& spec);

  const SynthSpec& spec() const { return spec_; }
  const std::vector<std::string>& vocabulary() const { return vocab_; }
  WordCategory category(std::size_t word) const;
  WordCategory category(const std::string& surface) const;
  const std::array<double, 4>& likelihood(std::size_t context_index) const {
    return likelihood_[context_index];
  }
  double weight(std::size_t context_index) const { return weights_[context_index]; }

  // Sentences until the token count reaches n_tokens.
  Dataset generate(std::size_t n_tokens, std::uint64_t stream,
                   DatasetRole role = DatasetRole::kTrain) const;
  // Word index sequence of one sentence, labels assigned.
  Sentence sample_sentence(Rng& rng, std::size_t id) const;
  // Next word index given the current one.
  std::size_t next_word(Rng& rng, std::size_t current) const;

 private:
  std::size_t draw_in_category(Rng& rng, WordCategory cat) const;

  SynthSpec spec_;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::array<double, 4>> likelihood_;
  std::vector<double> weights_;
  double weight_total_ = 0.0;
};

Dataset gen_synthetic(const SynthSpec& spec, std::size_t n_tokens, std::uint64_t stream = 0);

// Smoothed count model over the token and its +-2 neighbors:
//   P(y | s, l) ~ (n(y, w_l) + a) * prod_o (n_o(y, w_{l+o}) + a) / (n(y) + a V)
// with V the training vocabulary size plus one unknown entry. Offsets
// outside the sentence are skipped.
class ReferenceTagger {
 public:
  static ReferenceTagger train(const Dataset& data, const std::vector<std::string>& tagset,
                               double alpha = 1.0);

  const std::vector<std::string>& tagset() const { return tagset_; }
  double alpha() const { return alpha_; }
  std::size_t vocabulary_size() const { return vocab_.size(); }

  // Normalized log-probabilities over tagset() for token `pos`.
  void token_logprobs(const Sentence& sentence, std::size_t pos, double* out) const;
  PredictionRecord predict(const Sentence& sentence, bool want_logprobs) const;

  void save(std::ostream& out) const;
  static ReferenceTagger load(std::istream& in);

 private:
  void finalize();
  std::size_t word_index(const std::string& surface) const;

  std::vector<std::string> tagset_;
  double alpha_ = 1.0;
  std::unordered_map<std::string, std::size_t> vocab_;
  std::vector<std::string> words_;
  std::vector<double> token_counts_;                // (V+1) x Y, last row unknown
  std::array<std::vector<double>, 4> context_counts_;
  std::vector<double> tag_counts_;
  std::vector<double> log_token_;
  std::array<std::vector<double>, 4> log_context_;
};

inline constexpr std::array<int, 4> kContextOffsets{-2, -1, 1, 2};

// Sorted union of the gold tags seen in the datasets plus B-/I- tags of every
// inventory type.
std::vector<std::string> tagset_of(std::initializer_list<const Dataset*> datasets,
                                   bool include_inside = true);

// K taggers trained on seeded bootstrap resamples of the training sentences.
std::vector<ReferenceTagger> train_bootstrap_ensemble(const Dataset& data,
                                                      const std::vector<std::string>& tagset,
                                                      double alpha, std::size_t k,
                                                      std::uint64_t seed);

PredictionSet tagger_predict(const ReferenceTagger& tagger, const Dataset& data,
                             bool want_logprobs,
                             const std::vector<ReferenceTagger>* ensemble = nullptr);

struct PseudoPool {
  Dataset pool;
  ReferenceTagger oracle;
};

// Trains the oracle on all gold training data and relabels the pool with it.
PseudoPool make_pseudo_pool(const Dataset& full_gold_train, const Dataset& pool_inputs,
                            const std::vector<std::string>& tagset, double alpha = 1.0);

}  // namespace edg
