#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edg/partition.hpp"
#include "edg/prediction.hpp"
#include "edg/select.hpp"

namespace edg {

enum class StrategyKind {
  kRandom,
  kDiv,
  kUs,
  kUsDiv,
  kBald,
  kEdg,
  kEdgExt1,
  kUsEdgExt2,
  kUsDivEdgExt2,
  kBaldEdgExt2,
};

const char* strategy_name(StrategyKind kind);
StrategyKind parse_strategy(const std::string& name);  // throws ConfigError
std::vector<StrategyKind> all_strategies();

// What a strategy needs from the predictor and the data.
struct StrategyCaps {
  bool validation_labels = false;
  bool logprobs = false;
  bool ensemble = false;
  bool pool_predictions = false;
  bool decay_fit = false;        // fits error-decay curves on a partition
  bool uncertainty_decay = false;
  bool diversity = false;        // needs sentence embeddings
};
StrategyCaps strategy_caps(StrategyKind kind);

// Throws ConfigError naming the strategy when a required capability is not
// available.
void check_capabilities(StrategyKind kind, bool have_validation_labels, bool have_logprobs,
                        bool have_ensemble);

// Per-sentence uncertainty at one training size. Higher is more uncertain.
struct UncertaintySnapshot {
  std::size_t checkpoint_tokens = 0;
  std::vector<double> scores;  // indexed by pool position
};

// -(1/|s|) sum_l max_y logprob. Throws CapabilityError without logprobs.
double score_us(const PredictionRecord& record, std::size_t tagset_size);
// Mean over tokens of the fraction of passes that differ from the mode tag
// (ties go to the lexicographically smallest tag).
double score_bald(const PredictionRecord& record);

// min(max(u_lagged - u_current, 0), u_current) per sentence.
std::vector<double> score_uncertainty_decay(const UncertaintySnapshot& current,
                                            const UncertaintySnapshot& lagged);

enum class ScoreSource { kDecayScore, kRawUncertainty };
// Selection batches are counted from 1; odd ones use the decay score.
ScoreSource alternation_policy(std::size_t batch_index);

std::vector<double> score_random(std::uint64_t seed, std::size_t n);

// Takes candidates in descending score order (ties to the smaller position)
// until the budget is met. Document mode ranks whole documents by the
// length-weighted mean score.
Batch select_top(std::span<const double> scores, const PoolIndex& pool,
                 std::span<const std::size_t> candidates, std::size_t token_budget,
                 SelectionMode mode = SelectionMode::kSentence);

enum class FassFilter { kUncertainty, kRandom };

struct FassConfig {
  std::size_t t_factor = 100;
  FassFilter filter = FassFilter::kUncertainty;
  std::uint64_t seed = 0;
  bool lazy = true;       // lazy greedy; false recomputes every gain each step
  bool parallel = true;
};

// Filtered facility-location selection. `embeddings` holds one row of `dim`
// values per pool position; rows are normalized internally and similarity is
// 1 + cos. Returns pool positions in pick order.
Batch fass_select(std::span<const double> pool_scores, std::span<const double> embeddings,
                  std::size_t dim, std::span<const std::size_t> lengths,
                  std::span<const std::size_t> candidates, std::size_t token_budget,
                  const FassConfig& config);

// Difference-rate history for the validation-free extension: checkpoint t
// (t < last) against the last checkpoint, per group, on a fixed unlabeled
// reference set. `train_masses[t]` are the group training masses at
// checkpoint t.
std::vector<GroupErrorRecord> ext1_group_errors(
    const Partition& partition, const UnitAssignment& units, const Dataset& reference,
    std::span<const PredictionSet> checkpoint_predictions,
    std::span<const std::vector<double>> train_masses);

}  // namespace edg
