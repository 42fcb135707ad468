#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "edg/corpus.hpp"
#include "edg/decay.hpp"
#include "edg/partition.hpp"
#include "edg/prediction.hpp"

namespace edg {

struct Phrase {
  std::size_t sentence_id = 0;
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
  std::string type;

  bool operator==(const Phrase&) const = default;
  auto operator<=>(const Phrase&) const = default;
};

// BIO decoding with the conlleval repair: an I-X that does not continue an
// open X phrase starts one. Throws FormatError on non-BIO tags.
std::vector<Phrase> decode_phrases(std::span<const std::string> tags,
                                   std::size_t sentence_id = 0);

struct TypeCounts {
  double gold = 0.0;
  double predicted = 0.0;
  double matched = 0.0;
};

struct ScoreReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  TypeCounts total;
  std::map<std::string, TypeCounts> per_type;
  bool weighted = false;
};

// Exact (sentence, start, end, type) phrase matching. With weights each
// phrase contributes r(type) to the totals.
ScoreReport micro_f1(const Dataset& gold, const PredictionSet& predictions,
                     const ClassWeights* weights = nullptr);
ScoreReport micro_f1(const Dataset& gold, const Dataset& predicted,
                     const ClassWeights* weights = nullptr);
// Core over aligned tag sequences.
ScoreReport micro_f1(std::span<const std::vector<std::string>> gold,
                     std::span<const std::vector<std::string>> predicted,
                     const ClassWeights* weights = nullptr);

// "scope,gold,predicted,matched,precision,recall,f1" with an "all" row
// followed by one row per type.
void write_score_report(const ScoreReport& report, std::ostream& out);

struct CurveSource {
  std::string partition;
  const Partition* groups = nullptr;  // exemplars; may be null
  const DecayFit* fit = nullptr;
};

inline constexpr const char* kCurveHeader =
    "partition,group,checkpoint,train_mass,empirical_error,predicted_error,val_mass,exemplars";

// One row per (partition, group, checkpoint) of each fit's history.
// predicted_error is the unclamped model value; exemplars are
// space-separated surfaces in a quoted field.
void export_decay_curves(std::span<const CurveSource> sources, std::ostream& out);

}  // namespace edg
