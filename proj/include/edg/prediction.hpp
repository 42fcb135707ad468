#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "edg/corpus.hpp"

namespace edg {

// One predicted sentence: the unit exchanged with a black-box tagger.
// `logprobs` is row-major |labels| x |tagset| over the owning set's tagset.
struct PredictionRecord {
  std::size_t sentence_id = 0;
  std::vector<std::string> labels;
  std::optional<std::vector<double>> logprobs;
  std::optional<std::vector<std::vector<std::string>>> ensemble;

  std::size_t size() const { return labels.size(); }
};

struct PredictionSet {
  std::vector<std::string> tagset;  // column order of every record's logprobs
  std::vector<PredictionRecord> records;

  bool has_logprobs() const;
  bool has_ensemble() const;
  // Records indexed by sentence id; throws AlignmentError on gaps.
  const PredictionRecord& at(std::size_t sentence_id) const;
};

// Checks that `predictions` covers `gold` sentence-for-sentence with equal
// lengths. Throws AlignmentError naming the first offending sentence id.
void check_alignment(const PredictionSet& predictions, const Dataset& gold);

// Per-token validity: logprobs exponentiate and sum to 1, labels are the
// argmax, ensemble passes have the sentence length.
void validate_record(const PredictionRecord& record, std::size_t tagset_size);

// Line-delimited JSON exchange format, one record per line:
//   {"id":3,"labels":["B-PER","O"],
//    "logprobs":[{"B-PER":-0.1,"O":-2.4},...],     (optional)
//    "ensemble":[["B-PER","O"],["O","O"],...]}      (optional)
PredictionSet read_predictions(std::istream& in);
PredictionSet read_predictions_file(const std::string& path);
void write_predictions(const PredictionSet& set, std::ostream& out);
void write_predictions_file(const PredictionSet& set, const std::string& path);

// Dataset whose gold tags are the predicted labels; inputs must align.
Dataset apply_predictions(const Dataset& inputs, const PredictionSet& predictions);

// Per-class weights r(y) used by the weighted error and weighted F1.
// Entity types map to weights; the outside tag O uses `outside` when set,
// otherwise the smallest type weight.
struct ClassWeights {
  std::vector<std::pair<std::string, double>> by_type;
  std::optional<double> outside;

  double of_type(const std::string& type) const;  // throws ConfigError if absent
  double of_tag(const std::string& tag) const;
};

}  // namespace edg
