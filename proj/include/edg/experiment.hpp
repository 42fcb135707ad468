#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "edg/loop.hpp"
#include "edg/simlab.hpp"

namespace edg {

inline constexpr const char* kVersion = "1.0.0";

struct DataPaths {
  std::string pool;        // labeled; labels are revealed as sentences are selected
  std::string validation;
  std::vector<std::pair<std::string, std::string>> evaluations;  // name -> labeled file
  std::optional<std::string> embeddings;
  bool normalize_embeddings = true;
};

struct PredictorConfig {
  bool external = false;
  std::string command;         // external only
  bool logprobs = true;        // what the external command provides
  bool ensemble = false;
  double alpha = 1.0;          // built-in tagger smoothing
};

struct RunConfig {
  std::string strategy = "edg";
  DataPaths data;
  std::vector<std::string> partitions{"word_identity"};
  PartitionConfig partition;
  LoopConfig loop;
  PredictorConfig predictor;
  bool pseudo_labels = false;  // relabel pool and evaluation sets with an oracle tagger
  std::uint64_t seed = 0;
};

// JSON config file. Relative paths resolve against the file's directory.
// Each override is "dotted.key=value" with a JSON (or bare string) value.
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides = {});
RunConfig parse_run_config(const std::string& text, const std::string& base_dir,
                           const std::vector<std::string>& overrides = {});
std::string run_config_json(const RunConfig& config);  // canonical, paths absolute

struct SynthSizes {
  std::size_t train = 99956;
  std::size_t validation = 10045;
  std::size_t test = 10004;
};

// Writes train/validation/test/pool CoNLL files, one-hot embeddings, a
// manifest and a ready-to-run simulate.json. Refuses a non-empty directory
// unless `force`.
void gen_synth_files(const SynthSpec& spec, const SynthSizes& sizes, const std::string& out_dir,
                     bool force);

struct SimulateOptions {
  bool force = false;
  bool resume = false;
  std::ostream* log = nullptr;
};

// Runs the loop and fills `run_dir` with manifest.json, history.jsonl,
// batches/, partitions/, fits/, curves.csv and learning_curve.csv.
LoopResult simulate(const RunConfig& config, const std::string& run_dir,
                    const SimulateOptions& options = {});

// Fits every partition of a history file; writes fits/<partition>.csv and
// curves.csv into out_dir. Returns the fits.
std::vector<DecayFit> fit_history_files(const std::string& history_path,
                                        const std::string& out_dir,
                                        const std::string& partitions_dir = "",
                                        const FitConfig& fit = {},
                                        std::uint64_t run_seed = 0);

// Curve table from a history and previously written fit files.
void export_curves_files(const std::string& history_path, const std::string& fits_dir,
                         const std::string& partitions_dir, std::ostream& out);

// Unweighted report, then the weighted one when a weights file is given.
// Predictions may be CoNLL or exchange JSONL.
void score_files(const std::string& gold_path, const std::string& predictions_path,
                 const std::string& weights_path, std::ostream& out);

ClassWeights load_class_weights(const std::string& path);

struct SelectRequest {
  std::string strategy;
  std::string pool_path;          // inputs; labels ignored
  std::string train_path;         // current training set (for group masses)
  std::string validation_path;    // part of D_A for decay strategies
  std::string history_path;       // decay strategies
  std::string partitions_dir;     // decay strategies
  std::string predictions_path;   // uncertainty strategies
  std::string lagged_predictions_path;  // uncertainty-decay strategies
  std::optional<std::string> embeddings_path;
  std::size_t budget = 1000;
  std::size_t batch_index = 1;    // selection batch counter for alternation
  std::size_t t_factor = 100;
  std::optional<double> epsilon;
  SelectionMode mode = SelectionMode::kSentence;
  std::uint64_t seed = 0;
};

// One selection step outside a simulation; returns pool sentence ids.
std::vector<std::size_t> select_once(const SelectRequest& request);

}  // namespace edg
