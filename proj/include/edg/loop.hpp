#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edg/decay.hpp"
#include "edg/partition.hpp"
#include "edg/prediction.hpp"
#include "edg/select.hpp"
#include "edg/simlab.hpp"
#include "edg/strategies.hpp"

namespace edg {

struct LoopConfig {
  std::size_t history_start_tokens = 1000;
  std::size_t history_batch_tokens = 500;
  std::size_t initial_tokens = 3000;       // size of the first (random) batch
  std::size_t selection_batch_tokens = 1000;
  std::size_t burn_in_batches = 1;         // t_b, counting the first batch
  std::size_t total_batches = 11;          // t_max
  std::size_t uncertainty_lag_tokens = 0;  // 0: twice the selection batch
  std::optional<double> epsilon;           // default scales with |D_A|
  SelectionMode mode = SelectionMode::kSentence;
  std::size_t fass_t_factor = 100;
  std::size_t ensemble_k = 10;
  FitConfig fit;
  std::optional<ClassWeights> class_weights;
  std::uint64_t seed = 0;
  bool parallel = true;

  std::size_t lag_tokens() const {
    return uncertainty_lag_tokens ? uncertainty_lag_tokens : 2 * selection_batch_tokens;
  }
  void validate() const;  // throws ConfigError
};

struct PredictRequest {
  std::size_t checkpoint = 0;
  bool logprobs = false;
  std::size_t ensemble = 0;  // number of passes, 0 for none
  std::uint64_t seed = 0;
};

struct PredictTarget {
  std::string name;
  const Dataset* inputs = nullptr;
  bool uncertainty = false;  // logprobs / ensemble requested for this target
};

// The black-box boundary: retrain on labeled data, predict each target.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::vector<PredictionSet> train_and_predict(const Dataset& train,
                                                       std::span<const PredictTarget> targets,
                                                       const PredictRequest& request) = 0;
  virtual bool provides_logprobs() const = 0;
  virtual bool provides_ensemble() const = 0;
  virtual std::string describe() const = 0;
};

class BuiltinPredictor : public Predictor {
 public:
  BuiltinPredictor(std::vector<std::string> tagset, double alpha = 1.0)
      : tagset_(std::move(tagset)), alpha_(alpha) {}
  std::vector<PredictionSet> train_and_predict(const Dataset& train,
                                               std::span<const PredictTarget> targets,
                                               const PredictRequest& request) override;
  bool provides_logprobs() const override { return true; }
  bool provides_ensemble() const override { return true; }
  std::string describe() const override;

 private:
  std::vector<std::string> tagset_;
  double alpha_;
};

// Runs a shell command per checkpoint. The command sees a directory holding
// train.conll, one <target>.conll per target and request.json, and must write
// <target>.pred.jsonl for every target. Placeholders {dir}, {train} and
// {request} are replaced with paths.
class ExternalPredictor : public Predictor {
 public:
  ExternalPredictor(std::string command, std::string workdir, bool logprobs, bool ensemble)
      : command_(std::move(command)),
        workdir_(std::move(workdir)),
        logprobs_(logprobs),
        ensemble_(ensemble) {}
  std::vector<PredictionSet> train_and_predict(const Dataset& train,
                                               std::span<const PredictTarget> targets,
                                               const PredictRequest& request) override;
  bool provides_logprobs() const override { return logprobs_; }
  bool provides_ensemble() const override { return ensemble_; }
  std::string describe() const override { return "external: " + command_; }

 private:
  std::string command_;
  std::string workdir_;
  bool logprobs_;
  bool ensemble_;
};

// Serves one request directory written by ExternalPredictor with the
// built-in tagger (the `tag` subcommand).
void serve_request_with_builtin(const std::string& request_path);

struct PartitionInfo {
  std::string name;
  Partition partition;
};

struct BatchRecord {
  std::size_t index = 0;                 // 1-based
  std::string source;                    // "random" or the strategy name
  std::vector<std::size_t> sentences;    // pool sentence ids, pick order
  std::size_t tokens = 0;
  bool exhausted = false;
  bool fallback = false;                 // lagged uncertainty missing; raw scores used
  std::size_t numeric_faults = 0;
};

struct CheckpointRecord {
  std::size_t index = 0;
  std::size_t batch = 0;
  std::size_t train_tokens = 0;
  std::vector<std::size_t> added;        // pool sentence ids since the previous checkpoint
  std::vector<GroupErrorRecord> groups;  // one per partition, validation errors
  std::map<std::string, double> f1;      // evaluation set name -> micro-F1
};

struct RunHistory {
  std::string strategy;
  std::vector<std::string> partitions;
  std::vector<CheckpointRecord> checkpoints;
  std::vector<BatchRecord> batches;

  // Per-partition GroupErrorRecords over all checkpoints.
  std::vector<GroupErrorRecord> records(std::size_t partition) const;
};

// Line-delimited JSON: a header line, then one line per checkpoint and per
// batch, in execution order.
void write_run_history(const RunHistory& history, std::ostream& out);
RunHistory read_run_history(std::istream& in);

// Everything a resumed run needs besides the history itself.
struct CheckpointArtifacts {
  std::optional<PredictionSet> validation;      // kept for the validation-free extension
  std::optional<UncertaintySnapshot> uncertainty;
};

struct LoopData {
  const Dataset* pool = nullptr;        // labels revealed when selected
  const Dataset* validation = nullptr;  // may be unlabeled
  std::vector<PredictTarget> evaluations;  // labeled sets scored at every checkpoint
  const EmbeddingTable* embeddings = nullptr;
};

struct LoopCallbacks {
  // Called after each checkpoint and after each batch is chosen.
  std::function<void(const CheckpointRecord&, const CheckpointArtifacts&)> on_checkpoint;
  std::function<void(const BatchRecord&)> on_batch;
};

struct ResumeState {
  RunHistory history;
  std::vector<CheckpointArtifacts> artifacts;  // aligned with history.checkpoints
};

struct LoopResult {
  RunHistory history;
  std::vector<DecayFit> final_fits;  // fitted on the whole history, one per partition
};

// Restart seed of the whole-history fit for one partition of a run.
std::uint64_t final_fit_seed(std::uint64_t run_seed, std::size_t partition);

LoopResult run_loop(const LoopConfig& config, StrategyKind strategy,
                    std::span<const PartitionInfo> partitions, Predictor& predictor,
                    const LoopData& data, const LoopCallbacks& callbacks = {},
                    const ResumeState* resume = nullptr);

}  // namespace edg
