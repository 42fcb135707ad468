#include "edg/loop.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>

#include "json.hpp"

#include "edg/error.hpp"
#include "edg/eval.hpp"
#include "edg/rng.hpp"

namespace edg {

namespace fs = std::filesystem;
using nlohmann::json;

void LoopConfig::validate() const {
  if (burn_in_batches < 1) throw ConfigError("burn_in_batches must be at least 1");
  if (total_batches < burn_in_batches)
    throw ConfigError("total_batches must be at least burn_in_batches");
  if (history_batch_tokens == 0 || selection_batch_tokens == 0 || initial_tokens == 0)
    throw ConfigError("batch sizes must be positive");
  if (history_batch_tokens > selection_batch_tokens)
    throw ConfigError("history_batch_tokens must not exceed selection_batch_tokens");
  if (history_start_tokens > initial_tokens)
    throw ConfigError("history_start_tokens must not exceed initial_tokens");
  if (fass_t_factor < 1) throw ConfigError("fass_t_factor must be at least 1");
  if (ensemble_k == 1) throw ConfigError("ensemble_k must be 0 or at least 2");
  if (epsilon && !(*epsilon > 0.0)) throw ConfigError("epsilon must be positive");
}

std::vector<PredictionSet> BuiltinPredictor::train_and_predict(
    const Dataset& train, std::span<const PredictTarget> targets, const PredictRequest& request) {
  const auto tagger = ReferenceTagger::train(train, tagset_, alpha_);
  std::vector<ReferenceTagger> ensemble;
  if (request.ensemble >= 2)
    ensemble = train_bootstrap_ensemble(train, tagset_, alpha_, request.ensemble, request.seed);
  std::vector<PredictionSet> out;
  for (const auto& t : targets) {
    const bool extra = t.uncertainty;
    out.push_back(tagger_predict(tagger, *t.inputs, extra && request.logprobs,
                                 extra && !ensemble.empty() ? &ensemble : nullptr));
  }
  return out;
}

std::string BuiltinPredictor::describe() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "builtin count tagger (alpha=%g)", alpha_);
  return buf;
}

namespace {

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos;
       pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
  return s;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  return out + "'";
}

}  // namespace

std::vector<PredictionSet> ExternalPredictor::train_and_predict(
    const Dataset& train, std::span<const PredictTarget> targets, const PredictRequest& request) {
  const fs::path dir = fs::path(workdir_) / ("checkpoint_" + std::to_string(request.checkpoint));
  fs::create_directories(dir);
  write_conll_file(train, (dir / "train.conll").string());
  json req;
  req["train"] = "train.conll";
  req["logprobs"] = request.logprobs;
  req["ensemble"] = request.ensemble;
  req["seed"] = request.seed;
  req["targets"] = json::array();
  for (const auto& t : targets) {
    write_conll_file(strip_labels(*t.inputs), (dir / (t.name + ".conll")).string());
    req["targets"].push_back({{"name", t.name},
                              {"inputs", t.name + ".conll"},
                              {"output", t.name + ".pred.jsonl"},
                              {"uncertainty", t.uncertainty}});
  }
  std::ofstream((dir / "request.json").string()) << req.dump(2) << '\n';

  std::string cmd = command_;
  cmd = replace_all(cmd, "{dir}", shell_quote(dir.string()));
  cmd = replace_all(cmd, "{train}", shell_quote((dir / "train.conll").string()));
  cmd = replace_all(cmd, "{request}", shell_quote((dir / "request.json").string()));
  const int status = std::system(cmd.c_str());
  if (status != 0)
    throw ExternalPredictorError("predictor command failed with status " +
                                 std::to_string(status) + ": " + cmd);

  std::vector<PredictionSet> out;
  for (const auto& t : targets) {
    const auto path = dir / (t.name + ".pred.jsonl");
    if (!fs::exists(path))
      throw ExternalPredictorError("predictor did not write " + path.string());
    auto set = read_predictions_file(path.string());
    check_alignment(set, *t.inputs);
    out.push_back(std::move(set));
  }
  return out;
}

void serve_request_with_builtin(const std::string& request_path) {
  std::ifstream in(request_path);
  if (!in) throw ParameterError("cannot open request " + request_path);
  json req;
  try {
    in >> req;
  } catch (const json::exception& e) {
    throw FormatError(std::string("request is not valid JSON: ") + e.what());
  }
  const fs::path dir = fs::path(request_path).parent_path();
  const auto train = parse_conll_file((dir / req.at("train").get<std::string>()).string()).dataset;
  std::vector<Dataset> inputs;
  for (const auto& t : req.at("targets"))
    inputs.push_back(parse_conll_file((dir / t.at("inputs").get<std::string>()).string(),
                                      DatasetRole::kPool)
                         .dataset);
  std::vector<PredictTarget> targets;
  std::size_t i = 0;
  for (const auto& t : req.at("targets"))
    targets.push_back({t.at("name").get<std::string>(), &inputs[i++],
                       t.value("uncertainty", false)});
  PredictRequest request;
  request.logprobs = req.value("logprobs", false);
  request.ensemble = req.value("ensemble", std::size_t{0});
  request.seed = req.value("seed", std::uint64_t{0});
  BuiltinPredictor predictor(tagset_of({&train}));
  const auto sets = predictor.train_and_predict(train, targets, request);
  i = 0;
  for (const auto& t : req.at("targets"))
    write_predictions_file(sets[i++], (dir / t.at("output").get<std::string>()).string());
}

std::vector<GroupErrorRecord> RunHistory::records(std::size_t partition) const {
  std::vector<GroupErrorRecord> out;
  for (const auto& c : checkpoints) out.push_back(c.groups.at(partition));
  return out;
}

void write_run_history(const RunHistory& history, std::ostream& out) {
  out << json{{"type", "run"}, {"strategy", history.strategy}, {"partitions", history.partitions}}
             .dump()
      << '\n';
  // Batches precede the checkpoints they produced.
  std::size_t c = 0;
  auto flush_checkpoints = [&](std::size_t up_to_batch) {
    for (; c < history.checkpoints.size() && history.checkpoints[c].batch <= up_to_batch; ++c) {
      const auto& ck = history.checkpoints[c];
      json groups = json::array();
      for (std::size_t p = 0; p < ck.groups.size(); ++p) {
        const auto& g = ck.groups[p];
        groups.push_back({{"partition", p < history.partitions.size() ? history.partitions[p] : ""},
                          {"train_mass", g.train_mass},
                          {"val_error", g.val_error},
                          {"val_mass", g.val_mass},
                          {"zero_mass", g.zero_mass}});
      }
      out << json{{"type", "checkpoint"},
                  {"index", ck.index},
                  {"batch", ck.batch},
                  {"train_tokens", ck.train_tokens},
                  {"added", ck.added},
                  {"f1", ck.f1},
                  {"groups", groups}}
                 .dump()
          << '\n';
    }
  };
  for (const auto& b : history.batches) {
    out << json{{"type", "batch"},
                {"index", b.index},
                {"source", b.source},
                {"sentences", b.sentences},
                {"tokens", b.tokens},
                {"exhausted", b.exhausted},
                {"fallback", b.fallback},
                {"numeric_faults", b.numeric_faults}}
               .dump()
        << '\n';
    flush_checkpoints(b.index);
  }
  flush_checkpoints(static_cast<std::size_t>(-1));
}

RunHistory read_run_history(std::istream& in) {
  RunHistory h;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "run") {
        h.strategy = j.value("strategy", "");
        h.partitions = j.value("partitions", std::vector<std::string>{});
      } else if (type == "batch") {
        BatchRecord b;
        b.index = j.at("index");
        b.source = j.value("source", "");
        b.sentences = j.at("sentences").get<std::vector<std::size_t>>();
        b.tokens = j.value("tokens", std::size_t{0});
        b.exhausted = j.value("exhausted", false);
        b.fallback = j.value("fallback", false);
        b.numeric_faults = j.value("numeric_faults", std::size_t{0});
        h.batches.push_back(std::move(b));
      } else if (type == "checkpoint") {
        CheckpointRecord c;
        c.index = j.at("index");
        c.batch = j.value("batch", std::size_t{0});
        c.train_tokens = j.value("train_tokens", std::size_t{0});
        c.added = j.value("added", std::vector<std::size_t>{});
        c.f1 = j.value("f1", std::map<std::string, double>{});
        for (const auto& g : j.at("groups")) {
          GroupErrorRecord r;
          r.checkpoint = c.index;
          r.train_mass = g.at("train_mass").get<std::vector<double>>();
          r.val_error = g.at("val_error").get<std::vector<double>>();
          r.val_mass = g.at("val_mass").get<std::vector<double>>();
          if (g.contains("zero_mass"))
            r.zero_mass = g.at("zero_mass").get<std::vector<bool>>();
          else
            for (double m : r.val_mass) r.zero_mass.push_back(m <= 0.0);
          if (r.train_mass.size() != r.val_error.size() ||
              r.val_mass.size() != r.val_error.size() ||
              r.zero_mass.size() != r.val_error.size())
            throw FormatError("group arrays differ in length", line_no);
          c.groups.push_back(std::move(r));
        }
        h.checkpoints.push_back(std::move(c));
      } else {
        throw FormatError("unknown record type '" + type + "'", line_no);
      }
    } catch (const json::exception& e) {
      throw FormatError(std::string("bad history record: ") + e.what(), line_no);
    }
  }
  return h;
}

namespace {

class LoopRunner {
 public:
  LoopRunner(const LoopConfig& config, StrategyKind strategy,
             std::span<const PartitionInfo> partitions, Predictor& predictor,
             const LoopData& data, const LoopCallbacks& callbacks)
      : config_(config),
        strategy_(strategy),
        caps_(strategy_caps(strategy)),
        partitions_(partitions),
        predictor_(predictor),
        data_(data),
        callbacks_(callbacks),
        pool_(*data.pool),
        val_(*data.validation) {
    setup();
  }

  void resume(const ResumeState& state);
  LoopResult run();

 private:
  void setup();
  void add_sentence(std::size_t pos);
  void checkpoint(std::size_t batch_index, bool batch_end);
  Batch choose(std::size_t batch_index, bool& fallback);
  Batch choose_edg(std::size_t batch_index);
  void execute(BatchRecord record, std::vector<std::size_t> positions, std::size_t start,
               bool announce);
  std::vector<std::size_t> candidates() const;
  PoolIndex pool_index() const { return {lengths_, documents_}; }
  const UncertaintySnapshot* lagged_snapshot() const;
  std::vector<double> uncertainty_scores(const PredictionSet& set) const;

  const LoopConfig& config_;
  StrategyKind strategy_;
  StrategyCaps caps_;
  std::span<const PartitionInfo> partitions_;
  Predictor& predictor_;
  const LoopData& data_;
  const LoopCallbacks& callbacks_;
  const Dataset& pool_;
  const Dataset& val_;
  bool val_labeled_ = false;

  std::vector<std::size_t> lengths_;
  std::vector<std::optional<std::size_t>> documents_;
  std::unordered_map<std::size_t, std::size_t> position_of_;
  std::vector<ProfileTable> pool_profiles_;
  std::vector<UnitAssignment> val_units_;
  std::vector<MassVector> da_mass_;
  std::size_t da_tokens_ = 0;
  std::vector<double> embeddings_;
  std::size_t dim_ = 0;

  std::vector<bool> in_train_;
  std::vector<std::size_t> train_order_;
  std::size_t train_tokens_ = 0;
  std::vector<MassVector> train_mass_;
  std::vector<std::size_t> pending_added_;
  std::size_t next_threshold_ = 0;

  RunHistory history_;
  std::vector<PredictionSet> val_predictions_;
  std::vector<UncertaintySnapshot> snapshots_;
};

void LoopRunner::setup() {
  config_.validate();
  if (!data_.pool || !data_.validation) throw ParameterError("run_loop: pool and validation required");
  if (!pool_.labeled()) throw ParameterError("run_loop: simulation pool must carry labels");
  if (pool_.sentences.empty()) throw ParameterError("run_loop: empty pool");
  val_labeled_ = !val_.sentences.empty() && val_.labeled();
  check_capabilities(strategy_, val_labeled_, predictor_.provides_logprobs(),
                     predictor_.provides_ensemble());
  if (caps_.decay_fit && partitions_.empty())
    throw ConfigError(std::string("strategy ") + strategy_name(strategy_) +
                      " needs at least one partition");
  if (caps_.diversity && !data_.embeddings)
    throw ConfigError(std::string("strategy ") + strategy_name(strategy_) +
                      " needs word embeddings");

  const std::size_t n = pool_.sentences.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = pool_.sentences[i];
    lengths_.push_back(s.size());
    documents_.push_back(s.doc_id);
    if (!position_of_.emplace(s.id, i).second)
      throw ParameterError("pool sentence ids are not unique");
  }
  da_tokens_ = pool_.token_count() + val_.token_count();
  for (const auto& info : partitions_) {
    pool_profiles_.push_back(build_profiles(info.partition, pool_, data_.embeddings));
    val_units_.push_back(assign_units(info.partition, val_, data_.embeddings));
    MassVector da(info.partition.group_count());
    for (std::size_t i = 0; i < n; ++i) da.add(pool_profiles_.back().row(i));
    const auto vm = group_mass(info.partition, val_, data_.embeddings);
    for (std::size_t g = 0; g < da.masses.size(); ++g) da.masses[g] += vm.masses[g];
    da_mass_.push_back(std::move(da));
    train_mass_.emplace_back(info.partition.group_count());
    history_.partitions.push_back(info.name);
  }
  if (caps_.diversity) {
    dim_ = data_.embeddings->dim();
    embeddings_.reserve(n * dim_);
    for (const auto& s : pool_.sentences) {
      const auto e = sentence_embedding(s, *data_.embeddings);
      embeddings_.insert(embeddings_.end(), e.begin(), e.end());
    }
  }
  in_train_.assign(n, false);
  history_.strategy = strategy_name(strategy_);
  next_threshold_ = config_.history_start_tokens;
}

void LoopRunner::add_sentence(std::size_t pos) {
  if (in_train_[pos]) throw ParameterError("sentence selected twice");
  in_train_[pos] = true;
  train_order_.push_back(pos);
  train_tokens_ += lengths_[pos];
  for (std::size_t p = 0; p < partitions_.size(); ++p)
    train_mass_[p].add(pool_profiles_[p].row(pos));
  pending_added_.push_back(pool_.sentences[pos].id);
}

std::vector<double> LoopRunner::uncertainty_scores(const PredictionSet& set) const {
  std::vector<double> out(set.records.size());
  const bool bald = caps_.ensemble;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = bald ? score_bald(set.records[i]) : score_us(set.records[i], set.tagset.size());
  return out;
}

void LoopRunner::checkpoint(std::size_t batch_index, bool batch_end) {
  Dataset train;
  train.role = DatasetRole::kTrain;
  train.label_inventory = pool_.label_inventory;
  train.sentences.reserve(train_order_.size());
  for (std::size_t pos : train_order_) train.sentences.push_back(pool_.sentences[pos]);

  std::vector<PredictTarget> targets;
  targets.push_back({"validation", &val_, false});
  for (const auto& e : data_.evaluations) targets.push_back({e.name, e.inputs, false});
  const bool want_pool = batch_end && caps_.pool_predictions;
  if (want_pool) targets.push_back({"pool", &pool_, true});

  const std::size_t index = history_.checkpoints.size();
  PredictRequest request;
  request.checkpoint = index;
  request.logprobs = caps_.logprobs;
  request.ensemble = caps_.ensemble ? config_.ensemble_k : 0;
  request.seed = mix_seed(config_.seed, 0x434b50 + index);
  auto preds = predictor_.train_and_predict(train, targets, request);
  if (preds.size() != targets.size())
    throw ExternalPredictorError("predictor returned the wrong number of prediction sets");
  for (std::size_t i = 0; i < targets.size(); ++i) check_alignment(preds[i], *targets[i].inputs);

  CheckpointRecord rec;
  rec.index = index;
  rec.batch = batch_index;
  rec.train_tokens = train_tokens_;
  rec.added = std::move(pending_added_);
  pending_added_.clear();
  const ClassWeights* weights = config_.class_weights ? &*config_.class_weights : nullptr;
  for (std::size_t p = 0; p < partitions_.size(); ++p) {
    GroupErrorRecord g;
    g.checkpoint = index;
    g.train_mass = train_mass_[p].masses;
    const std::size_t groups = partitions_[p].partition.group_count();
    if (val_labeled_) {
      auto errors = group_error(partitions_[p].partition, val_units_[p], val_, preds[0], weights);
      g.val_error = std::move(errors.error);
      g.val_mass = std::move(errors.mass);
      g.zero_mass = std::move(errors.zero_mass);
    } else {
      g.val_error.assign(groups, 0.0);
      g.val_mass.assign(groups, 0.0);
      g.zero_mass.assign(groups, true);
    }
    rec.groups.push_back(std::move(g));
  }
  if (val_labeled_) {
    rec.f1["validation"] = micro_f1(val_, preds[0]).f1;
    if (weights) rec.f1["validation_weighted"] = micro_f1(val_, preds[0], weights).f1;
  }
  for (std::size_t i = 0; i < data_.evaluations.size(); ++i) {
    const auto& e = data_.evaluations[i];
    rec.f1[e.name] = micro_f1(*e.inputs, preds[1 + i]).f1;
    if (weights) rec.f1[e.name + "_weighted"] = micro_f1(*e.inputs, preds[1 + i], weights).f1;
  }

  CheckpointArtifacts artifacts;
  if (strategy_ == StrategyKind::kEdgExt1) {
    val_predictions_.push_back(preds[0]);
    artifacts.validation = preds[0];
  }
  if (want_pool) {
    UncertaintySnapshot snap{train_tokens_, uncertainty_scores(preds.back())};
    snapshots_.push_back(snap);
    artifacts.uncertainty = std::move(snap);
  }
  history_.checkpoints.push_back(rec);
  if (callbacks_.on_checkpoint) callbacks_.on_checkpoint(rec, artifacts);
}

std::vector<std::size_t> LoopRunner::candidates() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < in_train_.size(); ++i)
    if (!in_train_[i]) out.push_back(i);
  return out;
}

const UncertaintySnapshot* LoopRunner::lagged_snapshot() const {
  const std::size_t lag = config_.lag_tokens();
  const UncertaintySnapshot* best = nullptr;
  for (const auto& s : snapshots_)
    if (s.checkpoint_tokens + lag <= train_tokens_) best = &s;
  return best;
}

Batch LoopRunner::choose_edg(std::size_t batch_index) {
  const double eps = config_.epsilon ? *config_.epsilon : default_epsilon(da_tokens_);
  SelectionState state(eps, config_.selection_batch_tokens);
  for (std::size_t p = 0; p < partitions_.size(); ++p) {
    std::vector<GroupErrorRecord> records;
    if (strategy_ == StrategyKind::kEdgExt1) {
      std::vector<std::vector<double>> masses;
      for (const auto& c : history_.checkpoints) masses.push_back(c.groups[p].train_mass);
      records = ext1_group_errors(partitions_[p].partition, val_units_[p], val_,
                                  val_predictions_, masses);
    } else {
      records = history_.records(p);
    }
    FitConfig fc = config_.fit;
    fc.seed = mix_seed(config_.seed, 0x464954 + batch_index * 131 + p);
    const auto fit = fit_decay(records, default_weights(records), fc);
    state.add_partition(fit.params, train_mass_[p], da_mass_[p]);
  }
  const auto cands = candidates();
  return select_batch(state, pool_profiles_, pool_index(), cands, config_.mode, config_.parallel);
}

Batch LoopRunner::choose(std::size_t batch_index, bool& fallback) {
  fallback = false;
  const auto cands = candidates();
  if (cands.empty()) {
    Batch b;
    b.exhausted = true;
    return b;
  }
  const std::size_t budget =
      batch_index == 1 ? config_.initial_tokens : config_.selection_batch_tokens;
  const std::uint64_t batch_seed = mix_seed(config_.seed, 0x42415443 + batch_index);
  if (batch_index <= config_.burn_in_batches || strategy_ == StrategyKind::kRandom) {
    const auto scores = score_random(batch_seed, pool_.sentences.size());
    return select_top(scores, pool_index(), cands, budget, config_.mode);
  }
  const std::size_t k = batch_index - config_.burn_in_batches;
  FassConfig fass;
  fass.t_factor = config_.fass_t_factor;
  fass.seed = batch_seed;
  fass.parallel = config_.parallel;

  auto current = [&]() -> const std::vector<double>& {
    if (snapshots_.empty()) throw ParameterError("no uncertainty snapshot available");
    return snapshots_.back().scores;
  };
  auto decayed = [&]() -> std::vector<double> {
    if (alternation_policy(k) == ScoreSource::kRawUncertainty) return current();
    const auto* lagged = lagged_snapshot();
    if (!lagged) {
      fallback = true;
      return current();
    }
    return score_uncertainty_decay(snapshots_.back(), *lagged);
  };

  switch (strategy_) {
    case StrategyKind::kRandom:
      break;
    case StrategyKind::kDiv: {
      fass.filter = FassFilter::kRandom;
      const std::vector<double> flat(pool_.sentences.size(), 0.0);
      return fass_select(flat, embeddings_, dim_, lengths_, cands, budget, fass);
    }
    case StrategyKind::kUs:
    case StrategyKind::kBald:
      return select_top(current(), pool_index(), cands, budget, config_.mode);
    case StrategyKind::kUsDiv:
      return fass_select(current(), embeddings_, dim_, lengths_, cands, budget, fass);
    case StrategyKind::kUsEdgExt2:
    case StrategyKind::kBaldEdgExt2:
      return select_top(decayed(), pool_index(), cands, budget, config_.mode);
    case StrategyKind::kUsDivEdgExt2: {
      const auto scores = decayed();
      return fass_select(scores, embeddings_, dim_, lengths_, cands, budget, fass);
    }
    case StrategyKind::kEdg:
    case StrategyKind::kEdgExt1:
      return choose_edg(batch_index);
  }
  throw ParameterError("unhandled strategy");
}

void LoopRunner::execute(BatchRecord record, std::vector<std::size_t> positions,
                         std::size_t start, bool announce) {
  if (announce) {
    history_.batches.push_back(record);
    if (callbacks_.on_batch) callbacks_.on_batch(record);
  }
  for (std::size_t i = start; i < positions.size(); ++i) {
    add_sentence(positions[i]);
    if (i + 1 < positions.size() && train_tokens_ >= next_threshold_) {
      checkpoint(record.index, false);
      next_threshold_ = train_tokens_ + config_.history_batch_tokens;
    }
  }
  checkpoint(record.index, true);
  next_threshold_ = train_tokens_ + config_.history_batch_tokens;
}

void LoopRunner::resume(const ResumeState& state) {
  if (state.history.strategy != history_.strategy)
    throw ConfigError("resume: history was produced by strategy " + state.history.strategy);
  if (state.history.partitions != history_.partitions)
    throw ConfigError("resume: partition set differs from the recorded run");
  if (state.artifacts.size() != state.history.checkpoints.size())
    throw ParameterError("resume: artifacts do not match checkpoints");
  auto position = [&](std::size_t id) {
    auto it = position_of_.find(id);
    if (it == position_of_.end())
      throw ParameterError("resume: unknown pool sentence id " + std::to_string(id));
    return it->second;
  };
  history_.batches = state.history.batches;
  for (std::size_t c = 0; c < state.history.checkpoints.size(); ++c) {
    const auto& ck = state.history.checkpoints[c];
    for (std::size_t id : ck.added) add_sentence(position(id));
    pending_added_.clear();
    if (ck.train_tokens != train_tokens_)
      throw ParameterError("resume: replayed training size disagrees with checkpoint " +
                           std::to_string(c));
    history_.checkpoints.push_back(ck);
    const auto& art = state.artifacts[c];
    if (art.validation) val_predictions_.push_back(*art.validation);
    if (art.uncertainty) snapshots_.push_back(*art.uncertainty);
    next_threshold_ = train_tokens_ + config_.history_batch_tokens;
  }
  if (strategy_ == StrategyKind::kEdgExt1 &&
      val_predictions_.size() != history_.checkpoints.size())
    throw ParameterError("resume: validation predictions missing for some checkpoints");
}

LoopResult LoopRunner::run() {
  // Finish a batch that was interrupted between checkpoints.
  if (!history_.batches.empty()) {
    const auto& last = history_.batches.back();
    std::vector<std::size_t> positions;
    std::size_t start = 0;
    for (std::size_t id : last.sentences) {
      const std::size_t pos = position_of_.at(id);
      if (in_train_[pos]) ++start;
      positions.push_back(pos);
    }
    const bool ended = !history_.checkpoints.empty() &&
                       history_.checkpoints.back().batch == last.index && start == positions.size();
    if (!ended) execute(last, positions, start, false);
  }
  for (std::size_t t = history_.batches.size() + 1; t <= config_.total_batches; ++t) {
    bool fallback = false;
    const Batch batch = choose(t, fallback);
    if (batch.sentences.empty()) break;
    BatchRecord rec;
    rec.index = t;
    rec.source = t <= config_.burn_in_batches ? "random" : strategy_name(strategy_);
    for (std::size_t pos : batch.sentences) rec.sentences.push_back(pool_.sentences[pos].id);
    rec.tokens = batch.tokens;
    rec.exhausted = batch.exhausted;
    rec.fallback = fallback;
    rec.numeric_faults = batch.numeric_faults;
    execute(rec, batch.sentences, 0, true);
    if (batch.exhausted) break;
  }

  LoopResult result;
  result.history = history_;
  if (val_labeled_ && history_.checkpoints.size() >= 2) {
    for (std::size_t p = 0; p < partitions_.size(); ++p) {
      const auto records = history_.records(p);
      FitConfig fc = config_.fit;
      fc.seed = final_fit_seed(config_.seed, p);
      try {
        result.final_fits.push_back(fit_decay(records, default_weights(records), fc));
      } catch (const ParameterError&) {
        result.final_fits.clear();
        break;
      }
    }
  }
  return result;
}

}  // namespace

std::uint64_t final_fit_seed(std::uint64_t run_seed, std::size_t partition) {
  return mix_seed(run_seed, 0x46494e + partition);
}

LoopResult run_loop(const LoopConfig& config, StrategyKind strategy,
                    std::span<const PartitionInfo> partitions, Predictor& predictor,
                    const LoopData& data, const LoopCallbacks& callbacks,
                    const ResumeState* resume) {
  LoopRunner runner(config, strategy, partitions, predictor, data, callbacks);
  if (resume) runner.resume(*resume);
  return runner.run();
}

}  // namespace edg
