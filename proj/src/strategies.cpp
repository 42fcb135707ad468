#include "edg/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <queue>

#include "edg/error.hpp"
#include "edg/kernels.hpp"
#include "edg/rng.hpp"

namespace edg {

namespace {

struct StrategyEntry {
  StrategyKind kind;
  const char* name;
};

constexpr StrategyEntry kStrategies[] = {
    {StrategyKind::kRandom, "rnd"},
    {StrategyKind::kDiv, "div"},
    {StrategyKind::kUs, "us"},
    {StrategyKind::kUsDiv, "us_div"},
    {StrategyKind::kBald, "bald"},
    {StrategyKind::kEdg, "edg"},
    {StrategyKind::kEdgExt1, "edg_ext1"},
    {StrategyKind::kUsEdgExt2, "us_edg_ext2"},
    {StrategyKind::kUsDivEdgExt2, "us_div_edg_ext2"},
    {StrategyKind::kBaldEdgExt2, "bald_edg_ext2"},
};

}  // namespace

const char* strategy_name(StrategyKind kind) {
  for (const auto& e : kStrategies)
    if (e.kind == kind) return e.name;
  return "?";
}

StrategyKind parse_strategy(const std::string& name) {
  for (const auto& e : kStrategies)
    if (name == e.name) return e.kind;
  throw ConfigError("unknown strategy '" + name + "'");
}

std::vector<StrategyKind> all_strategies() {
  std::vector<StrategyKind> out;
  for (const auto& e : kStrategies) out.push_back(e.kind);
  return out;
}

StrategyCaps strategy_caps(StrategyKind kind) {
  StrategyCaps c;
  switch (kind) {
    case StrategyKind::kRandom:
      break;
    case StrategyKind::kDiv:
      c.diversity = true;
      break;
    case StrategyKind::kUs:
      c.logprobs = c.pool_predictions = true;
      break;
    case StrategyKind::kUsDiv:
      c.logprobs = c.pool_predictions = c.diversity = true;
      break;
    case StrategyKind::kBald:
      c.ensemble = c.pool_predictions = true;
      break;
    case StrategyKind::kEdg:
      c.validation_labels = c.decay_fit = true;
      break;
    case StrategyKind::kEdgExt1:
      c.decay_fit = true;
      break;
    case StrategyKind::kUsEdgExt2:
      c.logprobs = c.pool_predictions = c.uncertainty_decay = true;
      break;
    case StrategyKind::kUsDivEdgExt2:
      c.logprobs = c.pool_predictions = c.uncertainty_decay = c.diversity = true;
      break;
    case StrategyKind::kBaldEdgExt2:
      c.ensemble = c.pool_predictions = c.uncertainty_decay = true;
      break;
  }
  return c;
}

void check_capabilities(StrategyKind kind, bool have_validation_labels, bool have_logprobs,
                        bool have_ensemble) {
  const auto caps = strategy_caps(kind);
  const std::string name = strategy_name(kind);
  if (caps.validation_labels && !have_validation_labels)
    throw ConfigError("strategy " + name + " requires a labeled validation set");
  if (caps.logprobs && !have_logprobs)
    throw ConfigError("strategy " + name +
                      " requires per-token probabilities from the predictor");
  if (caps.ensemble && !have_ensemble)
    throw ConfigError("strategy " + name + " requires ensemble predictions");
}

double score_us(const PredictionRecord& record, std::size_t tagset_size) {
  if (!record.logprobs)
    throw CapabilityError("black-box predictor provides no probabilities (sentence " +
                          std::to_string(record.sentence_id) + ")");
  const auto& lp = *record.logprobs;
  const std::size_t n = record.size();
  if (n == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t l = 0; l < n; ++l) {
    const double* row = lp.data() + l * tagset_size;
    sum += *std::max_element(row, row + tagset_size);
  }
  return -sum / static_cast<double>(n);
}

double score_bald(const PredictionRecord& record) {
  if (!record.ensemble || record.ensemble->empty())
    throw CapabilityError("predictor provides no ensemble passes (sentence " +
                          std::to_string(record.sentence_id) + ")");
  const auto& passes = *record.ensemble;
  const std::size_t n = record.size();
  if (n == 0) return 0.0;
  const double k = static_cast<double>(passes.size());
  double sum = 0.0;
  std::map<std::string_view, std::size_t> counts;
  for (std::size_t l = 0; l < n; ++l) {
    counts.clear();
    for (const auto& pass : passes) ++counts[pass.at(l)];
    std::size_t mode_count = 0;
    for (const auto& [tag, count] : counts)  // ordered: first maximum is smallest tag
      if (count > mode_count) mode_count = count;
    sum += (k - static_cast<double>(mode_count)) / k;
  }
  return sum / static_cast<double>(n);
}

std::vector<double> score_uncertainty_decay(const UncertaintySnapshot& current,
                                            const UncertaintySnapshot& lagged) {
  if (current.scores.size() != lagged.scores.size())
    throw ParameterError("uncertainty snapshots cover different pools");
  std::vector<double> out(current.scores.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u_m = current.scores[i];
    const double u_f = lagged.scores[i];
    out[i] = std::min(std::max(u_f - u_m, 0.0), u_m);
  }
  return out;
}

ScoreSource alternation_policy(std::size_t batch_index) {
  return batch_index % 2 == 1 ? ScoreSource::kDecayScore : ScoreSource::kRawUncertainty;
}

std::vector<double> score_random(std::uint64_t seed, std::size_t n) {
  auto rng = make_rng(seed, 0x524e44);
  std::vector<double> out(n);
  for (auto& v : out) v = uniform01(rng);
  return out;
}

Batch select_top(std::span<const double> scores, const PoolIndex& pool,
                 std::span<const std::size_t> candidates, std::size_t token_budget,
                 SelectionMode mode) {
  Batch batch;
  if (token_budget == 0) return batch;
  if (mode == SelectionMode::kSentence) {
    std::vector<std::size_t> order(candidates.begin(), candidates.end());
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return a < b;
    });
    for (std::size_t s : order) {
      if (batch.tokens >= token_budget) break;
      batch.sentences.push_back(s);
      batch.scores.push_back(scores[s]);
      batch.tokens += pool.lengths[s];
    }
    batch.exhausted = batch.tokens < token_budget;
    return batch;
  }

  std::map<std::pair<int, std::size_t>, std::vector<std::size_t>> docs;
  for (std::size_t s : candidates) {
    const bool has_doc = !pool.documents.empty() && pool.documents[s].has_value();
    docs[has_doc ? std::make_pair(0, *pool.documents[s]) : std::make_pair(1, s)].push_back(s);
  }
  struct Unit {
    std::vector<std::size_t> members;
    double score;
  };
  std::vector<Unit> units;
  for (auto& [_, members] : docs) {
    std::sort(members.begin(), members.end());
    double num = 0.0, den = 0.0;
    for (std::size_t s : members) {
      num += static_cast<double>(pool.lengths[s]) * scores[s];
      den += static_cast<double>(pool.lengths[s]);
    }
    units.push_back({std::move(members), den > 0.0 ? num / den : 0.0});
  }
  std::sort(units.begin(), units.end(), [](const Unit& a, const Unit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.members.front() < b.members.front();
  });
  for (const auto& u : units) {
    if (batch.tokens >= token_budget) break;
    for (std::size_t s : u.members) {
      batch.sentences.push_back(s);
      batch.tokens += pool.lengths[s];
    }
    batch.scores.push_back(u.score);
  }
  batch.exhausted = batch.tokens < token_budget;
  return batch;
}

Batch fass_select(std::span<const double> pool_scores, std::span<const double> embeddings,
                  std::size_t dim, std::span<const std::size_t> lengths,
                  std::span<const std::size_t> candidates, std::size_t token_budget,
                  const FassConfig& config) {
  if (candidates.empty()) throw ParameterError("fass_select: empty candidate set");
  if (config.t_factor < 1) throw ParameterError("fass_select: t_factor must be >= 1");
  Batch batch;
  if (token_budget == 0) return batch;

  double mean_length = 0.0;
  for (std::size_t s : candidates) mean_length += static_cast<double>(lengths[s]);
  mean_length /= static_cast<double>(candidates.size());
  const auto expected =
      static_cast<std::size_t>(std::ceil(static_cast<double>(token_budget) / mean_length));
  const std::size_t keep = std::min(candidates.size(), config.t_factor * expected);

  std::vector<std::size_t> filtered(candidates.begin(), candidates.end());
  if (config.filter == FassFilter::kUncertainty) {
    std::stable_sort(filtered.begin(), filtered.end(), [&](std::size_t a, std::size_t b) {
      if (pool_scores[a] != pool_scores[b]) return pool_scores[a] > pool_scores[b];
      return a < b;
    });
  } else {
    std::sort(filtered.begin(), filtered.end());
    auto rng = make_rng(config.seed, 0x444956);
    for (std::size_t i = 0; i < keep; ++i)
      std::swap(filtered[i], filtered[i + uniform_index(rng, filtered.size() - i)]);
  }
  filtered.resize(keep);
  std::sort(filtered.begin(), filtered.end());

  const std::size_t c = filtered.size();
  std::vector<double> local(c * dim, 0.0);
  std::vector<double> local_len(c);
  for (std::size_t i = 0; i < c; ++i) {
    const double* src = embeddings.data() + filtered[i] * dim;
    double norm = 0.0;
    for (std::size_t d = 0; d < dim; ++d) norm += src[d] * src[d];
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (std::size_t d = 0; d < dim; ++d) local[i * dim + d] = src[d] / norm;
    local_len[i] = static_cast<double>(std::max<std::size_t>(1, lengths[filtered[i]]));
  }

  const auto rows = kernels::SparseRows::from_dense(local, dim);
  std::vector<double> coverage(c, 0.0);
  std::vector<double> scratch(dim);
  auto commit = [&](std::size_t i, double gain) {
    std::fill(scratch.begin(), scratch.end(), 0.0);
    rows.scatter(i, scratch);
#pragma omp parallel for schedule(static) if (config.parallel && c > 4096)
    for (std::ptrdiff_t x = 0; x < static_cast<std::ptrdiff_t>(c); ++x)
      coverage[x] = std::max(coverage[x], 1.0 + rows.dot(static_cast<std::size_t>(x), scratch.data()));
    batch.sentences.push_back(filtered[i]);
    batch.scores.push_back(gain);
    batch.tokens += lengths[filtered[i]];
  };

  if (!config.lazy) {
    std::vector<std::size_t> remaining(c);
    std::iota(remaining.begin(), remaining.end(), 0);
    std::vector<double> gains;
    while (batch.tokens < token_budget && !remaining.empty()) {
      gains.assign(remaining.size(), 0.0);
      if (config.parallel)
        kernels::facility_gains_parallel(rows, coverage, remaining, local_len, gains);
      else
        kernels::facility_gains_serial(rows, coverage, remaining, local_len, gains);
      std::size_t best = 0;
      for (std::size_t i = 1; i < remaining.size(); ++i)
        if (gains[i] > gains[best]) best = i;
      commit(remaining[best], gains[best]);
      remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
    }
    batch.exhausted = batch.tokens < token_budget;
    return batch;
  }

  // With zero coverage every similarity counts, so the first-round gain is
  // c + e_i . sum_x e_x. A small slack keeps it a valid upper bound.
  std::vector<double> total(dim, 0.0);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t d = 0; d < dim; ++d) total[d] += local[i * dim + d];
  struct Entry {
    double bound;
    std::size_t index;
    std::size_t round;
    bool operator<(const Entry& o) const {
      if (bound != o.bound) return bound < o.bound;
      return index > o.index;
    }
  };
  std::priority_queue<Entry> heap;
  for (std::size_t i = 0; i < c; ++i) {
    double dot = 0.0;
    for (std::size_t d = 0; d < dim; ++d) dot += local[i * dim + d] * total[d];
    const double bound = (static_cast<double>(c) + dot) * (1.0 + 1e-9) + 1e-9;
    heap.push({bound / local_len[i], i, static_cast<std::size_t>(-1)});
  }
  std::size_t round = 0;
  double gain = 0.0;
  while (batch.tokens < token_budget && !heap.empty()) {
    Entry top = heap.top();
    heap.pop();
    if (top.round == round) {
      commit(top.index, top.bound);
      ++round;
      continue;
    }
    const std::size_t idx = top.index;
    kernels::facility_gains_serial(rows, coverage, std::span(&idx, 1), local_len,
                                   std::span(&gain, 1));
    heap.push({gain, idx, round});
  }
  batch.exhausted = batch.tokens < token_budget;
  return batch;
}

std::vector<GroupErrorRecord> ext1_group_errors(
    const Partition& partition, const UnitAssignment& units, const Dataset& reference,
    std::span<const PredictionSet> checkpoint_predictions,
    std::span<const std::vector<double>> train_masses) {
  if (checkpoint_predictions.size() != train_masses.size())
    throw ParameterError("ext1: one training-mass vector per checkpoint required");
  for (const auto& p : checkpoint_predictions) check_alignment(p, reference);
  std::vector<GroupErrorRecord> out;
  if (checkpoint_predictions.empty()) return out;
  const auto& last = checkpoint_predictions.back();
  for (std::size_t t = 0; t + 1 < checkpoint_predictions.size(); ++t) {
    auto diff = group_difference(partition, units, reference, checkpoint_predictions[t], last);
    GroupErrorRecord rec;
    rec.checkpoint = t;
    rec.train_mass = train_masses[t];
    rec.val_error = std::move(diff.error);
    rec.val_mass = std::move(diff.mass);
    rec.zero_mass = std::move(diff.zero_mass);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace edg
