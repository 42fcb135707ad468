#include "edg/select.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "edg/error.hpp"

namespace edg {

void ProfileTable::append(const SparseMass& row) {
  groups_.insert(groups_.end(), row.groups.begin(), row.groups.end());
  masses_.insert(masses_.end(), row.masses.begin(), row.masses.end());
  offsets_.push_back(groups_.size());
}

SparseMass ProfileTable::row(std::size_t i) const {
  SparseMass out;
  out.groups.assign(groups_.begin() + offsets_[i], groups_.begin() + offsets_[i + 1]);
  out.masses.assign(masses_.begin() + offsets_[i], masses_.begin() + offsets_[i + 1]);
  return out;
}

ProfileTable build_profiles(const Partition& partition, const Dataset& data,
                            const EmbeddingTable* table) {
  ProfileTable out;
  for (const auto& s : data.sentences) out.append(partition.profile(s, table));
  return out;
}

double default_epsilon(std::size_t da_tokens) {
  return 0.001 * std::max(1.0, static_cast<double>(da_tokens) / 250000.0);
}

void PartitionTerm::refresh() {
  current_error.resize(train_mass.masses.size());
  for (std::size_t g = 0; g < current_error.size(); ++g)
    current_error[g] = eval_curve(params, g, train_mass.masses[g]);
}

kernels::CurveView PartitionTerm::view() const {
  return {&params, train_mass.masses, da_mass.masses, current_error};
}

void SelectionState::add_partition(DecayParams params, MassVector train_mass,
                                   MassVector da_mass) {
  if (params.group_count() != train_mass.masses.size() ||
      params.group_count() != da_mass.masses.size())
    throw ParameterError("selection state: fit and masses disagree on group count");
  PartitionTerm t{std::move(params), std::move(train_mass), std::move(da_mass), {}};
  t.refresh();
  terms_.push_back(std::move(t));
}

double SelectionState::objective(std::size_t p) const {
  const auto& t = terms_.at(p);
  double h = 0.0;
  for (std::size_t g = 0; g < t.current_error.size(); ++g)
    h -= t.current_error[g] * t.da_mass.masses[g];
  return h;
}

double SelectionState::gain(std::size_t p, const SparseMass& contribution) const {
  const auto& t = terms_.at(p);
  double gain = 0.0;
  for (std::size_t k = 0; k < contribution.groups.size(); ++k) {
    const auto g = contribution.groups[k];
    const double da = t.da_mass.masses[g];
    if (da == 0.0) continue;
    gain += da * (t.current_error[g] -
                  eval_curve(t.params, g, t.train_mass.masses[g] + contribution.masses[k]));
  }
  return gain;
}

double SelectionState::edg_score(std::span<const SparseMass> contributions, std::size_t length,
                                 bool* fault) const {
  if (contributions.size() != terms_.size())
    throw ParameterError("edg_score: one contribution per partition required");
  if (terms_.empty()) throw ParameterError("edg_score: no partitions");
  double log_sum = 0.0;
  bool clamped = false;
  for (std::size_t p = 0; p < terms_.size(); ++p) {
    double factor = gain(p, contributions[p]) / static_cast<double>(length) + epsilon_;
    if (!(factor > 0.0)) {
      factor = 1e-12;
      clamped = true;
    }
    log_sum += std::log(factor);
  }
  if (fault) *fault = clamped;
  return std::exp(log_sum / static_cast<double>(terms_.size()));
}

void SelectionState::add(std::size_t sentence, std::span<const SparseMass> contributions) {
  for (std::size_t p = 0; p < terms_.size(); ++p) {
    auto& t = terms_[p];
    const auto& c = contributions[p];
    for (std::size_t k = 0; k < c.groups.size(); ++k) {
      const auto g = c.groups[k];
      t.train_mass.masses[g] += c.masses[k];
      t.current_error[g] = eval_curve(t.params, g, t.train_mass.masses[g]);
    }
  }
  selected_.push_back(sentence);
}

void SelectionState::add(std::size_t sentence, std::span<const ProfileTable> profiles) {
  std::vector<SparseMass> rows;
  rows.reserve(profiles.size());
  for (const auto& table : profiles) rows.push_back(table.row(sentence));
  add(sentence, rows);
}

namespace {

void score_candidates(const SelectionState& state, std::span<const ProfileTable> profiles,
                      const PoolIndex& pool, std::span<const std::size_t> candidates,
                      bool parallel, std::vector<double>& scores,
                      std::vector<std::uint8_t>& faults) {
  std::vector<kernels::CurveView> curves;
  std::vector<kernels::ProfileView> views;
  for (std::size_t p = 0; p < state.partition_count(); ++p) {
    curves.push_back(state.term(p).view());
    views.push_back(profiles[p].view());
  }
  scores.assign(candidates.size(), 0.0);
  faults.assign(candidates.size(), 0);
  if (parallel)
    kernels::edg_scores_parallel(curves, views, pool.lengths, candidates, state.epsilon(), scores,
                                 faults);
  else
    kernels::edg_scores_serial(curves, views, pool.lengths, candidates, state.epsilon(), scores,
                               faults);
}

}  // namespace

Batch select_batch(SelectionState& state, std::span<const ProfileTable> profiles,
                   const PoolIndex& pool, std::span<const std::size_t> candidates,
                   SelectionMode mode, bool parallel) {
  if (profiles.size() != state.partition_count())
    throw ParameterError("select_batch: one profile table per partition required");
  Batch batch;
  const std::size_t budget = state.token_budget();
  if (budget == 0) return batch;

  std::vector<std::size_t> remaining(candidates.begin(), candidates.end());
  std::sort(remaining.begin(), remaining.end());
  std::vector<double> scores;
  std::vector<std::uint8_t> faults;

  if (mode == SelectionMode::kSentence) {
    while (batch.tokens < budget && !remaining.empty()) {
      score_candidates(state, profiles, pool, remaining, parallel, scores, faults);
      std::size_t best = 0;
      for (std::size_t i = 1; i < remaining.size(); ++i)
        if (scores[i] > scores[best]) best = i;  // first index wins ties
      batch.numeric_faults += faults[best];
      const std::size_t s = remaining[best];
      state.add(s, profiles);
      batch.sentences.push_back(s);
      batch.scores.push_back(scores[best]);
      batch.tokens += pool.lengths[s];
      remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
    }
    batch.exhausted = batch.tokens < budget;
    return batch;
  }

  // Document mode: sentences without a document id are singleton documents.
  std::map<std::pair<int, std::size_t>, std::vector<std::size_t>> docs;
  for (std::size_t s : remaining) {
    const bool has_doc = !pool.documents.empty() && pool.documents[s].has_value();
    docs[has_doc ? std::make_pair(0, *pool.documents[s]) : std::make_pair(1, s)].push_back(s);
  }
  std::vector<std::vector<std::size_t>> units;
  for (auto& [_, members] : docs) units.push_back(std::move(members));
  std::sort(units.begin(), units.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });

  while (batch.tokens < budget && !units.empty()) {
    std::vector<std::size_t> flat;
    for (const auto& u : units) flat.insert(flat.end(), u.begin(), u.end());
    score_candidates(state, profiles, pool, flat, parallel, scores, faults);
    std::size_t best = 0;
    double best_score = -1.0;
    std::size_t k = 0;
    std::size_t best_faults = 0;
    for (std::size_t u = 0; u < units.size(); ++u) {
      double num = 0.0, den = 0.0;
      std::size_t f = 0;
      for (std::size_t s : units[u]) {
        const double len = static_cast<double>(pool.lengths[s]);
        num += len * scores[k];
        den += len;
        f += faults[k];
        ++k;
      }
      const double score = den > 0.0 ? num / den : 0.0;
      if (score > best_score) {
        best_score = score;
        best = u;
        best_faults = f;
      }
    }
    batch.numeric_faults += best_faults;
    for (std::size_t s : units[best]) {
      state.add(s, profiles);
      batch.sentences.push_back(s);
      batch.tokens += pool.lengths[s];
    }
    batch.scores.push_back(best_score);
    units.erase(units.begin() + static_cast<std::ptrdiff_t>(best));
  }
  batch.exhausted = batch.tokens < budget;
  return batch;
}

}  // namespace edg
