#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "edg/decay.hpp"
#include "edg/kernels.hpp"
#include "edg/partition.hpp"

namespace edg {

// Mass contributions of every sentence of a dataset under one partition,
// stored as CSR rows in dataset order.
class ProfileTable {
 public:
  ProfileTable() = default;
  void append(const SparseMass& row);
  std::size_t size() const { return offsets_.size() - 1; }
  SparseMass row(std::size_t i) const;
  kernels::ProfileView view() const { return {offsets_, groups_, masses_}; }

 private:
  std::vector<std::size_t> offsets_{0};
  std::vector<std::uint32_t> groups_;
  std::vector<double> masses_;
};

ProfileTable build_profiles(const Partition& partition, const Dataset& data,
                            const EmbeddingTable* table);

// eps = 0.001 * max(1, |D_A| / 250,000 tokens).
double default_epsilon(std::size_t da_tokens);

// One partition inside the selector: fitted curve, masses of B u T and of
// D_A, and the cached e(n) of every group.
struct PartitionTerm {
  DecayParams params;
  MassVector train_mass;
  MassVector da_mass;
  std::vector<double> current_error;

  void refresh();
  kernels::CurveView view() const;
};

class SelectionState {
 public:
  SelectionState(double epsilon, std::size_t token_budget)
      : epsilon_(epsilon), token_budget_(token_budget) {}

  void add_partition(DecayParams params, MassVector train_mass, MassVector da_mass);

  std::size_t partition_count() const { return terms_.size(); }
  const PartitionTerm& term(std::size_t p) const { return terms_[p]; }
  double epsilon() const { return epsilon_; }
  std::size_t token_budget() const { return token_budget_; }
  const std::vector<std::size_t>& selected() const { return selected_; }

  // H^p = -sum_j e(m(g_j, B u T)) m(g_j, D_A)
  double objective(std::size_t p) const;
  // H^p(S u B u T) - H^p(B u T) for a sentence's contribution.
  double gain(std::size_t p, const SparseMass& contribution) const;
  // (prod_p (gain_p / |s| + eps))^(1/F); `fault` set when a factor was
  // clamped.
  double edg_score(std::span<const SparseMass> contributions, std::size_t length,
                   bool* fault = nullptr) const;

  // Commits a sentence: updates masses in O(groups touched).
  void add(std::size_t sentence, std::span<const SparseMass> contributions);
  void add(std::size_t sentence, std::span<const ProfileTable> profiles);

 private:
  double epsilon_;
  std::size_t token_budget_;
  std::vector<PartitionTerm> terms_;
  std::vector<std::size_t> selected_;
};

enum class SelectionMode { kSentence, kDocument };

struct Batch {
  std::vector<std::size_t> sentences;  // pool positions, in pick order
  std::vector<double> scores;          // score of each pick (sentence or document)
  std::size_t tokens = 0;
  bool exhausted = false;              // pool ran out before the budget
  std::size_t numeric_faults = 0;
};

// Pool metadata shared by the greedy selectors. Positions index all three.
struct PoolIndex {
  std::span<const std::size_t> lengths;
  std::span<const std::optional<std::size_t>> documents;  // may be empty
};

// Greedy EDG batch: argmax score (ties to the smallest position), update
// masses, repeat until the selected token count reaches the budget.
// Document mode ranks documents by the length-weighted mean sentence score.
Batch select_batch(SelectionState& state, std::span<const ProfileTable> profiles,
                   const PoolIndex& pool, std::span<const std::size_t> candidates,
                   SelectionMode mode, bool parallel = true);

}  // namespace edg
