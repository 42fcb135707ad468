#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "edg/corpus.hpp"
#include "edg/prediction.hpp"

namespace edg {

enum class PartitionKind { kSentence, kWord, kWordShape, kWordSentence };
enum class PartitionUnit { kSentence, kWord };

const char* partition_kind_name(PartitionKind kind);
PartitionKind parse_partition_kind(const std::string& name);

struct KMeansConfig {
  std::size_t k = 10;
  std::size_t batch_size = 1024;
  std::size_t iterations = 100;
  std::uint64_t seed = 0;
};

struct KMeansResult {
  std::size_t dim = 0;
  std::vector<double> centers;        // k x dim
  std::vector<std::uint32_t> assignments;
  double cost = 0.0;                  // sum of squared distances to assigned centers
  std::size_t reseeded = 0;           // empty clusters re-seeded after training
};

// Mini-batch k-means (per-center learning rate 1/count) with k-means++
// seeding. `points` is row-major n x dim. When batch_size >= n every
// iteration sweeps all points in order.
KMeansResult minibatch_kmeans(std::span<const double> points, std::size_t dim,
                              const KMeansConfig& config);

struct Group {
  std::size_t id = 0;
  std::string descriptor;
  std::vector<std::string> exemplars;  // up to 10 nearest members
};

// Sparse (group, mass) contributions of one sentence, sorted by group.
struct SparseMass {
  std::vector<std::uint32_t> groups;
  std::vector<double> masses;
};

struct PartitionConfig {
  std::size_t sentence_groups = 10;
  std::size_t word_groups = 10;
  std::size_t word_subgroups = 10;      // second level of kWord
  double temperature = 0.1;
  std::size_t kmeans_batch = 1024;
  std::size_t kmeans_iterations = 100;
  std::uint64_t seed = 0;
};

// A frozen clustering of words or sentences. Everything needed to assign a
// never-seen unit is stored in the object and in its serialized form.
class Partition {
 public:
  Partition() = default;

  // Soft sentence partition from explicit centers (k x dim).
  static Partition from_sentence_centers(std::vector<double> centers, std::size_t dim,
                                         double temperature);
  // Hard word partition where each surface is its own group. Unknown
  // surfaces hash (FNV-1a) into a group.
  static Partition word_identity(std::vector<std::string> vocabulary);

  PartitionKind kind() const { return kind_; }
  PartitionUnit unit() const {
    return kind_ == PartitionKind::kSentence ? PartitionUnit::kSentence : PartitionUnit::kWord;
  }
  bool soft() const { return kind_ == PartitionKind::kSentence; }
  bool identity() const { return !identity_vocab_.empty(); }
  double temperature() const { return temperature_; }
  std::size_t group_count() const { return groups_.size(); }
  const std::vector<Group>& groups() const { return groups_; }
  std::string name() const;

  // P(g | sentence) for the soft kind: softmax of cosine / temperature.
  std::vector<double> sentence_membership(const Sentence& sentence,
                                          const EmbeddingTable* table) const;
  // Hard group of token `pos`. For kWordSentence this depends on the whole
  // sentence.
  std::size_t token_group(const Sentence& sentence, std::size_t pos,
                          const EmbeddingTable* table) const;
  // Membership vector of a unit: sentence (pos empty) or token.
  std::vector<double> membership(const Sentence& sentence, std::optional<std::size_t> pos,
                                 const EmbeddingTable* table) const;

  // Mass contributions of one sentence: P(g|s)|s| for sentence units,
  // token counts per group for word units.
  SparseMass profile(const Sentence& sentence, const EmbeddingTable* table) const;

  void save(std::ostream& out) const;
  static Partition load(std::istream& in);

 private:
  friend Partition build_partition(std::span<const Sentence* const>, const EmbeddingTable*,
                                   PartitionKind, const PartitionConfig&);

  std::size_t word_top(std::span<const double> v) const;
  std::size_t word_sub(std::size_t top, std::span<const double> v) const;
  std::size_t sentence_argmax(const Sentence& sentence, const EmbeddingTable* table) const;
  void fill_groups();

  PartitionKind kind_ = PartitionKind::kWord;
  std::size_t dim_ = 0;
  double temperature_ = 0.1;
  std::uint64_t seed_ = 0;
  // Word clusters (first level) and their second level.
  std::size_t word_k_ = 0;
  std::vector<double> word_centers_;
  std::size_t sub_stride_ = 0;  // group id = top * sub_stride_ + second level
  std::vector<std::vector<double>> sub_centers_;
  // Sentence clusters (kSentence, kWordSentence).
  std::size_t sentence_k_ = 0;
  std::vector<double> sentence_centers_;
  // Identity partition.
  std::vector<std::string> identity_vocab_;
  std::unordered_map<std::string, std::size_t> identity_index_;

  std::vector<Group> groups_;
};

// Builds one of the four feature partitions over D_A (train + pool +
// validation). kWord/kWordShape/kWordSentence need an embedding table.
Partition build_partition(std::span<const Sentence* const> sentences,
                          const EmbeddingTable* table, PartitionKind kind,
                          const PartitionConfig& config);

// Group masses m(g, D) in expected token counts.
struct MassVector {
  std::vector<double> masses;

  MassVector() = default;
  explicit MassVector(std::size_t groups) : masses(groups, 0.0) {}
  void add(const SparseMass& contribution, double scale = 1.0);
  double total() const;
};

MassVector group_mass(const Partition& partition, std::span<const Sentence* const> sentences,
                      const EmbeddingTable* table);
MassVector group_mass(const Partition& partition, const Dataset& data,
                      const EmbeddingTable* table);

// Per-group average validation error at one checkpoint, with the group's
// training and validation masses.
struct GroupErrorRecord {
  std::size_t checkpoint = 0;
  std::vector<double> train_mass;
  std::vector<double> val_error;
  std::vector<double> val_mass;
  std::vector<bool> zero_mass;

  std::size_t group_count() const { return val_error.size(); }
};

struct GroupErrors {
  std::vector<double> error;   // E_j / m(g_j, D_V); 0 where zero_mass
  std::vector<double> mass;    // m(g_j, D_V)
  std::vector<bool> zero_mass;
};

// Token-level mismatch rate per group. With class weights a mismatch costs
// (r(y) + r(yhat)) / 2.
GroupErrors group_error(const Partition& partition, const PredictionSet& predictions,
                        const Dataset& gold, const EmbeddingTable* table,
                        const ClassWeights* weights = nullptr);

// Same accounting with precomputed per-sentence token groups (hard) or
// memberships (soft); used by the run loop to avoid recomputing features.
struct UnitAssignment {
  // Soft: per sentence a dense membership vector. Hard: per sentence one
  // group per token.
  std::vector<std::vector<double>> membership;
  std::vector<std::vector<std::uint32_t>> token_groups;
};
UnitAssignment assign_units(const Partition& partition, const Dataset& data,
                            const EmbeddingTable* table);
GroupErrors group_error(const Partition& partition, const UnitAssignment& units,
                        const Dataset& gold, const PredictionSet& predictions,
                        const ClassWeights* weights = nullptr);
// Mismatch rate between two prediction sets (no gold involved).
GroupErrors group_difference(const Partition& partition, const UnitAssignment& units,
                             const Dataset& inputs, const PredictionSet& a,
                             const PredictionSet& b);

}  // namespace edg
