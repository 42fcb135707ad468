#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace edg {

struct Token {
  std::string surface;
  std::optional<std::string> gold;
};

struct Sentence {
  std::size_t id = 0;
  std::vector<Token> tokens;
  std::optional<std::size_t> doc_id;

  std::size_t size() const { return tokens.size(); }
};

enum class DatasetRole { kTrain, kPool, kValidation, kTest };

struct Dataset {
  std::vector<Sentence> sentences;
  std::set<std::string> label_inventory;  // entity types, without B-/I-
  DatasetRole role = DatasetRole::kTrain;

  std::size_t token_count() const;
  bool labeled() const;  // every token carries a gold tag
};

// Splits "B-PER" into ('B', "PER"); "O" yields ('O', ""). Returns nullopt
// for strings that are not BIO tags.
struct BioTag {
  char prefix;
  std::string_view type;
};
std::optional<BioTag> split_bio(std::string_view tag);

struct ConllParse {
  Dataset dataset;
  std::size_t bio_warnings = 0;  // I-X not preceded by B-X / I-X
};

// Whitespace-column CoNLL reader. First column is the surface, last column
// the tag (absent for single-column lines). -DOCSTART- lines open a new
// document and are not kept as sentences.
ConllParse parse_conll(std::istream& in, DatasetRole role = DatasetRole::kTrain);
ConllParse parse_conll_file(const std::string& path,
                            DatasetRole role = DatasetRole::kTrain);

// Inverse of parse_conll for datasets it produced. Writes unlabeled tokens
// as single-column lines.
std::string serialize_conll(const Dataset& data);
void write_conll_file(const Dataset& data, const std::string& path);

// Copy of `data` with every gold tag removed.
Dataset strip_labels(const Dataset& data);

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t dim, std::vector<std::string> surfaces,
                 std::vector<double> vectors, bool normalize);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return surfaces_.size(); }
  bool contains(std::string_view surface) const;
  // Vector for `surface`, or the OOV vector.
  std::span<const double> lookup(std::string_view surface) const;
  std::span<const double> oov_vector() const { return oov_; }
  const std::vector<std::string>& surfaces() const { return surfaces_; }

  std::size_t duplicate_warnings = 0;

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> surfaces_;
  std::vector<double> data_;
  std::vector<double> oov_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Reads "surface v1 ... vd" lines.
EmbeddingTable load_embeddings(std::istream& in, bool normalize);
EmbeddingTable load_embeddings_file(const std::string& path, bool normalize);

// One-hot vectors over `vocabulary`, the embedding used for the synthetic
// corpus.
EmbeddingTable one_hot_embeddings(const std::vector<std::string>& vocabulary);

// Unweighted mean of the token vectors; not re-normalized.
std::vector<double> sentence_embedding(const Sentence& sentence,
                                       const EmbeddingTable& table);

enum class ShapeClass { kAllUpper = 0, kAllLower = 1, kInitCap = 2, kOther = 3 };
inline constexpr std::size_t kShapeClassCount = 4;

ShapeClass shape_class(std::string_view surface);
const char* shape_name(ShapeClass shape);

}  // namespace edg
