#include "edg/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "edg/error.hpp"

namespace edg {

namespace {

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra;
    if (c < 0x80) {
      extra = 0;
    } else if ((c & 0xE0) == 0xC0 && c >= 0xC2) {
      extra = 1;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
    } else if ((c & 0xF8) == 0xF0 && c <= 0xF4) {
      extra = 3;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return false;
    }
    i += extra + 1;
  }
  return true;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

constexpr std::string_view kDocStart = "-DOCSTART-";

}  // namespace

std::size_t Dataset::token_count() const {
  std::size_t n = 0;
  for (const auto& s : sentences) n += s.size();
  return n;
}

bool Dataset::labeled() const {
  for (const auto& s : sentences)
    for (const auto& t : s.tokens)
      if (!t.gold) return false;
  return true;
}

std::optional<BioTag> split_bio(std::string_view tag) {
  if (tag == "O") return BioTag{'O', {}};
  if (tag.size() < 3 || tag[1] != '-') return std::nullopt;
  if (tag[0] != 'B' && tag[0] != 'I') return std::nullopt;
  return BioTag{tag[0], tag.substr(2)};
}

ConllParse parse_conll(std::istream& in, DatasetRole role) {
  ConllParse result;
  Dataset& data = result.dataset;
  data.role = role;

  std::optional<std::size_t> doc;
  Sentence current;
  std::string line;
  std::size_t line_no = 0;

  auto flush = [&] {
    if (!current.tokens.empty()) {
      current.id = data.sentences.size();
      current.doc_id = doc;
      // Count I-X tags that do not continue an X phrase.
      std::string_view open;
      for (const auto& tok : current.tokens) {
        if (!tok.gold) {
          open = {};
          continue;
        }
        const auto bio = split_bio(*tok.gold);
        if (bio->prefix == 'I' && bio->type != open) ++result.bio_warnings;
        open = bio->prefix == 'O' ? std::string_view{} : bio->type;
      }
      data.sentences.push_back(std::move(current));
    }
    current = Sentence{};
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!valid_utf8(line)) throw FormatError("invalid UTF-8 in CoNLL input", line_no);
    const auto cols = split_ws(line);
    if (cols.empty()) {
      flush();
      continue;
    }
    if (cols[0].substr(0, kDocStart.size()) == kDocStart) {
      flush();
      doc = doc ? *doc + 1 : 0;
      continue;
    }
    Token tok;
    tok.surface = std::string(cols.front());
    if (cols.size() > 1) {
      const auto tag = cols.back();
      const auto bio = split_bio(tag);
      if (!bio) throw FormatError("invalid BIO tag '" + std::string(tag) + "'", line_no);
      if (bio->prefix != 'O') data.label_inventory.emplace(bio->type);
      tok.gold = std::string(tag);
    }
    current.tokens.push_back(std::move(tok));
  }
  flush();
  return result;
}

ConllParse parse_conll_file(const std::string& path, DatasetRole role) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open CoNLL file " + path);
  return parse_conll(in, role);
}

std::string serialize_conll(const Dataset& data) {
  std::ostringstream out;
  std::optional<std::size_t> prev_doc;
  for (const auto& s : data.sentences) {
    if (s.doc_id) {
      // One sentinel per document increment, so empty documents survive.
      const std::size_t first = prev_doc ? *prev_doc + 1 : 0;
      for (std::size_t d = first; d <= *s.doc_id; ++d) out << kDocStart << " O\n\n";
      prev_doc = s.doc_id;
    }
    for (const auto& t : s.tokens) {
      out << t.surface;
      if (t.gold) out << ' ' << *t.gold;
      out << '\n';
    }
    out << '\n';
  }
  return out.str();
}

void write_conll_file(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write CoNLL file " + path);
  out << serialize_conll(data);
}

Dataset strip_labels(const Dataset& data) {
  Dataset out = data;
  for (auto& s : out.sentences)
    for (auto& t : s.tokens) t.gold.reset();
  return out;
}

EmbeddingTable::EmbeddingTable(std::size_t dim, std::vector<std::string> surfaces,
                               std::vector<double> vectors, bool normalize)
    : dim_(dim), surfaces_(std::move(surfaces)), data_(std::move(vectors)) {
  if (dim_ == 0) throw ParameterError("embedding dimension must be positive");
  if (data_.size() != dim_ * surfaces_.size())
    throw ParameterError("embedding matrix size does not match surfaces x dim");

  std::vector<bool> zero(surfaces_.size(), false);
  std::vector<double> mean(dim_, 0.0);
  std::size_t counted = 0;
  for (std::size_t i = 0; i < surfaces_.size(); ++i) {
    double* v = data_.data() + i * dim_;
    double norm2 = 0.0;
    for (std::size_t d = 0; d < dim_; ++d) norm2 += v[d] * v[d];
    if (norm2 == 0.0) {
      zero[i] = true;
      continue;
    }
    if (normalize) {
      const double inv = 1.0 / std::sqrt(norm2);
      for (std::size_t d = 0; d < dim_; ++d) v[d] *= inv;
    }
    for (std::size_t d = 0; d < dim_; ++d) mean[d] += v[d];
    ++counted;
  }

  double mnorm2 = 0.0;
  for (double x : mean) mnorm2 += x * x;
  oov_.assign(dim_, 0.0);
  if (counted > 0 && mnorm2 > 0.0) {
    const double inv = 1.0 / std::sqrt(mnorm2);
    for (std::size_t d = 0; d < dim_; ++d) oov_[d] = mean[d] * inv;
  } else {
    // Degenerate table (empty or cancelling mean): first basis vector.
    oov_[0] = 1.0;
  }
  for (std::size_t i = 0; i < surfaces_.size(); ++i) {
    if (zero[i]) std::copy(oov_.begin(), oov_.end(), data_.begin() + i * dim_);
    index_[surfaces_[i]] = i;  // last wins
  }
}

bool EmbeddingTable::contains(std::string_view surface) const {
  return index_.find(std::string(surface)) != index_.end();
}

std::span<const double> EmbeddingTable::lookup(std::string_view surface) const {
  const auto it = index_.find(std::string(surface));
  if (it == index_.end()) return oov_;
  return {data_.data() + it->second * dim_, dim_};
}

EmbeddingTable load_embeddings(std::istream& in, bool normalize) {
  std::vector<std::string> surfaces;
  std::vector<double> data;
  std::unordered_map<std::string, std::size_t> seen;
  std::size_t dim = 0;
  std::size_t duplicates = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto cols = split_ws(line);
    if (cols.empty()) continue;
    if (!valid_utf8(line)) throw FormatError("invalid UTF-8 in embedding input", line_no);
    const std::size_t d = cols.size() - 1;
    if (d == 0) throw FormatError("embedding line has no vector", line_no);
    if (dim == 0) dim = d;
    if (d != dim)
      throw FormatError("inconsistent embedding dimension " + std::to_string(d) +
                            ", expected " + std::to_string(dim),
                        line_no);
    std::vector<double> v(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      const std::string tok(cols[k + 1]);
      char* end = nullptr;
      v[k] = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0')
        throw FormatError("bad embedding value '" + tok + "'", line_no);
    }
    std::string surface(cols[0]);
    const auto it = seen.find(surface);
    if (it != seen.end()) {
      ++duplicates;
      std::copy(v.begin(), v.end(), data.begin() + it->second * dim);
      continue;
    }
    seen.emplace(surface, surfaces.size());
    surfaces.push_back(std::move(surface));
    data.insert(data.end(), v.begin(), v.end());
  }
  if (dim == 0) throw FormatError("empty embedding file");
  EmbeddingTable table(dim, std::move(surfaces), std::move(data), normalize);
  table.duplicate_warnings = duplicates;
  return table;
}

EmbeddingTable load_embeddings_file(const std::string& path, bool normalize) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open embedding file " + path);
  return load_embeddings(in, normalize);
}

EmbeddingTable one_hot_embeddings(const std::vector<std::string>& vocabulary) {
  const std::size_t n = vocabulary.size();
  std::vector<double> data(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) data[i * n + i] = 1.0;
  return EmbeddingTable(n, vocabulary, std::move(data), true);
}

std::vector<double> sentence_embedding(const Sentence& sentence,
                                       const EmbeddingTable& table) {
  std::vector<double> out(table.dim(), 0.0);
  if (sentence.tokens.empty()) return out;
  for (const auto& t : sentence.tokens) {
    const auto v = table.lookup(t.surface);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += v[d];
  }
  const double inv = 1.0 / static_cast<double>(sentence.tokens.size());
  for (double& x : out) x *= inv;
  return out;
}

ShapeClass shape_class(std::string_view surface) {
  // Only ASCII letters count as alphabetic; other bytes behave like digits.
  bool any_alpha = false, any_upper = false, any_lower = false;
  for (char ch : surface) {
    const auto c = static_cast<unsigned char>(ch);
    if (c >= 0x80 || !std::isalpha(c)) continue;
    any_alpha = true;
    if (std::isupper(c)) any_upper = true;
    else any_lower = true;
  }
  if (!any_alpha) return ShapeClass::kOther;
  if (!any_lower) return ShapeClass::kAllUpper;
  if (!any_upper) return ShapeClass::kAllLower;
  const auto first = static_cast<unsigned char>(surface.front());
  if (first < 0x80 && std::isupper(first)) {
    bool rest_lower = true;
    for (std::size_t i = 1; i < surface.size(); ++i) {
      const auto c = static_cast<unsigned char>(surface[i]);
      if (c < 0x80 && std::isupper(c)) rest_lower = false;
    }
    if (rest_lower) return ShapeClass::kInitCap;
  }
  return ShapeClass::kOther;
}

const char* shape_name(ShapeClass shape) {
  switch (shape) {
    case ShapeClass::kAllUpper: return "ALL_UPPER";
    case ShapeClass::kAllLower: return "ALL_LOWER";
    case ShapeClass::kInitCap: return "INIT_CAP";
    case ShapeClass::kOther: return "OTHER";
  }
  return "OTHER";
}

}  // namespace edg
