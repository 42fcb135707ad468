#include "edg/partition.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "edg/error.hpp"
#include "edg/kernels.hpp"
#include "edg/rng.hpp"

namespace edg {

namespace {

constexpr std::size_t kExemplars = 10;

std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::size_t nearest(std::span<const double> v, const std::vector<double>& centers,
                    std::size_t dim) {
  const std::size_t k = centers.size() / dim;
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    const double d2 = squared_distance(v, {centers.data() + c * dim, dim});
    if (d2 < best_d2) {
      best_d2 = d2;
      best = c;
    }
  }
  return best;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// k-means++ seeding by D^2 sampling.
std::vector<double> seed_centers(std::span<const double> points, std::size_t n,
                                 std::size_t dim, std::size_t k, Rng& rng) {
  std::vector<double> centers;
  centers.reserve(k * dim);
  std::size_t first = uniform_index(rng, n);
  centers.insert(centers.end(), points.begin() + first * dim,
                 points.begin() + (first + 1) * dim);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i)
    d2[i] = squared_distance(points.subspan(i * dim, dim), {centers.data(), dim});
  std::vector<bool> chosen(n, false);
  chosen[first] = true;
  for (std::size_t c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = n;
    if (total > 0.0) {
      double r = uniform01(rng) * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        pick = i;
        r -= d2[i];
        if (r < 0.0) break;
      }
    }
    if (pick == n) {
      // All remaining points coincide with chosen centers.
      std::vector<std::size_t> rest;
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) rest.push_back(i);
      pick = rest[uniform_index(rng, rest.size())];
    }
    chosen[pick] = true;
    const auto p = points.subspan(pick * dim, dim);
    centers.insert(centers.end(), p.begin(), p.end());
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], squared_distance(points.subspan(i * dim, dim), p));
  }
  return centers;
}

}  // namespace

const char* partition_kind_name(PartitionKind kind) {
  switch (kind) {
    case PartitionKind::kSentence: return "SENTENCE";
    case PartitionKind::kWord: return "WORD";
    case PartitionKind::kWordShape: return "WORD_SHAPE";
    case PartitionKind::kWordSentence: return "WORD_SENTENCE";
  }
  return "WORD";
}

PartitionKind parse_partition_kind(const std::string& name) {
  if (name == "SENTENCE" || name == "sentence") return PartitionKind::kSentence;
  if (name == "WORD" || name == "word") return PartitionKind::kWord;
  if (name == "WORD_SHAPE" || name == "word_shape") return PartitionKind::kWordShape;
  if (name == "WORD_SENTENCE" || name == "word_sentence") return PartitionKind::kWordSentence;
  throw ConfigError("unknown partition kind '" + name + "'");
}

KMeansResult minibatch_kmeans(std::span<const double> points, std::size_t dim,
                              const KMeansConfig& config) {
  if (dim == 0) throw ParameterError("k-means dimension must be positive");
  const std::size_t n = points.size() / dim;
  const std::size_t k = config.k;
  if (k == 0) throw ParameterError("k-means needs k >= 1");
  if (n < k)
    throw ParameterError("k-means: " + std::to_string(n) + " points for " + std::to_string(k) +
                         " clusters");

  Rng rng = make_rng(config.seed, 0x6b6d);
  KMeansResult out;
  out.dim = dim;
  out.centers = seed_centers(points, n, dim, k, rng);

  std::vector<double> counts(k, 0.0);
  const bool full = config.batch_size >= n;
  const std::size_t batch = full ? n : config.batch_size;
  std::vector<std::size_t> idx(batch);
  std::vector<double> batch_points(batch * dim);
  std::vector<std::uint32_t> batch_assign(batch);
  std::vector<double> batch_d2(batch);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    for (std::size_t b = 0; b < batch; ++b) idx[b] = full ? b : uniform_index(rng, n);
    for (std::size_t b = 0; b < batch; ++b)
      std::copy_n(points.begin() + idx[b] * dim, dim, batch_points.begin() + b * dim);
    // Cache assignments against the centers at the start of the batch.
    kernels::assign_nearest_parallel(batch_points, dim, out.centers, batch_assign, batch_d2);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t c = batch_assign[b];
      counts[c] += 1.0;
      const double eta = 1.0 / counts[c];
      double* center = out.centers.data() + c * dim;
      const double* x = batch_points.data() + b * dim;
      for (std::size_t d = 0; d < dim; ++d) center[d] += eta * (x[d] - center[d]);
    }
  }

  out.assignments.assign(n, 0);
  std::vector<double> d2(n);
  kernels::assign_nearest_parallel(points, dim, out.centers, out.assignments, d2);
  // Re-seed empty clusters at the point farthest from its center.
  for (std::size_t round = 0; round < k; ++round) {
    std::vector<std::size_t> sizes(k, 0);
    for (auto a : out.assignments) ++sizes[a];
    const auto empty = std::find(sizes.begin(), sizes.end(), 0);
    if (empty == sizes.end()) break;
    std::size_t far = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (d2[i] > d2[far]) far = i;
    if (d2[far] <= 0.0) break;
    const std::size_t c = static_cast<std::size_t>(empty - sizes.begin());
    std::copy_n(points.begin() + far * dim, dim, out.centers.begin() + c * dim);
    ++out.reseeded;
    kernels::assign_nearest_parallel(points, dim, out.centers, out.assignments, d2);
  }
  out.cost = std::accumulate(d2.begin(), d2.end(), 0.0);
  return out;
}

// ---------------------------------------------------------------------------

Partition Partition::from_sentence_centers(std::vector<double> centers, std::size_t dim,
                                           double temperature) {
  if (dim == 0 || centers.size() % dim != 0) throw ParameterError("bad center matrix");
  if (temperature <= 0.0) throw ParameterError("temperature must be positive");
  Partition p;
  p.kind_ = PartitionKind::kSentence;
  p.dim_ = dim;
  p.temperature_ = temperature;
  p.sentence_k_ = centers.size() / dim;
  p.sentence_centers_ = std::move(centers);
  p.fill_groups();
  return p;
}

Partition Partition::word_identity(std::vector<std::string> vocabulary) {
  std::sort(vocabulary.begin(), vocabulary.end());
  vocabulary.erase(std::unique(vocabulary.begin(), vocabulary.end()), vocabulary.end());
  if (vocabulary.size() < 2) throw ParameterError("identity partition needs >= 2 words");
  Partition p;
  p.kind_ = PartitionKind::kWord;
  p.identity_vocab_ = std::move(vocabulary);
  for (std::size_t i = 0; i < p.identity_vocab_.size(); ++i)
    p.identity_index_[p.identity_vocab_[i]] = i;
  p.fill_groups();
  return p;
}

void Partition::fill_groups() {
  groups_.clear();
  auto add = [&](std::string descriptor) {
    Group g;
    g.id = groups_.size();
    g.descriptor = std::move(descriptor);
    groups_.push_back(std::move(g));
  };
  if (identity()) {
    for (const auto& w : identity_vocab_) {
      add("word=" + w);
      groups_.back().exemplars = {w};
    }
    return;
  }
  switch (kind_) {
    case PartitionKind::kSentence:
      for (std::size_t j = 0; j < sentence_k_; ++j) add("sentence_cluster=" + std::to_string(j));
      break;
    case PartitionKind::kWord:
      for (std::size_t t = 0; t < word_k_; ++t)
        for (std::size_t s = 0; s < sub_stride_; ++s)
          add("word_cluster=" + std::to_string(t) + "/" + std::to_string(s));
      break;
    case PartitionKind::kWordShape:
      for (std::size_t t = 0; t < word_k_; ++t)
        for (std::size_t s = 0; s < kShapeClassCount; ++s)
          add("word_cluster=" + std::to_string(t) +
              " shape=" + shape_name(static_cast<ShapeClass>(s)));
      break;
    case PartitionKind::kWordSentence:
      for (std::size_t t = 0; t < word_k_; ++t)
        for (std::size_t s = 0; s < sentence_k_; ++s)
          add("word_cluster=" + std::to_string(t) + " sentence_cluster=" + std::to_string(s));
      break;
  }
}

std::string Partition::name() const {
  return identity() ? std::string("WORD_IDENTITY") : std::string(partition_kind_name(kind_));
}

std::size_t Partition::word_top(std::span<const double> v) const {
  return nearest(v, word_centers_, dim_);
}

std::size_t Partition::word_sub(std::size_t top, std::span<const double> v) const {
  return nearest(v, sub_centers_[top], dim_);
}

std::vector<double> Partition::sentence_membership(const Sentence& sentence,
                                                   const EmbeddingTable* table) const {
  if (sentence_k_ == 0) throw ParameterError("partition has no sentence clusters");
  if (!table) throw ParameterError("sentence membership needs embeddings");
  const auto emb = sentence_embedding(sentence, *table);
  std::vector<double> logits(sentence_k_);
  for (std::size_t j = 0; j < sentence_k_; ++j)
    logits[j] = cosine(emb, {sentence_centers_.data() + j * dim_, dim_}) / temperature_;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double& x : logits) {
    x = std::exp(x - mx);
    total += x;
  }
  for (double& x : logits) x /= total;
  return logits;
}

std::size_t Partition::sentence_argmax(const Sentence& sentence,
                                       const EmbeddingTable* table) const {
  const auto m = sentence_membership(sentence, table);
  return static_cast<std::size_t>(std::max_element(m.begin(), m.end()) - m.begin());
}

std::size_t Partition::token_group(const Sentence& sentence, std::size_t pos,
                                   const EmbeddingTable* table) const {
  if (soft()) throw ParameterError("token_group on a sentence partition");
  const std::string& w = sentence.tokens.at(pos).surface;
  if (identity()) {
    const auto it = identity_index_.find(w);
    if (it != identity_index_.end()) return it->second;
    return fnv1a(w) % identity_vocab_.size();
  }
  if (!table) throw ParameterError("word partition needs embeddings");
  const auto v = table->lookup(w);
  const std::size_t top = word_top(v);
  switch (kind_) {
    case PartitionKind::kWord:
      return top * sub_stride_ + word_sub(top, v);
    case PartitionKind::kWordShape:
      return top * kShapeClassCount + static_cast<std::size_t>(shape_class(w));
    case PartitionKind::kWordSentence:
      return top * sentence_k_ + sentence_argmax(sentence, table);
    case PartitionKind::kSentence:
      break;
  }
  return 0;
}

std::vector<double> Partition::membership(const Sentence& sentence,
                                          std::optional<std::size_t> pos,
                                          const EmbeddingTable* table) const {
  if (soft()) {
    if (pos) throw ParameterError("sentence partition takes sentence units");
    return sentence_membership(sentence, table);
  }
  if (!pos) throw ParameterError("word partition takes token units");
  std::vector<double> out(group_count(), 0.0);
  out[token_group(sentence, *pos, table)] = 1.0;
  return out;
}

SparseMass Partition::profile(const Sentence& sentence, const EmbeddingTable* table) const {
  SparseMass out;
  if (soft()) {
    const auto m = sentence_membership(sentence, table);
    const double len = static_cast<double>(sentence.size());
    for (std::size_t j = 0; j < m.size(); ++j) {
      if (m[j] == 0.0) continue;
      out.groups.push_back(static_cast<std::uint32_t>(j));
      out.masses.push_back(m[j] * len);
    }
    return out;
  }
  std::map<std::uint32_t, double> counts;
  if (kind_ == PartitionKind::kWordSentence && !identity()) {
    const std::size_t sg = sentence_argmax(sentence, table);
    for (const auto& t : sentence.tokens)
      counts[static_cast<std::uint32_t>(word_top(table->lookup(t.surface)) * sentence_k_ + sg)] +=
          1.0;
  } else {
    for (std::size_t l = 0; l < sentence.size(); ++l)
      counts[static_cast<std::uint32_t>(token_group(sentence, l, table))] += 1.0;
  }
  for (const auto& [g, m] : counts) {
    out.groups.push_back(g);
    out.masses.push_back(m);
  }
  return out;
}

void Partition::save(std::ostream& out) const {
  out << "edg-partition 1\n";
  out << "kind " << partition_kind_name(kind_) << "\n";
  out << "identity " << (identity() ? 1 : 0) << "\n";
  out << "seed " << seed_ << "\n";
  out << "dim " << dim_ << "\n";
  out << "temperature " << fmt_double(temperature_) << "\n";
  out << "groups " << groups_.size() << "\n";
  auto write_matrix = [&](const char* tag, const std::vector<double>& m) {
    out << tag << ' ' << m.size();
    for (double x : m) out << ' ' << fmt_double(x);
    out << '\n';
  };
  out << "word_k " << word_k_ << " " << sub_stride_ << "\n";
  write_matrix("word_centers", word_centers_);
  for (std::size_t t = 0; t < sub_centers_.size(); ++t) write_matrix("sub_centers", sub_centers_[t]);
  out << "sentence_k " << sentence_k_ << "\n";
  write_matrix("sentence_centers", sentence_centers_);
  out << "vocab " << identity_vocab_.size() << "\n";
  for (const auto& w : identity_vocab_) out << w << "\n";
  for (const auto& g : groups_) {
    out << "group " << g.id << ' ' << g.exemplars.size();
    for (const auto& e : g.exemplars) out << ' ' << std::quoted(e);
    out << ' ' << std::quoted(g.descriptor) << '\n';
  }
  out << "end\n";
}

Partition Partition::load(std::istream& in) {
  auto expect = [&](const char* key) {
    std::string k;
    if (!(in >> k) || k != key) throw FormatError(std::string("partition file: expected ") + key);
  };
  auto read_matrix = [&](const char* key) {
    expect(key);
    std::size_t n = 0;
    in >> n;
    std::vector<double> m(n);
    for (auto& x : m) {
      std::string tok;
      in >> tok;
      x = std::strtod(tok.c_str(), nullptr);
    }
    return m;
  };
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "edg-partition" || version != 1) throw FormatError("not a partition file");
  Partition p;
  std::string kind;
  expect("kind");
  in >> kind;
  p.kind_ = parse_partition_kind(kind);
  int ident = 0;
  expect("identity");
  in >> ident;
  expect("seed");
  in >> p.seed_;
  expect("dim");
  in >> p.dim_;
  std::string temp;
  expect("temperature");
  in >> temp;
  p.temperature_ = std::strtod(temp.c_str(), nullptr);
  std::size_t group_count = 0;
  expect("groups");
  in >> group_count;
  expect("word_k");
  in >> p.word_k_ >> p.sub_stride_;
  p.word_centers_ = read_matrix("word_centers");
  if (p.kind_ == PartitionKind::kWord && !ident)
    for (std::size_t t = 0; t < p.word_k_; ++t) p.sub_centers_.push_back(read_matrix("sub_centers"));
  expect("sentence_k");
  in >> p.sentence_k_;
  p.sentence_centers_ = read_matrix("sentence_centers");
  std::size_t vocab = 0;
  expect("vocab");
  in >> vocab;
  for (std::size_t i = 0; i < vocab; ++i) {
    std::string w;
    in >> w;
    p.identity_index_[w] = i;
    p.identity_vocab_.push_back(std::move(w));
  }
  for (std::size_t g = 0; g < group_count; ++g) {
    Group grp;
    std::size_t ne = 0;
    expect("group");
    in >> grp.id >> ne;
    grp.exemplars.resize(ne);
    for (auto& e : grp.exemplars) in >> std::quoted(e);
    in >> std::quoted(grp.descriptor);
    p.groups_.push_back(std::move(grp));
  }
  expect("end");
  if (!in) throw FormatError("truncated partition file");
  return p;
}

// ---------------------------------------------------------------------------

Partition build_partition(std::span<const Sentence* const> sentences,
                          const EmbeddingTable* table, PartitionKind kind,
                          const PartitionConfig& config) {
  if (!table) throw ParameterError("build_partition needs an embedding table");
  const std::size_t dim = table->dim();
  Partition p;
  p.kind_ = kind;
  p.dim_ = dim;
  p.temperature_ = config.temperature;
  p.seed_ = config.seed;

  KMeansConfig km;
  km.batch_size = config.kmeans_batch;
  km.iterations = config.kmeans_iterations;

  const bool needs_sentences =
      kind == PartitionKind::kSentence || kind == PartitionKind::kWordSentence;
  std::vector<double> sentence_emb;
  if (needs_sentences) {
    sentence_emb.reserve(sentences.size() * dim);
    for (const Sentence* s : sentences) {
      const auto e = sentence_embedding(*s, *table);
      sentence_emb.insert(sentence_emb.end(), e.begin(), e.end());
    }
    km.k = config.sentence_groups;
    km.seed = mix_seed(config.seed, 1);
    const auto res = minibatch_kmeans(sentence_emb, dim, km);
    p.sentence_k_ = km.k;
    p.sentence_centers_ = res.centers;
  }

  // Distinct word vectors over D_A, keyed by surface.
  std::map<std::string, std::size_t> surface_vec;
  std::vector<double> word_vecs;
  std::size_t distinct = 0;
  if (kind != PartitionKind::kSentence) {
    std::map<std::vector<double>, std::size_t> seen;
    for (const Sentence* s : sentences)
      for (const auto& t : s->tokens) {
        if (surface_vec.count(t.surface)) continue;
        const auto v = table->lookup(t.surface);
        std::vector<double> key(v.begin(), v.end());
        auto [it, inserted] = seen.emplace(std::move(key), distinct);
        if (inserted) {
          word_vecs.insert(word_vecs.end(), v.begin(), v.end());
          ++distinct;
        }
        surface_vec[t.surface] = it->second;
      }
    if (distinct < config.word_groups)
      throw ParameterError("only " + std::to_string(distinct) + " distinct word vectors for " +
                           std::to_string(config.word_groups) + " clusters");
    km.k = config.word_groups;
    km.seed = mix_seed(config.seed, 2);
    const auto top = minibatch_kmeans(word_vecs, dim, km);
    p.word_k_ = km.k;
    p.word_centers_ = top.centers;

    if (kind == PartitionKind::kWord) {
      p.sub_stride_ = config.word_subgroups;
      p.sub_centers_.resize(p.word_k_);
      for (std::size_t t = 0; t < p.word_k_; ++t) {
        std::vector<double> members;
        for (std::size_t i = 0; i < distinct; ++i)
          if (top.assignments[i] == t)
            members.insert(members.end(), word_vecs.begin() + i * dim,
                           word_vecs.begin() + (i + 1) * dim);
        const std::size_t count = members.size() / dim;
        KMeansConfig sub = km;
        sub.k = std::min(config.word_subgroups, count);
        sub.seed = mix_seed(config.seed, 100 + t);
        p.sub_centers_[t] = minibatch_kmeans(members, dim, sub).centers;
      }
    } else if (kind == PartitionKind::kWordShape) {
      p.sub_stride_ = kShapeClassCount;
    }
  }
  p.fill_groups();

  // Exemplars: members nearest their group's reference center.
  if (kind == PartitionKind::kSentence) {
    std::vector<std::vector<std::pair<double, std::size_t>>> ranked(p.sentence_k_);
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      const auto e = std::span<const double>(sentence_emb.data() + i * dim, dim);
      const std::size_t g = p.sentence_argmax(*sentences[i], table);
      ranked[g].emplace_back(-cosine(e, {p.sentence_centers_.data() + g * dim, dim}), i);
    }
    for (std::size_t g = 0; g < p.sentence_k_; ++g) {
      auto& r = ranked[g];
      std::stable_sort(r.begin(), r.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      for (std::size_t k = 0; k < std::min(kExemplars, r.size()); ++k) {
        std::string text;
        for (const auto& t : sentences[r[k].second]->tokens) {
          if (text.size() > 60) break;
          if (!text.empty()) text += ' ';
          text += t.surface;
        }
        p.groups_[g].exemplars.push_back(text);
      }
    }
  } else {
    std::vector<std::map<std::string, double>> members(p.group_count());
    for (const Sentence* s : sentences)
      for (std::size_t l = 0; l < s->size(); ++l) {
        const std::size_t g = p.token_group(*s, l, table);
        const auto& w = s->tokens[l].surface;
        if (members[g].count(w)) continue;
        const auto v = table->lookup(w);
        const std::size_t top = g / (kind == PartitionKind::kWordSentence ? p.sentence_k_
                                                                           : p.sub_stride_);
        std::span<const double> ref{p.word_centers_.data() + top * dim, dim};
        if (kind == PartitionKind::kWord) {
          const std::size_t sub = g % p.sub_stride_;
          ref = {p.sub_centers_[top].data() + sub * dim, dim};
        }
        members[g][w] = squared_distance(v, ref);
      }
    for (std::size_t g = 0; g < p.group_count(); ++g) {
      std::vector<std::pair<double, std::string>> r;
      for (const auto& [w, d] : members[g]) r.emplace_back(d, w);
      std::sort(r.begin(), r.end());
      for (std::size_t k = 0; k < std::min(kExemplars, r.size()); ++k)
        p.groups_[g].exemplars.push_back(r[k].second);
    }
  }
  return p;
}

// ---------------------------------------------------------------------------

void MassVector::add(const SparseMass& contribution, double scale) {
  for (std::size_t k = 0; k < contribution.groups.size(); ++k)
    masses[contribution.groups[k]] += scale * contribution.masses[k];
}

double MassVector::total() const { return std::accumulate(masses.begin(), masses.end(), 0.0); }

MassVector group_mass(const Partition& partition, std::span<const Sentence* const> sentences,
                      const EmbeddingTable* table) {
  MassVector out(partition.group_count());
  for (const Sentence* s : sentences) out.add(partition.profile(*s, table));
  return out;
}

MassVector group_mass(const Partition& partition, const Dataset& data,
                      const EmbeddingTable* table) {
  MassVector out(partition.group_count());
  for (const auto& s : data.sentences) out.add(partition.profile(s, table));
  return out;
}

UnitAssignment assign_units(const Partition& partition, const Dataset& data,
                            const EmbeddingTable* table) {
  UnitAssignment u;
  if (partition.soft()) {
    u.membership.reserve(data.sentences.size());
    for (const auto& s : data.sentences) u.membership.push_back(partition.sentence_membership(s, table));
  } else {
    u.token_groups.reserve(data.sentences.size());
    for (const auto& s : data.sentences) {
      std::vector<std::uint32_t> g(s.size());
      for (std::size_t l = 0; l < s.size(); ++l)
        g[l] = static_cast<std::uint32_t>(partition.token_group(s, l, table));
      u.token_groups.push_back(std::move(g));
    }
  }
  return u;
}

namespace {

// Shared accumulation: loss(i, l) is the cost of token l of sentence i.
template <typename Loss>
GroupErrors accumulate_errors(const Partition& partition, const UnitAssignment& units,
                              const Dataset& data, Loss&& loss) {
  const std::size_t j = partition.group_count();
  GroupErrors out;
  out.error.assign(j, 0.0);
  out.mass.assign(j, 0.0);
  for (std::size_t i = 0; i < data.sentences.size(); ++i) {
    const auto& s = data.sentences[i];
    if (partition.soft()) {
      double sentence_loss = 0.0;
      for (std::size_t l = 0; l < s.size(); ++l) sentence_loss += loss(i, l);
      const auto& m = units.membership[i];
      for (std::size_t g = 0; g < j; ++g) {
        out.error[g] += m[g] * sentence_loss;
        out.mass[g] += m[g] * static_cast<double>(s.size());
      }
    } else {
      const auto& groups = units.token_groups[i];
      for (std::size_t l = 0; l < s.size(); ++l) {
        out.error[groups[l]] += loss(i, l);
        out.mass[groups[l]] += 1.0;
      }
    }
  }
  out.zero_mass.assign(j, false);
  for (std::size_t g = 0; g < j; ++g) {
    if (out.mass[g] <= 0.0) {
      out.zero_mass[g] = true;
      out.error[g] = 0.0;
    } else {
      out.error[g] = std::clamp(out.error[g] / out.mass[g], 0.0, 1.0);
    }
  }
  return out;
}

}  // namespace

GroupErrors group_error(const Partition& partition, const UnitAssignment& units,
                        const Dataset& gold, const PredictionSet& predictions,
                        const ClassWeights* weights) {
  check_alignment(predictions, gold);
  return accumulate_errors(partition, units, gold, [&](std::size_t i, std::size_t l) {
    const auto& y = gold.sentences[i].tokens[l].gold;
    if (!y) throw AlignmentError("validation sentence " + std::to_string(gold.sentences[i].id) +
                                 " has no gold tag");
    const auto& yhat = predictions.records[i].labels[l];
    if (*y == yhat) return 0.0;
    if (!weights) return 1.0;
    return 0.5 * (weights->of_tag(*y) + weights->of_tag(yhat));
  });
}

GroupErrors group_error(const Partition& partition, const PredictionSet& predictions,
                        const Dataset& gold, const EmbeddingTable* table,
                        const ClassWeights* weights) {
  check_alignment(predictions, gold);
  return group_error(partition, assign_units(partition, gold, table), gold, predictions, weights);
}

GroupErrors group_difference(const Partition& partition, const UnitAssignment& units,
                             const Dataset& inputs, const PredictionSet& a,
                             const PredictionSet& b) {
  check_alignment(a, inputs);
  check_alignment(b, inputs);
  return accumulate_errors(partition, units, inputs, [&](std::size_t i, std::size_t l) {
    return a.records[i].labels[l] == b.records[i].labels[l] ? 0.0 : 1.0;
  });
}

}  // namespace edg
