#include "edg/prediction.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>

#include <json.hpp>

#include "edg/error.hpp"

namespace edg {

using nlohmann::json;

bool PredictionSet::has_logprobs() const {
  if (records.empty()) return false;
  return std::all_of(records.begin(), records.end(),
                     [](const auto& r) { return r.logprobs.has_value(); });
}

bool PredictionSet::has_ensemble() const {
  if (records.empty()) return false;
  return std::all_of(records.begin(), records.end(),
                     [](const auto& r) { return r.ensemble.has_value(); });
}

const PredictionRecord& PredictionSet::at(std::size_t sentence_id) const {
  if (sentence_id < records.size() && records[sentence_id].sentence_id == sentence_id)
    return records[sentence_id];
  for (const auto& r : records)
    if (r.sentence_id == sentence_id) return r;
  throw AlignmentError("no prediction for sentence " + std::to_string(sentence_id));
}

void check_alignment(const PredictionSet& predictions, const Dataset& gold) {
  if (predictions.records.size() != gold.sentences.size())
    throw AlignmentError("prediction count " + std::to_string(predictions.records.size()) +
                         " differs from sentence count " +
                         std::to_string(gold.sentences.size()));
  for (std::size_t i = 0; i < gold.sentences.size(); ++i) {
    const auto& s = gold.sentences[i];
    const auto& r = predictions.records[i];
    if (r.sentence_id != s.id || r.size() != s.size())
      throw AlignmentError("prediction does not align with sentence " + std::to_string(s.id));
  }
}

void validate_record(const PredictionRecord& record, std::size_t tagset_size) {
  const std::size_t n = record.size();
  if (record.logprobs) {
    if (record.logprobs->size() != n * tagset_size)
      throw FormatError("logprob table size mismatch in sentence " +
                        std::to_string(record.sentence_id));
    for (std::size_t l = 0; l < n; ++l) {
      double total = 0.0;
      for (std::size_t y = 0; y < tagset_size; ++y)
        total += std::exp((*record.logprobs)[l * tagset_size + y]);
      if (std::abs(total - 1.0) > 1e-6)
        throw FormatError("token distribution does not sum to 1 in sentence " +
                          std::to_string(record.sentence_id));
    }
  }
  if (record.ensemble) {
    if (record.ensemble->size() < 2)
      throw FormatError("ensemble needs at least 2 passes in sentence " +
                        std::to_string(record.sentence_id));
    for (const auto& pass : *record.ensemble)
      if (pass.size() != n)
        throw FormatError("ensemble pass length mismatch in sentence " +
                          std::to_string(record.sentence_id));
  }
}

PredictionSet read_predictions(std::istream& in) {
  PredictionSet set;
  std::map<std::string, std::size_t> tag_index;
  std::vector<std::vector<std::map<std::string, double>>> raw_logprobs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(std::string("bad prediction record: ") + e.what(), line_no);
    }
    PredictionRecord r;
    try {
      r.sentence_id = j.at("id").get<std::size_t>();
      r.labels = j.at("labels").get<std::vector<std::string>>();
      std::vector<std::map<std::string, double>> lp;
      if (j.contains("logprobs")) {
        lp = j.at("logprobs").get<std::vector<std::map<std::string, double>>>();
        if (lp.size() != r.labels.size())
          throw FormatError("logprobs length differs from labels", line_no);
        for (const auto& tok : lp)
          for (const auto& [tag, _] : tok) tag_index.emplace(tag, 0);
      }
      raw_logprobs.push_back(std::move(lp));
      if (j.contains("ensemble"))
        r.ensemble = j.at("ensemble").get<std::vector<std::vector<std::string>>>();
    } catch (const json::exception& e) {
      throw FormatError(std::string("bad prediction record: ") + e.what(), line_no);
    }
    set.records.push_back(std::move(r));
  }

  for (auto& [tag, idx] : tag_index) {
    idx = set.tagset.size();
    set.tagset.push_back(tag);
  }
  const std::size_t y = set.tagset.size();
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    auto& r = set.records[i];
    const auto& lp = raw_logprobs[i];
    if (lp.empty() && !r.labels.empty()) continue;
    if (y == 0) continue;
    std::vector<double> table(r.size() * y, -std::numeric_limits<double>::infinity());
    for (std::size_t l = 0; l < lp.size(); ++l)
      for (const auto& [tag, v] : lp[l]) table[l * y + tag_index.at(tag)] = v;
    r.logprobs = std::move(table);
  }
  for (const auto& r : set.records) validate_record(r, set.tagset.size());
  return set;
}

PredictionSet read_predictions_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open prediction file " + path);
  return read_predictions(in);
}

void write_predictions(const PredictionSet& set, std::ostream& out) {
  const std::size_t y = set.tagset.size();
  for (const auto& r : set.records) {
    json j;
    j["id"] = r.sentence_id;
    j["labels"] = r.labels;
    if (r.logprobs) {
      json lp = json::array();
      for (std::size_t l = 0; l < r.size(); ++l) {
        json tok = json::object();
        for (std::size_t k = 0; k < y; ++k) tok[set.tagset[k]] = (*r.logprobs)[l * y + k];
        lp.push_back(std::move(tok));
      }
      j["logprobs"] = std::move(lp);
    }
    if (r.ensemble) j["ensemble"] = *r.ensemble;
    out << j.dump() << '\n';
  }
}

void write_predictions_file(const PredictionSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write prediction file " + path);
  write_predictions(set, out);
}

Dataset apply_predictions(const Dataset& inputs, const PredictionSet& predictions) {
  check_alignment(predictions, inputs);
  Dataset out = inputs;
  out.label_inventory.clear();
  for (std::size_t i = 0; i < out.sentences.size(); ++i) {
    auto& s = out.sentences[i];
    const auto& r = predictions.records[i];
    for (std::size_t l = 0; l < s.size(); ++l) {
      s.tokens[l].gold = r.labels[l];
      const auto bio = split_bio(r.labels[l]);
      if (!bio) throw FormatError("invalid predicted tag '" + r.labels[l] + "'");
      if (bio->prefix != 'O') out.label_inventory.emplace(bio->type);
    }
  }
  return out;
}

double ClassWeights::of_type(const std::string& type) const {
  for (const auto& [t, w] : by_type)
    if (t == type) return w;
  throw ConfigError("no class weight for type '" + type + "'");
}

double ClassWeights::of_tag(const std::string& tag) const {
  const auto bio = split_bio(tag);
  if (!bio || bio->prefix == 'O') {
    if (outside) return *outside;
    if (by_type.empty()) return 1.0;
    double lo = std::numeric_limits<double>::infinity();
    for (const auto& [_, w] : by_type) lo = std::min(lo, w);
    return lo;
  }
  return of_type(std::string(bio->type));
}

}  // namespace edg
