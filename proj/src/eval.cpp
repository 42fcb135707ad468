#include "edg/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

#include "edg/error.hpp"

namespace edg {

std::vector<Phrase> decode_phrases(std::span<const std::string> tags, std::size_t sentence_id) {
  std::vector<Phrase> out;
  bool open = false;
  Phrase cur;
  auto close = [&] {
    if (open) out.push_back(cur);
    open = false;
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    auto bio = split_bio(tags[i]);
    if (!bio) throw FormatError("unknown tag '" + tags[i] + "' in sentence " +
                                std::to_string(sentence_id));
    if (bio->prefix == 'O') {
      close();
      continue;
    }
    if (bio->prefix == 'I' && open && cur.type == bio->type) {
      cur.end = i;
      continue;
    }
    close();
    cur = Phrase{sentence_id, i, i, std::string(bio->type)};
    open = true;
  }
  close();
  return out;
}

namespace {

double weight_of(const ClassWeights* weights, const std::string& type) {
  return weights ? weights->of_type(type) : 1.0;
}

void finish(ScoreReport& r) {
  r.precision = r.total.predicted > 0.0 ? r.total.matched / r.total.predicted : 0.0;
  r.recall = r.total.gold > 0.0 ? r.total.matched / r.total.gold : 0.0;
  r.f1 = r.precision + r.recall > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
}

void accumulate(ScoreReport& r, const std::vector<Phrase>& gold,
                const std::vector<Phrase>& pred, const ClassWeights* weights) {
  // Both lists are in start order and non-overlapping.
  for (const auto& p : gold) {
    const double w = weight_of(weights, p.type);
    r.total.gold += w;
    r.per_type[p.type].gold += w;
  }
  for (const auto& p : pred) {
    const double w = weight_of(weights, p.type);
    r.total.predicted += w;
    r.per_type[p.type].predicted += w;
  }
  std::size_t i = 0, j = 0;
  while (i < gold.size() && j < pred.size()) {
    if (gold[i].start < pred[j].start) {
      ++i;
    } else if (pred[j].start < gold[i].start) {
      ++j;
    } else {
      if (gold[i].end == pred[j].end && gold[i].type == pred[j].type) {
        const double w = weight_of(weights, gold[i].type);
        r.total.matched += w;
        r.per_type[gold[i].type].matched += w;
      }
      ++i;
      ++j;
    }
  }
}

}  // namespace

ScoreReport micro_f1(std::span<const std::vector<std::string>> gold,
                     std::span<const std::vector<std::string>> predicted,
                     const ClassWeights* weights) {
  if (gold.size() != predicted.size())
    throw AlignmentError("gold has " + std::to_string(gold.size()) +
                         " sentences, predictions have " + std::to_string(predicted.size()));
  ScoreReport r;
  r.weighted = weights != nullptr;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    if (gold[s].size() != predicted[s].size())
      throw AlignmentError("sentence " + std::to_string(s) + ": gold has " +
                           std::to_string(gold[s].size()) + " tokens, prediction has " +
                           std::to_string(predicted[s].size()));
    accumulate(r, decode_phrases(gold[s], s), decode_phrases(predicted[s], s), weights);
  }
  finish(r);
  return r;
}

namespace {

std::vector<std::vector<std::string>> gold_tags(const Dataset& data) {
  std::vector<std::vector<std::string>> out;
  out.reserve(data.sentences.size());
  for (const auto& s : data.sentences) {
    std::vector<std::string> tags;
    tags.reserve(s.size());
    for (const auto& t : s.tokens) {
      if (!t.gold)
        throw ParameterError("sentence " + std::to_string(s.id) + " has unlabeled tokens");
      tags.push_back(*t.gold);
    }
    out.push_back(std::move(tags));
  }
  return out;
}

}  // namespace

ScoreReport micro_f1(const Dataset& gold, const PredictionSet& predictions,
                     const ClassWeights* weights) {
  check_alignment(predictions, gold);
  std::vector<std::vector<std::string>> pred;
  pred.reserve(gold.sentences.size());
  for (const auto& s : gold.sentences) pred.push_back(predictions.at(s.id).labels);
  return micro_f1(gold_tags(gold), pred, weights);
}

ScoreReport micro_f1(const Dataset& gold, const Dataset& predicted,
                     const ClassWeights* weights) {
  if (gold.sentences.size() != predicted.sentences.size())
    throw AlignmentError("gold has " + std::to_string(gold.sentences.size()) +
                         " sentences, predictions have " +
                         std::to_string(predicted.sentences.size()));
  for (std::size_t i = 0; i < gold.sentences.size(); ++i)
    if (gold.sentences[i].size() != predicted.sentences[i].size())
      throw AlignmentError("sentence " + std::to_string(gold.sentences[i].id) +
                           ": token counts differ");
  return micro_f1(gold_tags(gold), gold_tags(predicted), weights);
}

void write_score_report(const ScoreReport& report, std::ostream& out) {
  auto row = [&](const std::string& scope, const TypeCounts& c) {
    const double p = c.predicted > 0.0 ? c.matched / c.predicted : 0.0;
    const double r = c.gold > 0.0 ? c.matched / c.gold : 0.0;
    const double f = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g,%.6f,%.6f,%.6f\n", scope.c_str(),
                  c.gold, c.predicted, c.matched, p, r, f);
    out << buf;
  };
  out << "scope,gold,predicted,matched,precision,recall,f1\n";
  row("all", report.total);
  for (const auto& [type, counts] : report.per_type) row(type, counts);
}

void export_decay_curves(std::span<const CurveSource> sources, std::ostream& out) {
  out << kCurveHeader << '\n';
  char buf[160];
  for (const auto& src : sources) {
    if (!src.fit) continue;
    const auto& params = src.fit->params;
    for (std::size_t g = 0; g < params.group_count(); ++g) {
      std::string exemplars = "\"";
      if (src.groups && g < src.groups->group_count()) {
        const auto& ex = src.groups->groups()[g].exemplars;
        for (std::size_t k = 0; k < ex.size(); ++k) {
          if (k) exemplars += ' ';
          for (char ch : ex[k]) {
            if (ch == '"') exemplars += '"';
            exemplars += ch;
          }
        }
      }
      exemplars += '"';
      for (const auto& rec : src.fit->history) {
        const double n = rec.train_mass[g];
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g", g, rec.checkpoint, n,
                      rec.val_error[g], eval_curve(params, g, n), rec.val_mass[g]);
        out << src.partition << ',' << buf << ',' << exemplars << '\n';
      }
    }
  }
}

}  // namespace edg
