// Acceptance run: one PASS/FAIL line per criterion. Exits non-zero on any
// failure not listed as a known limitation. Tolerances are fixed here.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "edg/decay.hpp"
#include "edg/eval.hpp"
#include "edg/experiment.hpp"
#include "edg/select.hpp"
#include "edg/simlab.hpp"
#include "support.hpp"

using namespace edg;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------- decay fit

DecayParams random_params(std::mt19937_64& rng, std::size_t groups) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DecayParams p;
  p.a0 = 0.005 + 0.1 * u(rng);
  p.a_half = u(rng);
  p.a1 = u(rng);
  p.a2 = u(rng) * u(rng);
  p.a3 = u(rng) * u(rng) * u(rng);
  for (std::size_t j = 0; j < groups; ++j) {
    p.b.push_back(u(rng));
    p.c.push_back(0.3 * u(rng));
  }
  return p;
}

double group_size(double base, std::size_t j) { return base * (1.0 + 0.15 * static_cast<double>(j)); }

std::vector<GroupErrorRecord> sample_history(const DecayParams& truth,
                                             const std::vector<double>& sizes, double sigma,
                                             std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<GroupErrorRecord> h;
  for (std::size_t t = 0; t < sizes.size(); ++t) {
    GroupErrorRecord r;
    r.checkpoint = t;
    for (std::size_t j = 0; j < truth.group_count(); ++j) {
      const double n = group_size(sizes[t], j);
      r.train_mass.push_back(n);
      r.val_error.push_back(eval_curve(truth, j, n) + sigma * noise(rng));
      r.val_mass.push_back(100.0);
      r.zero_mass.push_back(false);
    }
    h.push_back(r);
  }
  return h;
}

Outcome decay_recovery() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  DecayParams truth;
  truth.a0 = 0.01;
  truth.a_half = 0.5;
  truth.a1 = 0.4;
  truth.a2 = 0.1;
  for (std::size_t j = 0; j < 10; ++j) {
    truth.b.push_back(0.15 + 0.07 * static_cast<double>(j));
    truth.c.push_back(0.01 + 0.025 * static_cast<double>(j));
  }
  const std::vector<double> sizes{200, 400, 600, 800, 1000, 1200};

  const auto clean = sample_history(truth, sizes, 0.0, rng);
  const auto fit = fit_decay(clean, default_weights(clean));
  double max_err = 0.0;
  for (std::size_t j = 0; j < 10; ++j)
    for (double n = sizes.front(); n <= sizes.back(); n += 10)
      max_err = std::max(max_err, std::abs(eval_curve(fit.params, j, group_size(n, j)) -
                                           eval_curve(truth, j, group_size(n, j))));

  const auto noisy = sample_history(truth, sizes, 0.01, rng);
  const auto nfit = fit_decay(noisy, default_weights(noisy));
  double se = 0.0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < 10; ++j)
    for (double n = sizes.front(); n <= sizes.back(); n += 10) {
      const double d = eval_curve(nfit.params, j, group_size(n, j)) -
                       eval_curve(truth, j, group_size(n, j));
      se += d * d;
      ++count;
    }
  const double rmse = std::sqrt(se / static_cast<double>(count));
  const double secs = seconds_since(t0);
  return {max_err < 1e-3 && rmse < 0.02 && secs < 10.0,
          fmt("max_err=%.2e (<1e-3) noisy_rmse=%.4f (<0.02) time=%.3fs (<10s)", max_err, rmse,
              secs)};
}

// ---------------------------------------------------------------- objective

MassVector as_masses(std::vector<double> m) {
  MassVector v;
  v.masses = std::move(m);
  return v;
}

SparseMass random_row(std::mt19937_64& rng, std::size_t groups, std::size_t tokens) {
  std::vector<double> dense(groups, 0.0);
  for (std::size_t t = 0; t < tokens; ++t) dense[rng() % groups] += 1.0;
  SparseMass row;
  for (std::size_t j = 0; j < groups; ++j)
    if (dense[j] > 0) {
      row.groups.push_back(static_cast<std::uint32_t>(j));
      row.masses.push_back(dense[j]);
    }
  return row;
}

// H(A) = -sum_j e_j(m_j(A)) * m_j(D_A), computed from scratch.
double objective_of(const DecayParams& p, const std::vector<double>& train,
                    const std::vector<double>& da) {
  double h = 0.0;
  for (std::size_t j = 0; j < train.size(); ++j) h -= eval_curve(p, j, train[j]) * da[j];
  return h;
}

Outcome monotone_submodular() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  std::size_t mono = 0, submod = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t groups = 1 + rng() % 10;
    const auto p = random_params(rng, groups);
    std::vector<double> da(groups), x(groups);
    for (auto& m : da) m = 1 + static_cast<double>(rng() % 300);
    for (auto& m : x) m = static_cast<double>(rng() % 40);
    // Y is a superset of X.
    auto y = x;
    const std::size_t extra_sentences = 1 + rng() % 5;
    for (std::size_t k = 0; k < extra_sentences; ++k) {
      const auto r = random_row(rng, groups, 1 + rng() % 15);
      for (std::size_t q = 0; q < r.groups.size(); ++q) y[r.groups[q]] += r.masses[q];
    }
    const auto s = random_row(rng, groups, 1 + rng() % 12);
    auto add = [&](std::vector<double> m) {
      for (std::size_t q = 0; q < s.groups.size(); ++q) m[s.groups[q]] += s.masses[q];
      return m;
    };
    const double gx = objective_of(p, add(x), da) - objective_of(p, x, da);
    const double gy = objective_of(p, add(y), da) - objective_of(p, y, da);
    if (gx < -1e-9 || gy < -1e-9) ++mono;
    if (gx - gy < -1e-9) ++submod;
    // The library's own incremental gain must agree with the oracle.
    SelectionState sx(0.0, 1);
    sx.add_partition(p, as_masses(x), as_masses(da));
    if (std::abs(sx.gain(0, s) - gx) > 1e-9 * std::max(1.0, std::abs(gx))) ++mono;
  }
  const double secs = seconds_since(t0);
  return {mono == 0 && submod == 0 && secs < 30.0,
          fmt("draws=1000 monotonicity_violations=%zu submodularity_violations=%zu time=%.3fs",
              mono, submod, secs)};
}

Outcome greedy_bound() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(4321);
  std::size_t violations = 0;
  double worst_ratio = 1.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t groups = 2 + rng() % 7, n = 4 + rng() % 9, k = 1 + rng() % 3;
    const std::size_t len = 2 + rng() % 3;
    const auto p = random_params(rng, groups);
    std::vector<double> train(groups), da(groups);
    for (std::size_t j = 0; j < groups; ++j) {
      train[j] = static_cast<double>(rng() % 6);
      da[j] = 1 + static_cast<double>(rng() % 150);
    }
    std::vector<ProfileTable> prof(1);
    std::vector<SparseMass> rows;
    std::vector<std::size_t> lengths(n, len), cand(n);
    std::iota(cand.begin(), cand.end(), 0);
    for (std::size_t s = 0; s < n; ++s) {
      rows.push_back(random_row(rng, groups, len));
      prof[0].append(rows.back());
    }
    SelectionState state(0.001, k * len);
    state.add_partition(p, as_masses(train), as_masses(da));
    const auto batch = select_batch(state, prof, {lengths, {}}, cand, SelectionMode::kSentence);
    auto m = train;
    for (std::size_t s : batch.sentences)
      for (std::size_t q = 0; q < rows[s].groups.size(); ++q) m[rows[s].groups[q]] += rows[s].masses[q];
    const double base = objective_of(p, train, da);
    const double greedy = objective_of(p, m, da) - base;

    double best = 0.0;
    std::vector<bool> pick(n, false);
    std::fill(pick.begin(), pick.begin() + static_cast<long>(std::min(k, n)), true);
    std::sort(pick.begin(), pick.end());
    do {
      auto mm = train;
      for (std::size_t s = 0; s < n; ++s)
        if (pick[s])
          for (std::size_t q = 0; q < rows[s].groups.size(); ++q) mm[rows[s].groups[q]] += rows[s].masses[q];
      best = std::max(best, objective_of(p, mm, da) - base);
    } while (std::next_permutation(pick.begin(), pick.end()));
    if (batch.sentences.size() != std::min(k, n)) ++violations;
    if (greedy < (1.0 - 1.0 / M_E) * best - 1e-9) ++violations;
    if (best > 0) worst_ratio = std::min(worst_ratio, greedy / best);
  }
  const double secs = seconds_since(t0);
  return {violations == 0 && secs < 60.0,
          fmt("instances=200 violations=%zu worst_greedy/opt=%.4f (>=%.4f) time=%.3fs",
              violations, worst_ratio, 1.0 - 1.0 / M_E, secs)};
}

// ---------------------------------------------------------------- synthetic runs

constexpr std::size_t kSeeds = 5;
const std::vector<std::string> kTrendStrategies{"rnd", "div", "us", "edg", "us_edg_ext2"};

struct SeedRuns {
  std::map<std::string, double> final_test_f1;
  std::map<std::string, double> noise_fraction;  // over strategy-chosen batches
};

struct TrendData {
  std::vector<SeedRuns> seeds;
  double seconds = 0.0;
  std::string error;
};

double noise_fraction(const RunHistory& h, const Dataset& pool, const SyntheticGenerator& gen) {
  std::unordered_map<std::size_t, const Sentence*> by_id;
  for (const auto& s : pool.sentences) by_id[s.id] = &s;
  std::size_t noise = 0, total = 0;
  for (const auto& b : h.batches) {
    if (b.source == "random") continue;
    for (std::size_t id : b.sentences)
      for (const auto& t : by_id.at(id)->tokens) {
        ++total;
        if (gen.category(t.surface) == WordCategory::kNoise) ++noise;
      }
  }
  return total ? static_cast<double>(noise) / static_cast<double>(total) : 0.0;
}

const TrendData& trend_runs() {
  static TrendData data;
  static bool done = false;
  if (done) return data;
  done = true;
  const auto t0 = Clock::now();
  testing::TempDir dir("acceptance_trend");
  try {
    for (std::size_t seed = 1; seed <= kSeeds; ++seed) {
      SynthSpec spec;
      spec.seed = seed;
      const auto data_dir = dir.str("data_" + std::to_string(seed));
      gen_synth_files(spec, SynthSizes{}, data_dir, false);
      const SyntheticGenerator gen(spec);
      const auto pool = parse_conll_file(data_dir + "/train.conll").dataset;
      SeedRuns runs;
      for (const auto& strategy : kTrendStrategies) {
        auto config = load_run_config(data_dir + "/simulate.json");
        config.strategy = strategy;
        const auto result =
            simulate(config, dir.str("run_" + std::to_string(seed) + "_" + strategy));
        runs.final_test_f1[strategy] = result.history.checkpoints.back().f1.at("test");
        runs.noise_fraction[strategy] = noise_fraction(result.history, pool, gen);
        std::fprintf(stderr, "  seed %zu %-12s test F1 %.4f noise fraction %.4f\n", seed,
                     strategy.c_str(), runs.final_test_f1[strategy],
                     runs.noise_fraction[strategy]);
      }
      data.seeds.push_back(runs);
    }
  } catch (const std::exception& e) {
    data.error = e.what();
  }
  data.seconds = seconds_since(t0);
  return data;
}

double mean_f1(const TrendData& d, const std::string& s) {
  double sum = 0.0;
  for (const auto& r : d.seeds) sum += r.final_test_f1.at(s);
  return sum / static_cast<double>(d.seeds.size());
}

Outcome synthetic_trend() {
  const auto& d = trend_runs();
  if (!d.error.empty()) return {false, "run failed: " + d.error};
  std::size_t over_div = 0, over_rnd = 0;
  for (const auto& r : d.seeds) {
    over_div += r.final_test_f1.at("edg") > r.final_test_f1.at("div");
    over_rnd += r.final_test_f1.at("edg") > r.final_test_f1.at("rnd");
  }
  const double edg = mean_f1(d, "edg"), div = mean_f1(d, "div"), rnd = mean_f1(d, "rnd"),
               us = mean_f1(d, "us");
  // The four compared strategies only; us_edg_ext2 has its own check.
  const bool pass = edg - div > 0 && edg - rnd > 0 && over_div >= 4 && over_rnd >= 4 &&
                    d.seconds < 600.0;
  return {pass, fmt("mean F1 edg=%.4f div=%.4f rnd=%.4f us=%.4f; edg>div in %zu/5, edg>rnd in "
                    "%zu/5 (need 4); all runs %.0fs (<600s)",
                    edg, div, rnd, us, over_div, over_rnd, d.seconds)};
}

Outcome noise_robustness() {
  const auto& d = trend_runs();
  if (!d.error.empty()) return {false, "run failed: " + d.error};
  std::size_t wins = 0;
  std::string per_seed;
  for (const auto& r : d.seeds) {
    const double us = r.noise_fraction.at("us"), edg = r.noise_fraction.at("edg");
    wins += us > edg;
    per_seed += fmt(" %.3f/%.3f", us, edg);
  }
  return {wins >= 4, fmt("noise fraction us/edg per seed:%s; us>edg in %zu/5 (need 4)",
                         per_seed.c_str(), wins)};
}

Outcome uncertainty_decay() {
  const auto& d = trend_runs();
  if (!d.error.empty()) return {false, "run failed: " + d.error};
  const double combined = mean_f1(d, "us_edg_ext2"), us = mean_f1(d, "us");
  return {combined >= us - 0.002,
          fmt("mean F1 us_edg_ext2=%.4f us=%.4f (need >= us - 0.002)", combined, us)};
}

// ---------------------------------------------------------------- pseudo labels

Outcome pseudo_pool() {
  const auto t0 = Clock::now();
  SynthSpec spec;
  spec.seed = 8;
  const SyntheticGenerator gen(spec);
  const auto train = gen.generate(SynthSizes{}.train, 0);
  const auto test = gen.generate(SynthSizes{}.test, 2, DatasetRole::kTest);
  const auto tagset = tagset_of({&train, &test});
  const auto pseudo = make_pseudo_pool(train, strip_labels(train), tagset);

  // Pseudo-test: the oracle's own labels on the test inputs.
  const auto oracle_test = tagger_predict(pseudo.oracle, test, false);
  Dataset pseudo_test = test;
  for (std::size_t i = 0; i < pseudo_test.sentences.size(); ++i)
    for (std::size_t l = 0; l < pseudo_test.sentences[i].tokens.size(); ++l)
      pseudo_test.sentences[i].tokens[l].gold = oracle_test.records[i].labels[l];
  const double oracle_f1 = micro_f1(pseudo_test, oracle_test).f1;

  const auto retrained = ReferenceTagger::train(pseudo.pool, tagset);
  const double retrained_f1 = micro_f1(pseudo_test, tagger_predict(retrained, test, false)).f1;
  const double secs = seconds_since(t0);
  const double gap = std::abs(retrained_f1 - oracle_f1);
  return {gap <= 0.01 && secs < 120.0,
          fmt("oracle pseudo-test F1=%.4f retrained-on-pseudo-pool F1=%.4f gap=%.4f (<=0.01) "
              "time=%.3fs",
              oracle_f1, retrained_f1, gap, secs)};
}

// ---------------------------------------------------------------- metric

using Tags = std::vector<std::string>;

std::string type_of(const std::string& tag) { return tag == "O" ? "" : tag.substr(2); }

// Chunks enumerated as every (start, end) span and tested against the
// conlleval start/continue rules.
std::set<std::tuple<std::size_t, std::size_t, std::size_t, std::string>> brute_phrases(
    const std::vector<Tags>& sentences) {
  auto starts = [](const Tags& t, std::size_t i) {
    if (t[i] == "O") return false;
    if (t[i][0] == 'B') return true;
    return i == 0 || t[i - 1] == "O" || type_of(t[i - 1]) != type_of(t[i]);
  };
  auto continues = [](const Tags& t, std::size_t i) {
    return i > 0 && t[i][0] == 'I' && t[i - 1] != "O" && type_of(t[i - 1]) == type_of(t[i]);
  };
  std::set<std::tuple<std::size_t, std::size_t, std::size_t, std::string>> out;
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    const auto& t = sentences[s];
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!starts(t, i)) continue;
      for (std::size_t j = i; j < t.size(); ++j) {
        bool ok = true;
        for (std::size_t k = i + 1; k <= j && ok; ++k) ok = continues(t, k);
        if (ok && j + 1 < t.size() && continues(t, j + 1)) ok = false;
        if (ok) out.insert({s, i, j, type_of(t[i])});
      }
    }
  }
  return out;
}

Outcome metric_oracle() {
  std::mt19937_64 rng(1000);
  const Tags alphabet{"O", "O", "O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG",
                      "B-MISC", "I-MISC"};
  std::vector<Tags> gold(1000), pred;
  for (auto& s : gold) {
    s.resize(1 + rng() % 20);
    for (auto& t : s) t = alphabet[rng() % alphabet.size()];
  }
  pred = gold;
  for (auto& s : pred)
    for (auto& t : s)
      if (rng() % 3 == 0) t = alphabet[rng() % alphabet.size()];
  const auto g = brute_phrases(gold), p = brute_phrases(pred);
  std::size_t matched = 0;
  for (const auto& x : p) matched += g.count(x);
  const auto r = micro_f1(gold, pred);
  const bool counts = r.total.gold == static_cast<double>(g.size()) &&
                      r.total.predicted == static_cast<double>(p.size()) &&
                      r.total.matched == static_cast<double>(matched);
  ClassWeights ones;
  ones.by_type = {{"PER", 1.0}, {"LOC", 1.0}, {"ORG", 1.0}, {"MISC", 1.0}};
  const auto w = micro_f1(gold, pred, &ones);
  const bool weighted = w.precision == r.precision && w.recall == r.recall && w.f1 == r.f1;
  return {counts && weighted,
          fmt("gold=%zu predicted=%zu matched=%zu vs library %.0f/%.0f/%.0f; weighted r=1 "
              "equal: %s",
              g.size(), p.size(), matched, r.total.gold, r.total.predicted, r.total.matched,
              weighted ? "yes" : "no")};
}

// ---------------------------------------------------------------- gradient

Outcome gradient_check() {
  std::mt19937_64 rng(9);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t groups = 1 + rng() % 6;
    const auto truth = random_params(rng, groups);
    const auto hist = sample_history(truth, {0.5, 20, 80, 250, 600, 1400}, 0.03, rng);
    const auto w = default_weights(hist);
    const auto at = random_params(rng, groups);
    const auto theta = at.pack();
    std::vector<double> grad(theta.size());
    decay_objective_gradient(at, hist, w, grad);
    double diff2 = 0.0, norm2 = 0.0;
    // Central differences at h and 2h, combined by Richardson extrapolation;
    // the objective reaches 1e14 at some points, where a single tiny step
    // loses most digits to cancellation.
    auto central = [&](std::size_t i, double h) {
      auto up = theta, down = theta;
      up[i] += h;
      down[i] -= h;
      return (decay_objective(DecayParams::unpack(up), hist, w) -
              decay_objective(DecayParams::unpack(down), hist, w)) /
             (2.0 * h);
    };
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double h = 1e-4 * std::max(1e-3, std::abs(theta[i]));
      const double fd = (4.0 * central(i, h) - central(i, 2.0 * h)) / 3.0;
      diff2 += (fd - grad[i]) * (fd - grad[i]);
      norm2 += grad[i] * grad[i];
    }
    worst = std::max(worst, std::sqrt(diff2) / std::max(std::sqrt(norm2), 1e-12));
  }
  return {worst < 1e-5, fmt("points=100 worst relative error=%.2e (<1e-5)", worst)};
}

// ---------------------------------------------------------------- determinism

std::string directory_bytes(const fs::path& dir) {
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) names.insert(e.path().filename().string());
  std::string out;
  for (const auto& n : names) out += n + '\n' + testing::slurp((dir / n).string());
  return out;
}

Outcome determinism() {
  testing::TempDir dir("acceptance_det");
  SynthSpec spec;
  spec.seed = 21;
  gen_synth_files(spec, {25000, 4000, 3000}, dir.str("data"), false);
  std::string detail;
  bool pass = true;
  for (const std::string strategy : {"edg", "bald_edg_ext2", "us_div_edg_ext2", "edg_ext1"}) {
    auto config = load_run_config(dir.str("data/simulate.json"));
    config.strategy = strategy;
    config.loop.total_batches = 6;
    simulate(config, dir.str(strategy + "_a"));
    simulate(config, dir.str(strategy + "_b"));
    const bool same =
        directory_bytes(dir.path() / (strategy + "_a") / "batches") ==
            directory_bytes(dir.path() / (strategy + "_b") / "batches") &&
        testing::slurp(dir.str(strategy + "_a/curves.csv")) ==
            testing::slurp(dir.str(strategy + "_b/curves.csv")) &&
        !testing::slurp(dir.str(strategy + "_a/curves.csv")).empty();
    pass = pass && same;
    detail += " " + strategy + (same ? "=identical" : "=DIFFERENT");
  }
  return {pass, "repeated runs:" + detail};
}

struct Criterion {
  Criterion(std::string n, std::function<Outcome()> r, std::string known = "")
      : name(std::move(n)), run(std::move(r)), known_limitation(std::move(known)) {}
  std::string name;
  std::function<Outcome()> run;
  std::string known_limitation;  // non-empty: a failure here does not fail the run
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"decay fit recovery", decay_recovery},
      {"objective monotone and submodular", monotone_submodular},
      {"greedy within 1-1/e of optimum", greedy_bound},
      {"synthetic trend: EDG over Div and RND", synthetic_trend},
      {"US picks more noise words than EDG", noise_robustness},
      {"US+EDG_ext2 at least as good as US", uncertainty_decay},
      {"pseudo-label self-consistency", pseudo_pool,
       "the count tagger retrained on its own argmax labels does not reproduce them"},
      {"micro-F1 against brute force", metric_oracle},
      {"decay objective gradient", gradient_check},
      {"simulate is deterministic", determinism},
  };
  int failures = 0, known = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& c = criteria[i];
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::string note;
    if (!o.pass && !c.known_limitation.empty()) {
      ++known;
      note = " [known limitation: " + c.known_limitation + "]";
    } else if (!o.pass) {
      ++failures;
    } else if (!c.known_limitation.empty()) {
      note = " [listed as a known limitation but passed]";
    }
    std::printf("criterion %zu %s: %s | %s%s\n", i + 1, o.pass ? "PASS" : "FAIL", c.name.c_str(),
                o.detail.c_str(), note.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed (%d known limitation, %d unexpected)\n",
              failures + known, criteria.size(), known, failures);
  return failures ? 1 : 0;
}
