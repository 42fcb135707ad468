// Serial reference vs OpenMP timings for the data-parallel kernels.
//   bench_kernels [--scale S] [--repeat R]

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "edg/kernels.hpp"
#include "edg/simlab.hpp"

using namespace edg;

namespace {

double best_of(int repeat, const std::function<void()>& f) {
  double best = 1e300;
  for (int r = 0; r < repeat; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

void report(const std::string& name, double serial, double parallel, bool same) {
  std::printf("%-22s %10.4f %10.4f %8.2fx  %s\n", name.c_str(), serial, parallel,
              serial / parallel, same ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel benchmark"};
  double scale = 1.0;
  int repeat = 3;
  app.add_option("--scale", scale, "Problem size multiplier");
  app.add_option("--repeat", repeat, "Timed repetitions (best is reported)");
  CLI11_PARSE(app, argc, argv);
  auto sized = [&](double n) { return std::max<std::size_t>(1, static_cast<std::size_t>(n * scale)); };

  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-22s %10s %10s %9s\n", "kernel", "serial s", "openmp s", "speedup");
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;

  {
    const std::size_t n = sized(200000), dim = 50, k = 256;
    std::vector<double> pts(n * dim), centers(k * dim);
    for (auto& x : pts) x = normal(rng);
    for (auto& x : centers) x = normal(rng);
    std::vector<std::uint32_t> a1(n), a2(n);
    std::vector<double> d1(n), d2(n);
    const double s = best_of(repeat, [&] { kernels::assign_nearest_serial(pts, dim, centers, a1, d1); });
    const double p = best_of(repeat, [&] { kernels::assign_nearest_parallel(pts, dim, centers, a2, d2); });
    report("assign_nearest", s, p, a1 == a2 && d1 == d2);
  }

  {
    const std::size_t n = sized(6000), dim = 100;
    std::vector<double> emb(n * dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t len = 5 + rng() % 20;
      for (std::size_t t = 0; t < len; ++t) emb[i * dim + rng() % dim] += 1.0;
      double norm = 0.0;
      for (std::size_t d = 0; d < dim; ++d) norm += emb[i * dim + d] * emb[i * dim + d];
      for (std::size_t d = 0; d < dim; ++d) emb[i * dim + d] /= std::sqrt(norm);
    }
    const auto rows = kernels::SparseRows::from_dense(emb, dim);
    std::vector<double> coverage(n), lengths(n);
    std::vector<std::size_t> cand(n);
    for (std::size_t i = 0; i < n; ++i) {
      coverage[i] = 1.0 + 0.5 * static_cast<double>(rng() % 100) / 100.0;
      lengths[i] = 5.0 + static_cast<double>(rng() % 20);
      cand[i] = i;
    }
    std::vector<double> g1(n), g2(n);
    const double s = best_of(repeat, [&] { kernels::facility_gains_serial(rows, coverage, cand, lengths, g1); });
    const double p = best_of(repeat, [&] { kernels::facility_gains_parallel(rows, coverage, cand, lengths, g2); });
    report("facility_gains", s, p, g1 == g2);
  }

  {
    const std::size_t groups = 500, sentences = sized(400000), parts = 3;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<DecayParams> params(parts);
    std::vector<std::vector<double>> train(parts), da(parts), cur(parts);
    std::vector<std::vector<std::size_t>> off(parts, {0});
    std::vector<std::vector<std::uint32_t>> grp(parts);
    std::vector<std::vector<double>> mass(parts);
    for (std::size_t p = 0; p < parts; ++p) {
      params[p].a0 = 0.01 + 0.1 * u(rng);
      params[p].a_half = u(rng);
      params[p].a1 = u(rng);
      for (std::size_t j = 0; j < groups; ++j) {
        params[p].b.push_back(u(rng));
        params[p].c.push_back(0.2 * u(rng));
        train[p].push_back(1 + 200 * u(rng));
        da[p].push_back(10 + 1000 * u(rng));
        cur[p].push_back(eval_curve(params[p], j, train[p][j]));
      }
    }
    std::vector<std::size_t> lengths(sentences), cand(sentences);
    for (std::size_t s = 0; s < sentences; ++s) {
      lengths[s] = 5 + rng() % 30;
      cand[s] = s;
      for (std::size_t p = 0; p < parts; ++p) {
        for (std::size_t t = 0; t < std::min<std::size_t>(lengths[s], 12); ++t) {
          grp[p].push_back(static_cast<std::uint32_t>(rng() % groups));
          mass[p].push_back(1.0);
        }
        off[p].push_back(grp[p].size());
      }
    }
    std::vector<kernels::CurveView> curves;
    std::vector<kernels::ProfileView> profiles;
    for (std::size_t p = 0; p < parts; ++p) {
      curves.push_back({&params[p], train[p], da[p], cur[p]});
      profiles.push_back({off[p], grp[p], mass[p]});
    }
    std::vector<double> s1(sentences), s2(sentences);
    std::vector<std::uint8_t> f1(sentences), f2(sentences);
    const double s = best_of(repeat, [&] {
      kernels::edg_scores_serial(curves, profiles, lengths, cand, 0.001, s1, f1);
    });
    const double p = best_of(repeat, [&] {
      kernels::edg_scores_parallel(curves, profiles, lengths, cand, 0.001, s2, f2);
    });
    report("edg_scores", s, p, s1 == s2 && f1 == f2);
  }

  {
    SynthSpec spec;
    spec.seed = 3;
    const auto train = gen_synthetic(spec, sized(100000), 0);
    const auto tagset = tagset_of({&train});
    std::vector<ReferenceTagger> serial, parallel;
    const int threads = omp_get_max_threads();
    const double s = best_of(repeat, [&] {
      omp_set_num_threads(1);
      serial = train_bootstrap_ensemble(train, tagset, 1.0, 10, 7);
      omp_set_num_threads(threads);
    });
    const double p = best_of(repeat, [&] { parallel = train_bootstrap_ensemble(train, tagset, 1.0, 10, 7); });
    bool same = serial.size() == parallel.size();
    const auto probe = gen_synthetic(spec, 2000, 9);
    for (std::size_t k = 0; same && k < serial.size(); ++k)
      same = tagger_predict(serial[k], probe, true).records.front().logprobs ==
             tagger_predict(parallel[k], probe, true).records.front().logprobs;
    report("bootstrap_ensemble", s, p, same);
  }
  return 0;
}
