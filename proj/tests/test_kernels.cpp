#include "doctest.h"

#include <cmath>
#include <random>

#include "edg/kernels.hpp"

using namespace edg;

TEST_CASE("assign_nearest: parallel equals serial") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  const std::size_t n = 5000, dim = 7, k = 13;
  std::vector<double> pts(n * dim), centers(k * dim);
  for (auto& x : pts) x = normal(rng);
  for (auto& x : centers) x = normal(rng);
  // Duplicate a center to exercise the tie rule.
  std::copy(centers.begin(), centers.begin() + dim, centers.begin() + 5 * dim);
  std::vector<std::uint32_t> a1(n), a2(n);
  std::vector<double> d1(n), d2(n);
  kernels::assign_nearest_serial(pts, dim, centers, a1, d1);
  kernels::assign_nearest_parallel(pts, dim, centers, a2, d2);
  CHECK(a1 == a2);
  CHECK(d1 == d2);
  for (auto a : a1) CHECK(a != 5);
}

TEST_CASE("facility_gains: parallel equals serial and matches a direct sum") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  const std::size_t n = 800, dim = 5;
  std::vector<double> emb(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0;
    for (std::size_t d = 0; d < dim; ++d) {
      emb[i * dim + d] = normal(rng);
      norm += emb[i * dim + d] * emb[i * dim + d];
    }
    for (std::size_t d = 0; d < dim; ++d) emb[i * dim + d] /= std::sqrt(norm);
  }
  std::vector<double> coverage(n), lengths(n);
  for (std::size_t i = 0; i < n; ++i) {
    coverage[i] = 2.0 * static_cast<double>(rng() % 100) / 100.0;
    lengths[i] = 1 + static_cast<double>(rng() % 20);
  }
  std::vector<std::size_t> cand;
  for (std::size_t i = 0; i < n; i += 3) cand.push_back(i);
  std::vector<double> g1(cand.size()), g2(cand.size());
  const auto rows = kernels::SparseRows::from_dense(emb, dim);
  kernels::facility_gains_serial(rows, coverage, cand, lengths, g1);
  kernels::facility_gains_parallel(rows, coverage, cand, lengths, g2);
  CHECK(g1 == g2);
  for (std::size_t c = 0; c < cand.size(); c += 17) {
    double expect = 0;
    for (std::size_t x = 0; x < n; ++x) {
      double cos = 0;
      for (std::size_t d = 0; d < dim; ++d) cos += emb[x * dim + d] * emb[cand[c] * dim + d];
      expect += std::max(0.0, 1.0 + cos - coverage[x]);
    }
    CHECK(g1[c] == doctest::Approx(expect / lengths[cand[c]]).epsilon(1e-12));
  }
}

TEST_CASE("facility_gains on sparse rows equal the dense computation exactly") {
  std::mt19937_64 rng(4);
  const std::size_t n = 300, dim = 40;
  std::vector<double> emb(n * dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t len = i % 7 == 0 ? 0 : 1 + rng() % 6;
    for (std::size_t k = 0; k < len; ++k) emb[i * dim + rng() % dim] += 1.0;
    double norm = 0;
    for (std::size_t d = 0; d < dim; ++d) norm += emb[i * dim + d] * emb[i * dim + d];
    if (norm > 0)
      for (std::size_t d = 0; d < dim; ++d) emb[i * dim + d] /= std::sqrt(norm);
  }
  const auto rows = kernels::SparseRows::from_dense(emb, dim);
  CHECK(rows.rows() == n);
  CHECK(rows.index.size() < n * 6);
  std::vector<double> coverage(n), lengths(n, 1.0);
  for (auto& c : coverage) c = static_cast<double>(rng() % 200) / 100.0;
  std::vector<std::size_t> cand(n);
  for (std::size_t i = 0; i < n; ++i) cand[i] = i;
  std::vector<double> g(n);
  kernels::facility_gains_serial(rows, coverage, cand, lengths, g);
  for (std::size_t c = 0; c < n; ++c) {
    double expect = 0;
    for (std::size_t x = 0; x < n; ++x) {
      double dot = 0;
      for (std::size_t d = 0; d < dim; ++d) dot += emb[c * dim + d] * emb[x * dim + d];
      const double delta = 1.0 + dot - coverage[x];
      if (delta > 0.0) expect += delta;
    }
    CHECK(g[c] == expect);
  }
}

TEST_CASE("edg_scores: parallel equals serial and matches the definition") {
  std::mt19937_64 rng(3);
  auto unif = [&] { return static_cast<double>(rng() % 10000) / 10000.0; };
  const std::size_t groups = 30, sentences = 400;
  std::vector<DecayParams> params(2);
  std::vector<std::vector<double>> train(2), da(2), cur(2);
  for (int p = 0; p < 2; ++p) {
    params[p].a0 = 0.01 + unif();
    params[p].a_half = unif();
    params[p].a1 = unif();
    params[p].a2 = unif();
    params[p].a3 = unif();
    for (std::size_t j = 0; j < groups; ++j) {
      params[p].b.push_back(unif());
      params[p].c.push_back(unif() * 0.2);
      train[p].push_back(1 + 100 * unif());
      da[p].push_back(10 + 1000 * unif());
      cur[p].push_back(eval_curve(params[p], j, train[p][j]));
    }
  }
  std::vector<std::vector<std::size_t>> off(2, {0});
  std::vector<std::vector<std::uint32_t>> grp(2);
  std::vector<std::vector<double>> mass(2);
  std::vector<std::size_t> lengths(sentences);
  for (std::size_t s = 0; s < sentences; ++s) {
    lengths[s] = 1 + rng() % 15;
    for (int p = 0; p < 2; ++p) {
      const std::size_t touched = 1 + rng() % 4;
      for (std::size_t k = 0; k < touched; ++k) {
        grp[p].push_back(static_cast<std::uint32_t>((k * 7 + s) % groups));
        mass[p].push_back(1 + static_cast<double>(rng() % 3));
      }
      off[p].push_back(grp[p].size());
    }
  }
  std::vector<kernels::CurveView> curves;
  std::vector<kernels::ProfileView> profiles;
  for (int p = 0; p < 2; ++p) {
    curves.push_back({&params[p], train[p], da[p], cur[p]});
    profiles.push_back({off[p], grp[p], mass[p]});
  }
  std::vector<std::size_t> cand(sentences);
  for (std::size_t s = 0; s < sentences; ++s) cand[s] = s;
  std::vector<double> s1(sentences), s2(sentences);
  std::vector<std::uint8_t> f1(sentences), f2(sentences);
  kernels::edg_scores_serial(curves, profiles, lengths, cand, 0.001, s1, f1);
  kernels::edg_scores_parallel(curves, profiles, lengths, cand, 0.001, s2, f2);
  CHECK(s1 == s2);
  CHECK(f1 == f2);
  for (std::size_t s = 0; s < sentences; s += 13) {
    double prod = 1;
    for (int p = 0; p < 2; ++p) {
      std::vector<double> after = train[p];
      for (std::size_t k = off[p][s]; k < off[p][s + 1]; ++k) after[grp[p][k]] += mass[p][k];
      double h0 = 0, h1 = 0;
      for (std::size_t j = 0; j < groups; ++j) {
        h0 -= eval_curve(params[p], j, train[p][j]) * da[p][j];
        h1 -= eval_curve(params[p], j, after[j]) * da[p][j];
      }
      prod *= (h1 - h0) / static_cast<double>(lengths[s]) + 0.001;
    }
    CHECK(s1[s] == doctest::Approx(std::sqrt(prod)).epsilon(1e-9));
    CHECK(f1[s] == 0);
  }
}
