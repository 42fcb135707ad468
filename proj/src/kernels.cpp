#include "edg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace edg::kernels {

namespace {

inline void nearest_one(const double* p, std::size_t dim, std::span<const double> centers,
                        std::size_t k, std::uint32_t& best, double& best_d2) {
  best = 0;
  best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    const double* q = centers.data() + c * dim;
    double d2 = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = p[d] - q[d];
      d2 += diff * diff;
    }
    if (d2 < best_d2) {
      best_d2 = d2;
      best = static_cast<std::uint32_t>(c);
    }
  }
}

inline double edg_score_one(std::span<const CurveView> curves,
                            std::span<const ProfileView> profiles, std::size_t s,
                            double length, double epsilon, std::uint8_t& fault) {
  const std::size_t f = curves.size();
  double log_sum = 0.0;
  fault = 0;
  for (std::size_t p = 0; p < f; ++p) {
    double factor = partition_gain(curves[p], profiles[p], s) / length + epsilon;
    if (!(factor > 0.0)) {
      factor = 1e-12;
      fault = 1;
    }
    log_sum += std::log(factor);
  }
  return std::exp(log_sum / static_cast<double>(f));
}

inline double facility_gain_one(const SparseRows& rows, std::span<const double> coverage,
                                std::size_t c, std::vector<double>& scratch) {
  std::fill(scratch.begin(), scratch.end(), 0.0);
  rows.scatter(c, scratch);
  const std::size_t n = coverage.size();
  double gain = 0.0;
  for (std::size_t x = 0; x < n; ++x) {
    const double delta = 1.0 + rows.dot(x, scratch.data()) - coverage[x];
    if (delta > 0.0) gain += delta;
  }
  return gain;
}

}  // namespace

void assign_nearest_serial(std::span<const double> points, std::size_t dim,
                           std::span<const double> centers, std::span<std::uint32_t> assignment,
                           std::span<double> distance2) {
  const std::size_t n = assignment.size();
  const std::size_t k = centers.size() / dim;
  for (std::size_t i = 0; i < n; ++i)
    nearest_one(points.data() + i * dim, dim, centers, k, assignment[i], distance2[i]);
}

void assign_nearest_parallel(std::span<const double> points, std::size_t dim,
                             std::span<const double> centers,
                             std::span<std::uint32_t> assignment, std::span<double> distance2) {
  const auto n = static_cast<std::ptrdiff_t>(assignment.size());
  const std::size_t k = centers.size() / dim;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    nearest_one(points.data() + i * dim, dim, centers, k, assignment[i], distance2[i]);
}

double partition_gain(const CurveView& curve, const ProfileView& profile, std::size_t s) {
  double gain = 0.0;
  for (std::size_t k = profile.offsets[s]; k < profile.offsets[s + 1]; ++k) {
    const std::uint32_t g = profile.groups[k];
    const double da = curve.da_mass[g];
    if (da == 0.0) continue;
    const double after = eval_curve(*curve.params, g, curve.train_mass[g] + profile.masses[k]);
    gain += da * (curve.current_error[g] - after);
  }
  return gain;
}

void edg_scores_serial(std::span<const CurveView> curves, std::span<const ProfileView> profiles,
                       std::span<const std::size_t> lengths, std::span<const std::size_t> candidates,
                       double epsilon, std::span<double> scores, std::span<std::uint8_t> faults) {
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const std::size_t s = candidates[i];
    scores[i] = edg_score_one(curves, profiles, s, static_cast<double>(lengths[s]), epsilon,
                              faults[i]);
  }
}

void edg_scores_parallel(std::span<const CurveView> curves,
                         std::span<const ProfileView> profiles,
                         std::span<const std::size_t> lengths,
                         std::span<const std::size_t> candidates, double epsilon,
                         std::span<double> scores, std::span<std::uint8_t> faults) {
  const auto n = static_cast<std::ptrdiff_t>(candidates.size());
#pragma omp parallel for schedule(dynamic, 256)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const std::size_t s = candidates[i];
    scores[i] = edg_score_one(curves, profiles, s, static_cast<double>(lengths[s]), epsilon,
                              faults[i]);
  }
}

SparseRows SparseRows::from_dense(std::span<const double> rows, std::size_t dim) {
  SparseRows out;
  out.dim = dim;
  const std::size_t n = dim ? rows.size() / dim : 0;
  out.offsets.reserve(n + 1);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double v = rows[r * dim + d];
      if (v != 0.0) {
        out.index.push_back(static_cast<std::uint32_t>(d));
        out.value.push_back(v);
      }
    }
    out.offsets.push_back(out.index.size());
  }
  return out;
}

void SparseRows::scatter(std::size_t r, std::span<double> dense) const {
  for (std::size_t k = offsets[r]; k < offsets[r + 1]; ++k) dense[index[k]] = value[k];
}

void facility_gains_serial(const SparseRows& embeddings, std::span<const double> coverage,
                           std::span<const std::size_t> candidates,
                           std::span<const double> lengths, std::span<double> gains) {
  std::vector<double> scratch(embeddings.dim);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const std::size_t c = candidates[i];
    gains[i] = facility_gain_one(embeddings, coverage, c, scratch) / lengths[c];
  }
}

void facility_gains_parallel(const SparseRows& embeddings, std::span<const double> coverage,
                             std::span<const std::size_t> candidates,
                             std::span<const double> lengths, std::span<double> gains) {
  const auto n = static_cast<std::ptrdiff_t>(candidates.size());
#pragma omp parallel
  {
    std::vector<double> scratch(embeddings.dim);
#pragma omp for schedule(dynamic, 16)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const std::size_t c = candidates[i];
      gains[i] = facility_gain_one(embeddings, coverage, c, scratch) / lengths[c];
    }
  }
}

}  // namespace edg::kernels
