#pragma once

// Data-parallel inner loops. Each kernel has a serial reference and an
// OpenMP version with identical results; tests compare the two and
// bench/ times them.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "edg/decay.hpp"

namespace edg::kernels {

// Nearest center (squared Euclidean) for each of n points; ties go to the
// lower center index.
void assign_nearest_serial(std::span<const double> points, std::size_t dim,
                           std::span<const double> centers, std::span<std::uint32_t> assignment,
                           std::span<double> distance2);
void assign_nearest_parallel(std::span<const double> points, std::size_t dim,
                             std::span<const double> centers,
                             std::span<std::uint32_t> assignment, std::span<double> distance2);

// One partition's fitted curve and current group masses.
struct CurveView {
  const DecayParams* params = nullptr;
  std::span<const double> train_mass;
  std::span<const double> da_mass;
  std::span<const double> current_error;  // eval_curve at train_mass
};

// CSR mass contributions of every pool sentence for one partition.
struct ProfileView {
  std::span<const std::size_t> offsets;  // size = sentences + 1
  std::span<const std::uint32_t> groups;
  std::span<const double> masses;
};

// Marginal objective gain of adding sentence `s` under one partition:
// sum over touched groups of da_mass * (e(n) - e(n + m)).
double partition_gain(const CurveView& curve, const ProfileView& profile, std::size_t s);

// Geometric-mean EDG score per candidate:
//   (prod_p (gain_p / |s| + eps))^(1/F).
// Factors <= 0 are clamped to 1e-12 and counted in `faults[i]`.
void edg_scores_serial(std::span<const CurveView> curves, std::span<const ProfileView> profiles,
                       std::span<const std::size_t> lengths, std::span<const std::size_t> candidates,
                       double epsilon, std::span<double> scores, std::span<std::uint8_t> faults);
void edg_scores_parallel(std::span<const CurveView> curves,
                         std::span<const ProfileView> profiles,
                         std::span<const std::size_t> lengths,
                         std::span<const std::size_t> candidates, double epsilon,
                         std::span<double> scores, std::span<std::uint8_t> faults);

// Embedding rows with zero entries dropped. Dot products skip only zero
// terms, so they equal the dense ones exactly.
struct SparseRows {
  std::size_t dim = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::uint32_t> index;
  std::vector<double> value;

  static SparseRows from_dense(std::span<const double> rows, std::size_t dim);
  std::size_t rows() const { return offsets.size() - 1; }
  // Row r scattered into a zeroed buffer of size dim.
  void scatter(std::size_t r, std::span<double> dense) const;
  double dot(std::size_t r, const double* dense) const {
    double s = 0.0;
    for (std::size_t k = offsets[r]; k < offsets[r + 1]; ++k) s += dense[index[k]] * value[k];
    return s;
  }
};

// Facility-location gain of each candidate over the ground set:
//   sum_x max(0, sim(x, c) - coverage[x]) / length[c],  sim = 1 + cos.
// Rows are unit-normalized (zero rows allowed).
void facility_gains_serial(const SparseRows& embeddings, std::span<const double> coverage,
                           std::span<const std::size_t> candidates,
                           std::span<const double> lengths, std::span<double> gains);
void facility_gains_parallel(const SparseRows& embeddings, std::span<const double> coverage,
                             std::span<const std::size_t> candidates,
                             std::span<const double> lengths, std::span<double> gains);

}  // namespace edg::kernels
