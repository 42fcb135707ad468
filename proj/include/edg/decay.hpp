#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "edg/partition.hpp"

namespace edg {

inline constexpr double kA0Min = 1e-6;

// Fractional-polynomial error decay
//   e_j(n) = c_j + b_j * (a_half / (a0 n)^0.5 + sum_k a_k / (a0 n)^k),  k = 1..3
// with the a-coefficients shared by every group of a partition. Below n = 1
// the curve continues along its tangent at n = 1.
struct DecayParams {
  double a0 = 1.0;
  double a_half = 1.0;
  double a1 = 0.0;
  double a2 = 0.0;
  double a3 = 0.0;
  std::vector<double> b;
  std::vector<double> c;

  std::size_t group_count() const { return b.size(); }
  std::size_t parameter_count() const { return 2 * b.size() + 5; }

  // Packed order: a0, a_half, a1, a2, a3, b[0..J), c[0..J).
  std::vector<double> pack() const;
  static DecayParams unpack(std::span<const double> theta);
  bool feasible() const;
};

// Basis sum a_half/(a0 n)^0.5 + sum a_k/(a0 n)^k (tangent-extended below n = 1).
double decay_basis(const DecayParams& params, double n);
// Unclamped model output, used for residuals and gains.
double eval_curve(const DecayParams& params, std::size_t group, double n);
// Model output clamped to [0, 1] for reports.
double eval_curve_report(const DecayParams& params, std::size_t group, double n);

// Per-group weight w_j and per-point weight v_tj (indexed [t][j]).
struct DecayWeights {
  std::vector<double> group;
  std::vector<std::vector<double>> point;
};

// w_j = min(100, validation mass); v_tj = 3 at the checkpoint with the
// lowest error of group j (earliest on ties), 1 elsewhere.
DecayWeights default_weights(std::span<const GroupErrorRecord> history);
DecayWeights unit_weights(std::span<const GroupErrorRecord> history);

// sum_j w_j sum_t v_tj (e_j(train_mass_tj) - val_error_tj)^2, skipping
// zero-mass points.
double decay_objective(const DecayParams& params, std::span<const GroupErrorRecord> history,
                       const DecayWeights& weights);
// Objective plus its gradient in packed order.
double decay_objective_gradient(const DecayParams& params,
                                std::span<const GroupErrorRecord> history,
                                const DecayWeights& weights, std::span<double> gradient);

struct FitConfig {
  std::size_t restarts = 8;
  std::size_t max_iterations = 400;
  double tolerance = 1e-13;  // relative objective decrease treated as converged
  std::uint64_t seed = 0;
};

struct DecayFit {
  DecayParams params;
  std::vector<GroupErrorRecord> history;
  DecayWeights weights;
  double objective_value = 0.0;
  bool converged = false;
  // Objective after each accepted iteration of the winning start.
  std::vector<double> trace;
  // Best objective reached from each start.
  std::vector<double> start_objectives;
};

// Deterministic initial point: a0 = 1/mean train mass, a_half = 1,
// a1..3 = 0.01, c_j = min observed error, b_j = max(first error - c_j, 0.01).
DecayParams initial_params(std::span<const GroupErrorRecord> history,
                           const DecayWeights& weights);

// Bound-constrained weighted least squares over the non-negative orthant
// (a0 >= kA0Min), multi-start. Requires >= 2 checkpoints and at least one
// group with positive weight.
DecayFit fit_decay(std::span<const GroupErrorRecord> history, const DecayWeights& weights,
                   const FitConfig& config = {});

// Text format: a header row with the shared coefficients, then one
// "id,b,c" row per group.
void write_decay_fit(const DecayFit& fit, std::ostream& out);
DecayParams read_decay_params(std::istream& in);

}  // namespace edg
