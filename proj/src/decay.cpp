#include "edg/decay.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include <Eigen/Dense>

#include "edg/error.hpp"
#include "edg/rng.hpp"

namespace edg {

namespace {

constexpr std::size_t kShared = 5;

struct Point {
  std::size_t group;
  double n;
  double y;
  double weight;  // w_j * v_tj
};

std::vector<Point> collect_points(std::span<const GroupErrorRecord> history,
                                  const DecayWeights& weights) {
  std::vector<Point> pts;
  for (std::size_t t = 0; t < history.size(); ++t) {
    const auto& rec = history[t];
    for (std::size_t j = 0; j < rec.group_count(); ++j) {
      if (!rec.zero_mass.empty() && rec.zero_mass[j]) continue;
      const double w = weights.group[j] * weights.point[t][j];
      if (w <= 0.0) continue;
      pts.push_back({j, rec.train_mass[j], rec.val_error[j], w});
    }
  }
  return pts;
}

// Terms (a0 n)^-k for k = 0.5, 1, 2, 3. Below n = 1 each term follows its
// tangent at n = 1, a0^-k (1 + k (1 - n)), so the curve stays convex and
// non-increasing down to n = 0. Both forms have d/da0 = -k/a0 * term.
struct Powers {
  double h, p1, p2, p3;
};

Powers powers(double a0, double n) {
  const double p1 = 1.0 / (a0 * std::max(n, 1.0));
  Powers w{std::sqrt(p1), p1, p1 * p1, p1 * p1 * p1};
  if (n < 1.0) {
    const double d = 1.0 - std::max(n, 0.0);
    w.h *= 1.0 + 0.5 * d;
    w.p1 *= 1.0 + d;
    w.p2 *= 1.0 + 2.0 * d;
    w.p3 *= 1.0 + 3.0 * d;
  }
  return w;
}

double basis(const DecayParams& p, const Powers& w) {
  return p.a_half * w.h + p.a1 * w.p1 + p.a2 * w.p2 + p.a3 * w.p3;
}

// Residuals, objective, half-gradient J^T W r and Gauss-Newton blocks of
// J^T W J in arrow form (shared 5x5, per-group 5x2 and 2x2).
struct Linearization {
  double objective = 0.0;
  std::vector<double> grad;  // packed order, half-gradient
  Eigen::Matrix<double, 5, 5> ss = Eigen::Matrix<double, 5, 5>::Zero();
  std::vector<Eigen::Matrix<double, 5, 2>> sg;
  std::vector<Eigen::Matrix2d> gg;
};

Linearization linearize(const DecayParams& p, const std::vector<Point>& pts, bool with_blocks) {
  const std::size_t j_count = p.group_count();
  Linearization lin;
  lin.grad.assign(p.parameter_count(), 0.0);
  if (with_blocks) {
    lin.sg.assign(j_count, Eigen::Matrix<double, 5, 2>::Zero());
    lin.gg.assign(j_count, Eigen::Matrix2d::Zero());
  }
  for (const auto& pt : pts) {
    const Powers w = powers(p.a0, pt.n);
    const double s = basis(p, w);
    const double b = p.b[pt.group];
    const double r = p.c[pt.group] + b * s - pt.y;
    lin.objective += pt.weight * r * r;

    Eigen::Matrix<double, 5, 1> js;
    js(0) = b * (-0.5 * p.a_half * w.h - p.a1 * w.p1 - 2.0 * p.a2 * w.p2 - 3.0 * p.a3 * w.p3) /
            p.a0;
    js(1) = b * w.h;
    js(2) = b * w.p1;
    js(3) = b * w.p2;
    js(4) = b * w.p3;
    const Eigen::Vector2d jg(s, 1.0);
    const double wr = pt.weight * r;
    for (std::size_t k = 0; k < kShared; ++k) lin.grad[k] += wr * js(k);
    lin.grad[kShared + pt.group] += wr * jg(0);
    lin.grad[kShared + j_count + pt.group] += wr * jg(1);
    if (with_blocks) {
      lin.ss.noalias() += pt.weight * js * js.transpose();
      lin.sg[pt.group].noalias() += pt.weight * js * jg.transpose();
      lin.gg[pt.group].noalias() += pt.weight * jg * jg.transpose();
    }
  }
  return lin;
}

double objective_of(const DecayParams& p, const std::vector<Point>& pts) {
  double f = 0.0;
  for (const auto& pt : pts) {
    const double r = eval_curve(p, pt.group, pt.n) - pt.y;
    f += pt.weight * r * r;
  }
  return f;
}

double lower_bound(std::size_t index) { return index == 0 ? kA0Min : 0.0; }

// Solves (A + lambda D) delta = -g restricted to the free variables using
// the arrow structure; fixed variables get delta = 0.
std::vector<double> damped_step(const Linearization& lin, const std::vector<bool>& fixed,
                                double lambda) {
  const std::size_t m = lin.grad.size();
  const std::size_t j_count = (m - kShared) / 2;
  auto damp = [&](double a) { return a + lambda * std::max(a, 1e-12); };

  Eigen::Matrix<double, 5, 5> schur = lin.ss;
  Eigen::Matrix<double, 5, 1> rhs_s;
  for (std::size_t k = 0; k < kShared; ++k) {
    schur(k, k) = damp(lin.ss(k, k));
    rhs_s(k) = -lin.grad[k];
  }
  std::vector<Eigen::Matrix2d> inv(j_count);
  std::vector<Eigen::Matrix<double, 5, 2>> coupling(j_count);
  std::vector<Eigen::Vector2d> rhs_g(j_count);
  for (std::size_t j = 0; j < j_count; ++j) {
    Eigen::Matrix2d b = lin.gg[j];
    b(0, 0) = damp(b(0, 0));
    b(1, 1) = damp(b(1, 1));
    Eigen::Matrix<double, 5, 2> c = lin.sg[j];
    Eigen::Vector2d r(-lin.grad[kShared + j], -lin.grad[kShared + j_count + j]);
    const std::size_t idx[2] = {kShared + j, kShared + j_count + j};
    for (int q = 0; q < 2; ++q) {
      if (!fixed[idx[q]]) continue;
      b.row(q).setZero();
      b.col(q).setZero();
      b(q, q) = 1.0;
      c.col(q).setZero();
      r(q) = 0.0;
    }
    inv[j] = b.inverse();
    coupling[j] = c;
    rhs_g[j] = r;
  }
  for (std::size_t k = 0; k < kShared; ++k) {
    if (!fixed[k]) continue;
    schur.row(k).setZero();
    schur.col(k).setZero();
    schur(k, k) = 1.0;
    rhs_s(k) = 0.0;
    for (auto& c : coupling) c.row(k).setZero();
  }
  for (std::size_t j = 0; j < j_count; ++j) {
    schur.noalias() -= coupling[j] * inv[j] * coupling[j].transpose();
    rhs_s.noalias() -= coupling[j] * (inv[j] * rhs_g[j]);
  }
  const Eigen::Matrix<double, 5, 1> ds = schur.ldlt().solve(rhs_s);
  std::vector<double> delta(m, 0.0);
  for (std::size_t k = 0; k < kShared; ++k) delta[k] = fixed[k] ? 0.0 : ds(k);
  for (std::size_t j = 0; j < j_count; ++j) {
    const Eigen::Vector2d dg = inv[j] * (rhs_g[j] - coupling[j].transpose() * ds);
    delta[kShared + j] = fixed[kShared + j] ? 0.0 : dg(0);
    delta[kShared + j_count + j] = fixed[kShared + j_count + j] ? 0.0 : dg(1);
  }
  return delta;
}

struct StartResult {
  DecayParams params;
  double objective = 0.0;
  bool converged = false;
  std::vector<double> trace;
};

// Projected Levenberg-Marquardt. Every accepted step strictly lowers the
// objective, so the trace is monotone.
StartResult minimize(DecayParams start, const std::vector<Point>& pts,
                     const std::vector<bool>& dead_group, const FitConfig& config) {
  const std::size_t j_count = start.group_count();
  StartResult res;
  std::vector<double> theta = start.pack();
  const std::size_t m = theta.size();
  for (std::size_t i = 0; i < m; ++i) theta[i] = std::max(theta[i], lower_bound(i));
  DecayParams cur = DecayParams::unpack(theta);
  Linearization lin = linearize(cur, pts, true);
  double f = lin.objective;
  res.trace.push_back(f);
  double lambda = 1e-3;
  int small_steps = 0;

  for (std::size_t it = 0; it < config.max_iterations; ++it) {
    if (f <= 1e-30) {
      res.converged = true;
      break;
    }
    std::vector<bool> fixed(m, false);
    double pg = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const bool dead = i >= kShared && dead_group[(i - kShared) % j_count];
      fixed[i] = dead || (theta[i] <= lower_bound(i) && lin.grad[i] > 0.0);
      if (!fixed[i]) pg = std::max(pg, std::abs(lin.grad[i]));
    }
    if (pg <= 1e-15 * (1.0 + f)) {
      res.converged = true;
      break;
    }
    bool accepted = false;
    std::vector<double> trial(m);
    double f_trial = f;
    while (lambda < 1e16) {
      const auto delta = damped_step(lin, fixed, lambda);
      for (std::size_t i = 0; i < m; ++i)
        trial[i] = std::max(theta[i] + delta[i], lower_bound(i));
      f_trial = objective_of(DecayParams::unpack(trial), pts);
      if (std::isfinite(f_trial) && f_trial < f) {
        accepted = true;
        lambda = std::max(lambda / 3.0, 1e-12);
        break;
      }
      lambda *= 4.0;
    }
    if (!accepted) {
      res.converged = true;
      break;
    }
    const double decrease = f - f_trial;
    theta = trial;
    f = f_trial;
    res.trace.push_back(f);
    cur = DecayParams::unpack(theta);
    lin = linearize(cur, pts, true);
    small_steps = decrease <= config.tolerance * f ? small_steps + 1 : 0;
    if (small_steps >= 3) {
      res.converged = true;
      break;
    }
  }
  res.params = cur;
  res.objective = f;
  return res;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

std::vector<double> DecayParams::pack() const {
  std::vector<double> t{a0, a_half, a1, a2, a3};
  t.insert(t.end(), b.begin(), b.end());
  t.insert(t.end(), c.begin(), c.end());
  return t;
}

DecayParams DecayParams::unpack(std::span<const double> theta) {
  if (theta.size() < kShared || (theta.size() - kShared) % 2 != 0)
    throw ParameterError("packed decay parameter vector has wrong length");
  const std::size_t j = (theta.size() - kShared) / 2;
  DecayParams p;
  p.a0 = theta[0];
  p.a_half = theta[1];
  p.a1 = theta[2];
  p.a2 = theta[3];
  p.a3 = theta[4];
  p.b.assign(theta.begin() + kShared, theta.begin() + kShared + j);
  p.c.assign(theta.begin() + kShared + j, theta.end());
  return p;
}

bool DecayParams::feasible() const {
  if (!(a0 >= kA0Min) || a_half < 0 || a1 < 0 || a2 < 0 || a3 < 0) return false;
  for (double x : b)
    if (x < 0) return false;
  for (double x : c)
    if (x < 0) return false;
  return true;
}

double decay_basis(const DecayParams& params, double n) {
  return basis(params, powers(params.a0, n));
}

double eval_curve(const DecayParams& params, std::size_t group, double n) {
  return params.c[group] + params.b[group] * decay_basis(params, n);
}

double eval_curve_report(const DecayParams& params, std::size_t group, double n) {
  return std::clamp(eval_curve(params, group, n), 0.0, 1.0);
}

DecayWeights default_weights(std::span<const GroupErrorRecord> history) {
  if (history.empty()) throw ParameterError("decay weights need a non-empty history");
  const std::size_t j_count = history.front().group_count();
  DecayWeights w;
  w.group.resize(j_count);
  const auto& last = history.back();
  for (std::size_t j = 0; j < j_count; ++j) w.group[j] = std::min(100.0, last.val_mass[j]);
  w.point.assign(history.size(), std::vector<double>(j_count, 1.0));
  for (std::size_t j = 0; j < j_count; ++j) {
    std::size_t best = 0;
    for (std::size_t t = 1; t < history.size(); ++t)
      if (history[t].val_error[j] < history[best].val_error[j]) best = t;
    w.point[best][j] = 3.0;
  }
  return w;
}

DecayWeights unit_weights(std::span<const GroupErrorRecord> history) {
  if (history.empty()) throw ParameterError("decay weights need a non-empty history");
  const std::size_t j_count = history.front().group_count();
  DecayWeights w;
  w.group.assign(j_count, 1.0);
  w.point.assign(history.size(), std::vector<double>(j_count, 1.0));
  return w;
}

double decay_objective(const DecayParams& params, std::span<const GroupErrorRecord> history,
                       const DecayWeights& weights) {
  return objective_of(params, collect_points(history, weights));
}

double decay_objective_gradient(const DecayParams& params,
                                std::span<const GroupErrorRecord> history,
                                const DecayWeights& weights, std::span<double> gradient) {
  const auto lin = linearize(params, collect_points(history, weights), false);
  for (std::size_t i = 0; i < lin.grad.size(); ++i) gradient[i] = 2.0 * lin.grad[i];
  return lin.objective;
}

DecayParams initial_params(std::span<const GroupErrorRecord> history,
                           const DecayWeights& weights) {
  const std::size_t j_count = history.front().group_count();
  DecayParams p;
  double mass_sum = 0.0;
  std::size_t mass_n = 0;
  for (const auto& rec : history)
    for (double m : rec.train_mass) {
      mass_sum += m;
      ++mass_n;
    }
  const double mean_mass = mass_n ? mass_sum / static_cast<double>(mass_n) : 0.0;
  p.a0 = mean_mass > 0.0 ? std::max(1.0 / mean_mass, kA0Min) : 1.0;
  p.a_half = 1.0;
  p.a1 = p.a2 = p.a3 = 0.01;
  p.b.assign(j_count, 0.0);
  p.c.assign(j_count, 0.0);
  for (std::size_t j = 0; j < j_count; ++j) {
    if (weights.group[j] <= 0.0) continue;
    double lo = std::numeric_limits<double>::infinity();
    double first = std::numeric_limits<double>::quiet_NaN();
    for (const auto& rec : history) {
      if (!rec.zero_mass.empty() && rec.zero_mass[j]) continue;
      if (std::isnan(first)) first = rec.val_error[j];
      lo = std::min(lo, rec.val_error[j]);
    }
    if (std::isnan(first)) continue;
    p.c[j] = lo;
    p.b[j] = std::max(first - lo, 0.01);
  }
  return p;
}

DecayFit fit_decay(std::span<const GroupErrorRecord> history, const DecayWeights& weights,
                   const FitConfig& config) {
  if (history.size() < 2)
    throw ParameterError("decay fit needs at least 2 checkpoints, got " +
                         std::to_string(history.size()));
  const std::size_t j_count = history.front().group_count();
  for (const auto& rec : history)
    if (rec.group_count() != j_count || rec.train_mass.size() != j_count)
      throw ParameterError("history records disagree on group count");
  if (weights.group.size() != j_count || weights.point.size() != history.size())
    throw ParameterError("decay weights do not match history");

  const auto pts = collect_points(history, weights);
  std::vector<bool> dead(j_count, true);
  for (const auto& pt : pts) dead[pt.group] = false;
  if (pts.empty()) throw ParameterError("decay fit: every group has zero weight");

  const DecayParams init = initial_params(history, weights);
  {
    const double f0 = objective_of(init, pts);
    if (!std::isfinite(f0)) {
      for (const auto& pt : pts)
        if (!std::isfinite(eval_curve(init, pt.group, pt.n)) || !std::isfinite(pt.y))
          throw NumericalError("non-finite decay objective in group " + std::to_string(pt.group));
      throw NumericalError("non-finite decay objective");
    }
  }

  const std::size_t starts = std::max<std::size_t>(1, config.restarts);
  std::vector<DecayParams> inits(starts, init);
  for (std::size_t r = 1; r < starts; ++r) {
    Rng rng = make_rng(config.seed, 0xdeca7 + r);
    auto& p = inits[r];
    p.a0 = std::max(init.a0 * std::pow(10.0, 3.0 * uniform01(rng) - 1.5), kA0Min);
    p.a_half = 0.1 + 2.9 * uniform01(rng);
    p.a1 = 0.5 * uniform01(rng);
    p.a2 = 0.1 * uniform01(rng);
    p.a3 = 0.01 * uniform01(rng);
    for (std::size_t j = 0; j < j_count; ++j) {
      if (dead[j]) continue;
      p.b[j] = init.b[j] * std::exp(1.4 * uniform01(rng) - 0.7);
      p.c[j] = init.c[j] * (0.5 + 0.5 * uniform01(rng));
    }
  }

  std::vector<StartResult> results(starts);
  const auto n_starts = static_cast<std::ptrdiff_t>(starts);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t r = 0; r < n_starts; ++r) results[r] = minimize(inits[r], pts, dead, config);

  std::size_t best = 0;
  for (std::size_t r = 1; r < starts; ++r)
    if (results[r].objective < results[best].objective) best = r;

  DecayFit fit;
  fit.params = results[best].params;
  for (std::size_t j = 0; j < j_count; ++j)
    if (dead[j]) fit.params.b[j] = fit.params.c[j] = 0.0;
  fit.history.assign(history.begin(), history.end());
  fit.weights = weights;
  fit.objective_value = objective_of(fit.params, pts);
  if (!std::isfinite(fit.objective_value)) throw NumericalError("decay fit diverged");
  fit.converged = results[best].converged;
  fit.trace = std::move(results[best].trace);
  for (const auto& r : results) fit.start_objectives.push_back(r.objective);
  return fit;
}

void write_decay_fit(const DecayFit& fit, std::ostream& out) {
  const auto& p = fit.params;
  out << "a0,a_half,a1,a2,a3,objective,converged\n";
  out << fmt(p.a0) << ',' << fmt(p.a_half) << ',' << fmt(p.a1) << ',' << fmt(p.a2) << ','
      << fmt(p.a3) << ',' << fmt(fit.objective_value) << ',' << (fit.converged ? 1 : 0) << '\n';
  out << "group,b,c\n";
  for (std::size_t j = 0; j < p.group_count(); ++j)
    out << j << ',' << fmt(p.b[j]) << ',' << fmt(p.c[j]) << '\n';
}

DecayParams read_decay_params(std::istream& in) {
  std::string line;
  auto next = [&](const char* what) {
    if (!std::getline(in, line)) throw FormatError(std::string("decay fit file: missing ") + what);
  };
  auto cells = [&] {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  next("header");
  next("coefficients");
  auto a = cells();
  if (a.size() < 5) throw FormatError("decay fit file: short coefficient row", 2);
  DecayParams p;
  p.a0 = std::stod(a[0]);
  p.a_half = std::stod(a[1]);
  p.a1 = std::stod(a[2]);
  p.a2 = std::stod(a[3]);
  p.a3 = std::stod(a[4]);
  next("group header");
  std::size_t line_no = 3;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto g = cells();
    if (g.size() != 3) throw FormatError("decay fit file: bad group row", line_no);
    if (std::stoul(g[0]) != p.b.size())
      throw FormatError("decay fit file: groups out of order", line_no);
    p.b.push_back(std::stod(g[1]));
    p.c.push_back(std::stod(g[2]));
  }
  return p;
}

}  // namespace edg
