#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfbd/model.hpp"
#include "mfbd/ode.hpp"

namespace mfbd {

/// A continuous vector-valued function of time on [0, horizon].
///
/// Cheap to copy: the underlying representation is shared and immutable.
class FieldTrajectory {
 public:
  static FieldTrajectory constant(Vector value, double horizon);
  static FieldTrajectory from_solution(std::shared_ptr<const ode::DenseSolution> solution);
  /// Piecewise-linear interpolation through samples; `values` is (times.size() x d).
  static FieldTrajectory from_samples(std::vector<double> times, Matrix values);
  /// (1 - weight) * a + weight * b.
  static FieldTrajectory blend(const FieldTrajectory& a, const FieldTrajectory& b, double weight);
  /// Concatenation: piece k covers [starts[k], starts[k] + pieces[k].horizon()]
  /// in global time; starts[0] must be 0 and pieces must abut.
  static FieldTrajectory chain(std::vector<double> starts, std::vector<FieldTrajectory> pieces);

  Vector operator()(double t) const;
  void evaluate(double t, Vector& out) const;
  int dim() const;
  double horizon() const;
  /// Non-null when the trajectory is backed directly by an ODE solution.
  const ode::DenseSolution* solution() const;

 private:
  struct Impl;
  explicit FieldTrajectory(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<const Impl> impl_;
};

struct ScfConfig {
  /// Stopping tolerance on sum_i ||phi_i - T_i[phi]||_2.
  double delta = 1e-6;
  /// Correction budget per Picard run; each window gets its own.
  int max_iters = 200;
  /// Points of the uniform trapezoid grid used for the trajectory L2 norm.
  int quadrature_points = 512;
  /// Non-decreasing residuals tolerated before switching to averaged iteration.
  int stall_window = 5;
  /// Inner integrator tolerances; the residual cannot fall below their noise floor.
  ode::Tolerances tol{1e-11, 1e-12, 200000};
  /// When positive and shorter than the horizon, the iteration runs on
  /// consecutive windows of this length, each started from the previous
  /// window's end value, and the per-window tolerance is tightened until the
  /// whole-horizon residual meets delta. Zero iterates over the whole horizon at once.
  double window = 0.0;
};

struct ScfResult {
  FieldTrajectory field;
  /// Total number of corrections phi <- T[phi] (summed over windows).
  int iterations = 0;
  /// Residual over the whole horizon.
  double residual = 0.0;
  int windows = 1;
  bool damped = false;
  std::vector<double> residual_history;
};

class NonConvergence : public std::runtime_error {
 public:
  NonConvergence(const std::string& what, ScfResult last) : std::runtime_error(what), last_(std::move(last)) {}
  const ScfResult& last_iterate() const { return last_; }

 private:
  ScfResult last_;
};

/// Coefficient matrix diag(lambda - mu_tilde(phi)) + gamma^T of the linear
/// moment equation driven by an external field value.
Matrix moment_coefficients(const ModelSpec& spec, const Vector& field_value);

/// Solves r' = A(phi(t)) r, r(0) = r0 on [0, tau] with the stiff integrator.
FieldTrajectory moment_map(const ModelSpec& spec, const FieldTrajectory& phi, double tau,
                           const ode::Tolerances& tol = {});

/// sum_i sqrt(int_0^tau (a_i - b_i)^2 dt) by the trapezoid rule on `points` nodes.
double trajectory_distance(const FieldTrajectory& a, const FieldTrajectory& b, double tau, int points);

/// Picard iteration for the self-consistent field, starting from the constant r0.
/// Throws NonConvergence (carrying the last iterate) after max_iters corrections.
ScfResult solve_scf(const ModelSpec& spec, double tau, const ScfConfig& config = {});

/// Integrates the closed nonlinear moment equation directly.
FieldTrajectory solve_moment_direct(const ModelSpec& spec, double tau, const ode::Tolerances& tol = {});

/// Right-hand side of the nonlinear moment equation at state r.
Vector moment_rhs(const ModelSpec& spec, const Vector& r);

struct SteadyStates {
  std::vector<Vector> roots;
  std::vector<std::string> diagnostics;
};

/// Nonnegative roots of the criticality condition found by damped Newton from
/// each guess. The trivial root is always included and listed first.
SteadyStates steady_states(const ModelSpec& spec, const std::vector<Vector>& guesses);

/// {r0, phi*(tau) of an SCF run on [0, tau], 0}; the SCF entry is omitted if that
/// run fails.
std::vector<Vector> default_steady_guesses(const ModelSpec& spec, double tau, const ScfConfig& config = {});

}  // namespace mfbd
