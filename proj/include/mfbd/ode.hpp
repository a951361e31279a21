#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace mfbd::ode {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// dy/dt written into `dydt`, which is pre-sized to y.size().
using Rhs = std::function<void(double t, const Vector& y, Vector& dydt)>;
using Jacobian = std::function<SparseMatrix(double t, const Vector& y)>;

struct Tolerances {
  double rtol = 1e-8;
  double atol = 1e-10;
  std::size_t max_steps = 200000;
};

enum class Scheme {
  /// Dormand-Prince 5(4), explicit, with its 4th order continuous extension.
  dormand_prince,
  /// Five-stage L-stable, stiffly accurate SDIRK of order 4 with an embedded
  /// order-3 estimate; cubic Hermite dense output.
  sdirk4,
};

struct Options {
  Scheme scheme = Scheme::dormand_prince;
  /// Used by sdirk4 only. A forward-difference dense Jacobian is built when unset.
  Jacobian jacobian;
  double initial_step = 0.0;
  double max_step = std::numeric_limits<double>::infinity();
};

enum class FailureKind { step_limit, step_underflow, non_finite };

class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(FailureKind kind, double t, const std::string& what)
      : std::runtime_error(what), kind_(kind), t_(t) {}
  FailureKind kind() const { return kind_; }
  /// Time at which integration stopped.
  double time() const { return t_; }

 private:
  FailureKind kind_;
  double t_;
};

struct Statistics {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t rhs_evaluations = 0;
  std::size_t jacobian_evaluations = 0;
  std::size_t factorizations = 0;
};

/// Piecewise polynomial solution over accepted steps. Immutable once built.
class DenseSolution {
 public:
  DenseSolution() = default;

  Eigen::Index dim() const { return n_; }
  double t_start() const { return knots_.front(); }
  double t_end() const { return knots_.back(); }
  const std::vector<double>& knots() const { return knots_; }
  std::size_t steps() const { return knots_.empty() ? 0 : knots_.size() - 1; }
  const Statistics& stats() const { return stats_; }

  /// State stored at knot k (exact step endpoint).
  Vector state_at_knot(std::size_t k) const;
  Vector operator()(double t) const;
  void evaluate(double t, Vector& out) const;

 private:
  friend class SolutionBuilder;
  Eigen::Index n_ = 0;
  std::vector<double> knots_;
  // Per knot: the state. Per step: three interpolation vectors (see ode.cpp).
  std::vector<double> states_;
  std::vector<double> coeffs_;
  Statistics stats_;
};

DenseSolution integrate(const Rhs& rhs, const Vector& y0, double t0, double t1,
                        const Tolerances& tol = {}, const Options& options = {});

/// Forward-difference Jacobian, returned in sparse storage. Intended for small n.
SparseMatrix numerical_jacobian(const Rhs& rhs, double t, const Vector& y);

}  // namespace mfbd::ode
