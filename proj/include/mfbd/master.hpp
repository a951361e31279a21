#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mfbd/model.hpp"
#include "mfbd/ode.hpp"

namespace mfbd {

/// All count vectors y in N^d with y_1 + ... + y_d <= kappa, in lexicographic
/// order. Ranking uses the combinatorial number system, so index lookups need
/// no hash table.
class TruncatedLattice {
 public:
  TruncatedLattice(int d, int kappa);

  /// Number of states, C(kappa + d, d). Throws std::overflow_error if it does
  /// not fit in size_t.
  static std::size_t count(int d, int kappa);

  int dim() const { return d_; }
  int kappa() const { return kappa_; }
  std::size_t size() const { return size_; }
  std::span<const int> state(std::size_t index) const;
  int total(std::size_t index) const { return totals_[index]; }
  /// nullopt when y has the wrong length, a negative entry or total > kappa.
  std::optional<std::size_t> index(std::span<const int> y) const;

 private:
  std::size_t rank(std::span<const int> y) const;
  std::size_t binom(int n, int k) const;

  int d_;
  int kappa_;
  std::size_t size_;
  std::vector<std::size_t> binom_;  // (kappa + d + 2) x (d + 2)
  std::vector<int> states_;         // size_ x d
  std::vector<int> totals_;
};

/// Off-diagonal part of the truncated generator stored by target row, so that
/// evaluating dv/dt is a gather. Entry values are mult * rates[slot], where the
/// rate table is [lambda (d), mu_tilde (d), gamma row-major (d*d)].
/// States with total == kappa are absorbing.
struct GeneratorPattern {
  int d = 0;
  std::vector<std::int64_t> row_start;
  std::vector<std::int32_t> source;
  std::vector<std::int32_t> slot;
  std::vector<double> mult;
  std::vector<double> counts;   // size x d, as doubles
  std::vector<char> absorbing;  // per state

  std::size_t size() const { return absorbing.size(); }
  std::size_t nonzeros() const { return source.size(); }
};

GeneratorPattern build_generator(const ModelSpec& spec, const TruncatedLattice& lattice);

/// Rate table for the current field; `outflow` is the per-type total rate,
/// lambda + mu_tilde + transition outflow, used for the diagonal.
struct RateTable {
  std::vector<double> rates;
  std::vector<double> outflow;
};
RateTable rate_table(const ModelSpec& spec, const Vector& field);

/// out = Q v for the truncated generator Q. The two variants produce
/// bit-identical results; the serial one is kept as the reference.
void apply_generator_serial(const GeneratorPattern& g, const RateTable& rt, const double* v, double* out);
void apply_generator_parallel(const GeneratorPattern& g, const RateTable& rt, const double* v, double* out);

/// First moment sum_y y v(y).
Vector first_moment(const GeneratorPattern& g, const double* v);

class LatticeTooLarge : public std::runtime_error {
 public:
  LatticeTooLarge(std::size_t states, std::size_t limit, int largest_kappa);
  std::size_t states() const { return states_; }
  std::size_t limit() const { return limit_; }
  /// Largest kappa that fits the limit in the same dimension.
  int largest_kappa() const { return largest_kappa_; }

 private:
  std::size_t states_;
  std::size_t limit_;
  int largest_kappa_;
};

struct MasterOptions {
  ode::Tolerances tol{1e-8, 1e-13, 200000};
  std::size_t max_states = 2000000;
  bool parallel = true;
};

/// Solution of the truncated nonlinear master equation on [0, tau].
class DistributionTrajectory {
 public:
  DistributionTrajectory(std::shared_ptr<const TruncatedLattice> lattice,
                         std::shared_ptr<const GeneratorPattern> generator,
                         std::shared_ptr<const ode::DenseSolution> solution);

  const TruncatedLattice& lattice() const { return *lattice_; }
  const ode::DenseSolution& solution() const { return *solution_; }
  double horizon() const { return solution_->t_end(); }

  /// Probability vector at time t (interpolated between steps).
  Vector distribution(double t) const;
  Vector moments(double t) const;
  /// Probability held by states on the boundary y_total == kappa.
  double boundary_mass(double t) const;

 private:
  std::shared_ptr<const TruncatedLattice> lattice_;
  std::shared_ptr<const GeneratorPattern> generator_;
  std::shared_ptr<const ode::DenseSolution> solution_;
};

/// Point mass on y in the given lattice.
Vector point_mass(const TruncatedLattice& lattice, std::span<const int> y);

DistributionTrajectory solve_master(const ModelSpec& spec, const Vector& v0, int kappa, double tau,
                                    const MasterOptions& options = {});

}  // namespace mfbd
