#include <cmath>
#include <sstream>

#include "mfbd/master.hpp"

namespace mfbd {

namespace {

std::string too_large_message(std::size_t states, std::size_t limit, int largest_kappa) {
  std::ostringstream msg;
  msg << "truncated lattice has " << states << " states, above the limit of " << limit
      << "; reduce kappa to at most " << largest_kappa << " or raise the limit";
  return msg.str();
}

}  // namespace

LatticeTooLarge::LatticeTooLarge(std::size_t states, std::size_t limit, int largest_kappa)
    : std::runtime_error(too_large_message(states, limit, largest_kappa)),
      states_(states),
      limit_(limit),
      largest_kappa_(largest_kappa) {}

DistributionTrajectory::DistributionTrajectory(std::shared_ptr<const TruncatedLattice> lattice,
                                               std::shared_ptr<const GeneratorPattern> generator,
                                               std::shared_ptr<const ode::DenseSolution> solution)
    : lattice_(std::move(lattice)), generator_(std::move(generator)), solution_(std::move(solution)) {}

Vector DistributionTrajectory::distribution(double t) const { return (*solution_)(t); }

Vector DistributionTrajectory::moments(double t) const {
  const Vector v = distribution(t);
  return first_moment(*generator_, v.data());
}

double DistributionTrajectory::boundary_mass(double t) const {
  const Vector v = distribution(t);
  double mass = 0.0;
  for (std::size_t k = 0; k < lattice_->size(); ++k) {
    if (generator_->absorbing[k]) mass += v[static_cast<Eigen::Index>(k)];
  }
  return mass;
}

Vector point_mass(const TruncatedLattice& lattice, std::span<const int> y) {
  const auto idx = lattice.index(y);
  if (!idx) throw std::invalid_argument("point_mass: state lies outside the truncated lattice");
  Vector v = Vector::Zero(static_cast<Eigen::Index>(lattice.size()));
  v[static_cast<Eigen::Index>(*idx)] = 1.0;
  return v;
}

DistributionTrajectory solve_master(const ModelSpec& spec, const Vector& v0, int kappa, double tau,
                                    const MasterOptions& options) {
  require_valid(spec);
  if (!(tau > 0.0)) throw std::invalid_argument("solve_master: tau must be positive");
  if (kappa < 1) throw std::invalid_argument("solve_master: kappa must be at least 1");

  const std::size_t states = TruncatedLattice::count(spec.d, kappa);
  if (states > options.max_states) {
    int largest = kappa;
    while (largest > 0 && TruncatedLattice::count(spec.d, largest) > options.max_states) --largest;
    throw LatticeTooLarge(states, options.max_states, largest);
  }

  auto lattice = std::make_shared<const TruncatedLattice>(spec.d, kappa);
  if (static_cast<std::size_t>(v0.size()) != lattice->size()) {
    throw std::invalid_argument("solve_master: initial distribution has " + std::to_string(v0.size()) +
                                " entries, lattice has " + std::to_string(lattice->size()));
  }
  if (!v0.allFinite() || (v0.array() < 0.0).any()) {
    throw std::invalid_argument("solve_master: initial distribution must be finite and nonnegative");
  }
  if (std::abs(v0.sum() - 1.0) > 1e-12) {
    throw std::invalid_argument("solve_master: initial distribution must sum to 1");
  }

  auto generator = std::make_shared<const GeneratorPattern>(build_generator(spec, *lattice));
  const GeneratorPattern& g = *generator;
  const bool parallel = options.parallel;

  ode::Rhs rhs = [&spec, &g, parallel](double, const Vector& v, Vector& dv) {
    const RateTable rt = rate_table(spec, first_moment(g, v.data()));
    if (parallel) {
      apply_generator_parallel(g, rt, v.data(), dv.data());
    } else {
      apply_generator_serial(g, rt, v.data(), dv.data());
    }
  };

  // Q(r(v)) itself; the rank-d correction from the field's dependence on v is
  // left out, which only slows Newton down when W is nonzero.
  ode::Options ode_options;
  ode_options.scheme = ode::Scheme::sdirk4;
  ode_options.jacobian = [&spec, &g](double, const Vector& v) {
    const RateTable rt = rate_table(spec, first_moment(g, v.data()));
    const auto n = static_cast<Eigen::Index>(g.size());
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(g.nonzeros() + g.size());
    for (Eigen::Index row = 0; row < n; ++row) {
      const auto r = static_cast<std::size_t>(row);
      double diag = 0.0;
      if (!g.absorbing[r]) {
        for (int i = 0; i < g.d; ++i) diag += g.counts[r * g.d + i] * rt.outflow[i];
      }
      triplets.emplace_back(row, row, -diag);
      for (std::int64_t e = g.row_start[r]; e < g.row_start[r + 1]; ++e) {
        triplets.emplace_back(row, g.source[e], g.mult[e] * rt.rates[g.slot[e]]);
      }
    }
    ode::SparseMatrix q(n, n);
    q.setFromTriplets(triplets.begin(), triplets.end());
    q.makeCompressed();
    return q;
  };

  auto solution = std::make_shared<const ode::DenseSolution>(ode::integrate(rhs, v0, 0.0, tau, options.tol, ode_options));
  return DistributionTrajectory(std::move(lattice), std::move(generator), std::move(solution));
}

}  // namespace mfbd
