#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "mfbd/phylo.hpp"

namespace mfbd {

NonObservation::NonObservation(std::shared_ptr<const ode::DenseSolution> solution, FieldTrajectory field, double tau)
    : solution_(std::move(solution)), field_(std::move(field)), tau_(tau) {}

Vector NonObservation::raw(double s) const { return (*solution_)(s); }

Vector NonObservation::operator()(double s) const { return raw(s).cwiseMax(0.0).cwiseMin(1.0); }

Vector NonObservation::field_at(double s) const { return field_(std::clamp(tau_ - s, 0.0, tau_)).cwiseMax(0.0); }

NonObservation solve_nonobs(const ModelSpec& spec, const SamplingSpec& sampling, const FieldTrajectory& field,
                            double tau, const ode::Tolerances& tol) {
  require_valid(spec);
  const auto bad = validate(sampling);
  if (!bad.empty()) throw std::invalid_argument("solve_nonobs: " + bad.front().field + " " + bad.front().reason);
  if (!(tau > 0.0)) throw std::invalid_argument("solve_nonobs: tau must be positive");
  if (field.dim() != spec.d) throw std::invalid_argument("solve_nonobs: field dimension does not match the model");
  if (field.horizon() < tau * (1.0 - 1e-12)) throw std::invalid_argument("solve_nonobs: field does not cover [0, tau]");

  const double sigma = sampling.sigma;
  // Backward time s corresponds to forward time tau - s on the field.
  ode::Rhs rhs = [&spec, &field, tau, sigma](double s, const Vector& p, Vector& dp) {
    const Vector r = field(std::clamp(tau - s, 0.0, field.horizon())).cwiseMax(0.0);
    const Vector loss = spec.mu + spec.w * r;
    dp = spec.gamma * p;
    dp.array() += spec.lambda.array() * p.array().square() - (spec.lambda + loss).array() * p.array() +
                  (1.0 - sigma) * loss.array();
  };
  const Vector p0 = Vector::Constant(spec.d, 1.0 - sampling.rho);
  auto solution = std::make_shared<const ode::DenseSolution>(ode::integrate(rhs, p0, 0.0, tau, tol));
  return NonObservation(std::move(solution), field, tau);
}

double log_propagator_integral(const ModelSpec& spec, const NonObservation& p, int type, double a, double b) {
  if (!(b > a)) return 0.0;
  const auto integrand = [&spec, &p, type](double s) {
    const Vector ps = p(s);
    const Vector r = p.field_at(s);
    return 2.0 * spec.lambda[type] * ps[type] + spec.gamma(type, type) - spec.lambda[type] - spec.mu[type] -
           spec.w.row(type).dot(r);
  };
  // The integrand is smooth between solver knots; integrate knot to knot.
  const auto& knots = p.solution().knots();
  auto it = std::upper_bound(knots.begin(), knots.end(), a);
  double lo = a, total = 0.0;
  using Rule = boost::math::quadrature::gauss_kronrod<double, 21>;
  for (; it != knots.end() && *it < b; ++it) {
    total += Rule::integrate(integrand, lo, *it, 8, 1e-13);
    lo = *it;
  }
  total += Rule::integrate(integrand, lo, b, 8, 1e-13);
  return total;
}

LikelihoodResult evaluate_likelihood(const PhyloTree& tree, const ModelSpec& spec, const SamplingSpec& sampling,
                                     const FieldTrajectory& field, const LikelihoodOptions& options) {
  require_valid(spec);
  for (const Branch& b : tree.branches) {
    if (b.type < 0 || b.type >= spec.d) {
      throw std::invalid_argument("log_likelihood: tree uses type " + std::to_string(b.type + 1) + " but the model has " +
                                  std::to_string(spec.d));
    }
  }
  const double tau = tree.tau;
  const NonObservation p = solve_nonobs(spec, sampling, field, tau);

  LikelihoodResult result;
  result.tau = tau;
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  // Children always follow their parent in storage, so a reverse sweep is post-order.
  std::vector<double> logq(tree.branches.size(), 0.0);
  for (std::size_t k = tree.branches.size(); k-- > 0;) {
    const Branch& b = tree.branches[k];
    const int i = b.type;
    double boundary = 0.0;
    double factor = 0.0;
    switch (b.end) {
      case BranchEnd::sample:
        factor = sampling.rho;
        break;
      case BranchEnd::fossil: {
        double rate = spec.mu[i];
        if (options.fossil_uses_meanfield_rate) rate += spec.w.row(i).dot(p.field_at(b.t1));
        factor = sampling.sigma * rate;
        break;
      }
      case BranchEnd::split:
        factor = spec.lambda[i];
        boundary = logq[static_cast<std::size_t>(b.left)] + logq[static_cast<std::size_t>(b.right)];
        break;
      case BranchEnd::type_change:
        factor = spec.gamma(i, tree.branches[static_cast<std::size_t>(b.left)].type);
        boundary = logq[static_cast<std::size_t>(b.left)];
        break;
    }
    if (!(factor > 0.0)) {
      logq[k] = kNegInf;
      continue;
    }
    logq[k] = boundary + std::log(factor) + log_propagator_integral(spec, p, i, b.t1, b.t2);
  }

  result.loglik = logq[static_cast<std::size_t>(tree.root)];
  if (result.loglik == kNegInf) result.diagnostics.push_back("a boundary factor is zero; the tree has likelihood 0");
  if (options.condition_on_observation) {
    result.conditioned = true;
    const double observed = 1.0 - p(tau)[tree.branches[static_cast<std::size_t>(tree.root)].type];
    if (observed > 0.0) {
      result.loglik -= std::log(observed);
    } else {
      result.loglik = kNegInf;
      result.diagnostics.push_back("probability of observing the process is zero; conditioning undefined");
    }
  }
  return result;
}

LikelihoodResult evaluate_likelihood(const PhyloTree& tree, const ModelSpec& spec, const SamplingSpec& sampling,
                                     const LikelihoodOptions& options) {
  require_valid(spec);
  if (!(tree.tau > 0.0)) throw std::invalid_argument("log_likelihood: tree has no positive age");
  const ScfResult scf = solve_scf(spec, tree.tau, options.scf);
  LikelihoodResult result = evaluate_likelihood(tree, spec, sampling, scf.field, options);
  result.scf_iterations = scf.iterations;
  result.scf_residual = scf.residual;
  return result;
}

double log_likelihood(const PhyloTree& tree, const ModelSpec& spec, const SamplingSpec& sampling,
                      bool condition_on_observation) {
  LikelihoodOptions options;
  options.condition_on_observation = condition_on_observation;
  return evaluate_likelihood(tree, spec, sampling, options).loglik;
}

}  // namespace mfbd
