#include "mfbd/scf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <variant>

namespace mfbd {

struct FieldTrajectory::Impl {
  struct Constant {
    Vector value;
  };
  struct Dense {
    std::shared_ptr<const ode::DenseSolution> solution;
  };
  struct Samples {
    std::vector<double> times;
    Matrix values;
  };
  // Weighted sum of non-combination trajectories.
  struct Combination {
    std::vector<std::pair<double, FieldTrajectory>> terms;
  };

  struct Chain {
    std::vector<double> starts;
    std::vector<FieldTrajectory> pieces;
  };

  int d = 0;
  double horizon = 0.0;
  std::variant<Constant, Dense, Samples, Combination, Chain> repr;
};

FieldTrajectory FieldTrajectory::constant(Vector value, double horizon) {
  if (!(horizon > 0.0)) throw std::invalid_argument("FieldTrajectory: horizon must be positive");
  auto impl = std::make_shared<Impl>();
  impl->d = static_cast<int>(value.size());
  impl->horizon = horizon;
  impl->repr = Impl::Constant{std::move(value)};
  return FieldTrajectory(std::move(impl));
}

FieldTrajectory FieldTrajectory::from_solution(std::shared_ptr<const ode::DenseSolution> solution) {
  if (!solution || solution->steps() == 0) throw std::invalid_argument("FieldTrajectory: empty solution");
  if (solution->t_start() != 0.0) throw std::invalid_argument("FieldTrajectory: solution must start at t=0");
  auto impl = std::make_shared<Impl>();
  impl->d = static_cast<int>(solution->dim());
  impl->horizon = solution->t_end();
  impl->repr = Impl::Dense{std::move(solution)};
  return FieldTrajectory(std::move(impl));
}

FieldTrajectory FieldTrajectory::from_samples(std::vector<double> times, Matrix values) {
  if (times.size() < 2 || static_cast<Eigen::Index>(times.size()) != values.rows()) {
    throw std::invalid_argument("FieldTrajectory: need at least two samples, one row per time");
  }
  if (times.front() != 0.0) throw std::invalid_argument("FieldTrajectory: samples must start at t=0");
  for (std::size_t k = 1; k < times.size(); ++k) {
    if (!(times[k] > times[k - 1])) throw std::invalid_argument("FieldTrajectory: sample times must increase");
  }
  auto impl = std::make_shared<Impl>();
  impl->d = static_cast<int>(values.cols());
  impl->horizon = times.back();
  impl->repr = Impl::Samples{std::move(times), std::move(values)};
  return FieldTrajectory(std::move(impl));
}

FieldTrajectory FieldTrajectory::blend(const FieldTrajectory& a, const FieldTrajectory& b, double weight) {
  if (a.dim() != b.dim() || a.horizon() != b.horizon()) {
    throw std::invalid_argument("FieldTrajectory: blend operands differ in dimension or horizon");
  }
  // Flatten nested blends so evaluation cost stays bounded under repeated
  // averaging; terms whose weight falls below 2^-60 are dropped.
  constexpr double kNegligible = 0x1p-60;
  Impl::Combination combined;
  const auto push = [&combined](double scale, const FieldTrajectory& f) {
    if (const auto* c = std::get_if<Impl::Combination>(&f.impl_->repr)) {
      for (const auto& [w, term] : c->terms) {
        if (scale * w >= kNegligible) combined.terms.emplace_back(scale * w, term);
      }
    } else if (scale >= kNegligible) {
      combined.terms.emplace_back(scale, f);
    }
  };
  push(1.0 - weight, a);
  push(weight, b);
  auto impl = std::make_shared<Impl>();
  impl->d = a.dim();
  impl->horizon = a.horizon();
  impl->repr = std::move(combined);
  return FieldTrajectory(std::move(impl));
}

FieldTrajectory FieldTrajectory::chain(std::vector<double> starts, std::vector<FieldTrajectory> pieces) {
  if (pieces.empty() || starts.size() != pieces.size() || starts.front() != 0.0) {
    throw std::invalid_argument("FieldTrajectory: chain needs one start per piece, beginning at 0");
  }
  for (std::size_t k = 1; k < pieces.size(); ++k) {
    const double end = starts[k - 1] + pieces[k - 1].horizon();
    if (pieces[k].dim() != pieces[0].dim() || std::abs(starts[k] - end) > 1e-12 * std::max(1.0, end)) {
      throw std::invalid_argument("FieldTrajectory: chain pieces must abut and share a dimension");
    }
  }
  auto impl = std::make_shared<Impl>();
  impl->d = pieces.front().dim();
  impl->horizon = starts.back() + pieces.back().horizon();
  impl->repr = Impl::Chain{std::move(starts), std::move(pieces)};
  return FieldTrajectory(std::move(impl));
}

int FieldTrajectory::dim() const { return impl_->d; }
double FieldTrajectory::horizon() const { return impl_->horizon; }

const ode::DenseSolution* FieldTrajectory::solution() const {
  if (const auto* dense = std::get_if<Impl::Dense>(&impl_->repr)) return dense->solution.get();
  return nullptr;
}

Vector FieldTrajectory::operator()(double t) const {
  Vector out(impl_->d);
  evaluate(t, out);
  return out;
}

void FieldTrajectory::evaluate(double t, Vector& out) const {
  const Impl& impl = *impl_;
  const double slack = 1e-12 * std::max(1.0, impl.horizon);
  if (!(t >= -slack && t <= impl.horizon + slack)) {
    std::ostringstream msg;
    msg << "FieldTrajectory: t=" << t << " outside [0, " << impl.horizon << "]";
    throw std::out_of_range(msg.str());
  }
  t = std::clamp(t, 0.0, impl.horizon);
  std::visit(
      [&](const auto& r) {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, Impl::Constant>) {
          out = r.value;
        } else if constexpr (std::is_same_v<T, Impl::Dense>) {
          r.solution->evaluate(t, out);
        } else if constexpr (std::is_same_v<T, Impl::Samples>) {
          auto it = std::upper_bound(r.times.begin(), r.times.end(), t);
          std::size_t k = static_cast<std::size_t>(it - r.times.begin());
          k = k == 0 ? 0 : k - 1;
          const auto row = static_cast<Eigen::Index>(k);
          if (r.times[k] == t || k + 1 >= r.times.size()) {
            out = r.values.row(row).transpose();
          } else {
            const double theta = (t - r.times[k]) / (r.times[k + 1] - r.times[k]);
            out = ((1.0 - theta) * r.values.row(row) + theta * r.values.row(row + 1)).transpose();
          }
        } else if constexpr (std::is_same_v<T, Impl::Chain>) {
          auto it = std::upper_bound(r.starts.begin(), r.starts.end(), t);
          const std::size_t k = it == r.starts.begin() ? 0 : static_cast<std::size_t>(it - r.starts.begin()) - 1;
          const FieldTrajectory& piece = r.pieces[k];
          piece.evaluate(std::min(t - r.starts[k], piece.horizon()), out);
        } else {
          Vector tmp(impl.d);
          out.setZero(impl.d);
          for (const auto& [w, term] : r.terms) {
            term.evaluate(t, tmp);
            out += w * tmp;
          }
        }
      },
      impl.repr);
}

Matrix moment_coefficients(const ModelSpec& spec, const Vector& field_value) {
  const Vector effective_death = mu_tilde(spec, field_value.cwiseMax(0.0));
  Matrix a = spec.gamma.transpose();
  a.diagonal() += spec.lambda - effective_death;
  return a;
}

FieldTrajectory moment_map(const ModelSpec& spec, const FieldTrajectory& phi, double tau,
                           const ode::Tolerances& tol) {
  if (!(tau > 0.0)) throw std::invalid_argument("moment_map: tau must be positive");
  if (phi.dim() != spec.d) throw std::invalid_argument("moment_map: field dimension does not match the model");
  if (phi.horizon() < tau) throw std::invalid_argument("moment_map: field is not defined on [0, tau]");

  // Per-call buffer; the integrator invokes these callbacks sequentially.
  auto field_value = std::make_shared<Vector>(spec.d);
  ode::Rhs rhs = [&spec, &phi, field_value](double t, const Vector& r, Vector& dr) {
    phi.evaluate(t, *field_value);
    dr.noalias() = moment_coefficients(spec, *field_value) * r;
  };
  ode::Options options;
  options.scheme = ode::Scheme::sdirk4;
  options.jacobian = [&spec, &phi, field_value](double t, const Vector&) {
    phi.evaluate(t, *field_value);
    ode::SparseMatrix jac = moment_coefficients(spec, *field_value).sparseView(0.0, 0.0);
    for (int i = 0; i < spec.d; ++i) jac.coeffRef(i, i) += 0.0;
    jac.makeCompressed();
    return jac;
  };
  auto solution = std::make_shared<const ode::DenseSolution>(ode::integrate(rhs, spec.r0, 0.0, tau, tol, options));
  return FieldTrajectory::from_solution(std::move(solution));
}

double trajectory_distance(const FieldTrajectory& a, const FieldTrajectory& b, double tau, int points) {
  if (points < 2) throw std::invalid_argument("trajectory_distance: need at least two quadrature points");
  const int d = a.dim();
  Vector sq = Vector::Zero(d);
  Vector va(d), vb(d);
  const double h = tau / (points - 1);
  for (int k = 0; k < points; ++k) {
    const double t = k == points - 1 ? tau : k * h;
    a.evaluate(t, va);
    b.evaluate(t, vb);
    const double weight = (k == 0 || k == points - 1) ? 0.5 * h : h;
    sq += weight * (va - vb).cwiseAbs2();
  }
  return sq.cwiseSqrt().sum();
}

namespace {

// Algorithm 1 on [0, tau] for a model whose initial value may be any
// nonnegative vector (used for windows after the first).
ScfResult picard(const ModelSpec& spec, double tau, const ScfConfig& config, int iteration_offset) {
  ScfResult state{FieldTrajectory::constant(spec.r0, tau), 0, 0.0, 1, false, {}};
  double previous = std::numeric_limits<double>::infinity();
  int stalled = 0;
  while (true) {
    FieldTrajectory mapped = moment_map(spec, state.field, tau, config.tol);
    state.residual = trajectory_distance(state.field, mapped, tau, config.quadrature_points);
    state.residual_history.push_back(state.residual);
    if (state.residual <= config.delta) return state;
    if (iteration_offset + state.iterations >= config.max_iters) {
      std::ostringstream msg;
      msg << "self-consistent field did not converge after " << iteration_offset + state.iterations
          << " iterations (residual " << state.residual << ", tolerance " << config.delta << ")";
      state.iterations += iteration_offset;
      throw NonConvergence(msg.str(), state);
    }
    stalled = state.residual >= previous ? stalled + 1 : 0;
    previous = state.residual;
    if (stalled >= config.stall_window) state.damped = true;
    state.field = state.damped ? FieldTrajectory::blend(state.field, mapped, 0.5) : mapped;
    ++state.iterations;
  }
}

}  // namespace

namespace {

// One pass over consecutive windows, each iterated to `window_delta`, with the
// residual of the chained field measured over the whole horizon.
ScfResult run_windows(const ModelSpec& spec, double tau, const ScfConfig& config, double window_delta,
                      int iteration_offset) {
  const int windows = static_cast<int>(std::ceil(tau / config.window - 1e-9));
  ScfConfig inner = config;
  inner.delta = window_delta;
  std::vector<double> starts;
  std::vector<FieldTrajectory> pieces;
  ModelSpec local = spec;
  ScfResult total{FieldTrajectory::constant(spec.r0, tau), 0, 0.0, windows, false, {}};
  for (int k = 0; k < windows; ++k) {
    const double start = k * config.window;
    const double length = k + 1 == windows ? tau - start : config.window;
    ScfResult part = [&] {
      try {
        return picard(local, length, inner, 0);
      } catch (const NonConvergence& e) {
        ScfResult last = e.last_iterate();
        last.iterations += iteration_offset + total.iterations;
        starts.push_back(start);
        pieces.push_back(last.field);
        for (int j = k + 1; j < windows; ++j) {
          // Hold the last value so the partial field still spans [0, tau].
          const double s = j * config.window;
          starts.push_back(s);
          pieces.push_back(FieldTrajectory::constant(last.field(last.field.horizon()),
                                                     j + 1 == windows ? tau - s : config.window));
        }
        last.field = FieldTrajectory::chain(starts, pieces);
        last.windows = windows;
        throw NonConvergence(e.what(), std::move(last));
      }
    }();
    total.iterations += part.iterations;
    total.damped = total.damped || part.damped;
    total.residual_history.insert(total.residual_history.end(), part.residual_history.begin(),
                                  part.residual_history.end());
    starts.push_back(start);
    local.r0 = part.field(length).cwiseMax(0.0);
    pieces.push_back(std::move(part.field));
  }
  total.field = FieldTrajectory::chain(std::move(starts), std::move(pieces));
  const FieldTrajectory mapped = moment_map(spec, total.field, tau, config.tol);
  total.residual = trajectory_distance(total.field, mapped, tau, config.quadrature_points);
  return total;
}

}  // namespace

ScfResult solve_scf(const ModelSpec& spec, double tau, const ScfConfig& config) {
  require_valid(spec);
  if (!(tau > 0.0)) throw std::invalid_argument("solve_scf: tau must be positive");
  if (!(config.delta > 0.0)) throw std::invalid_argument("solve_scf: delta must be positive");
  if (config.quadrature_points < 2) throw std::invalid_argument("solve_scf: need at least two quadrature points");

  if (!(config.window > 0.0) || config.window >= tau) return picard(spec, tau, config, 0);

  // Errors left in early windows grow through later ones, so the per-window
  // tolerance is tightened until the whole-horizon residual meets delta.
  constexpr int kTightenings = 3;
  int spent = 0;
  double window_delta = config.delta;
  std::optional<ScfResult> best;
  for (int attempt = 0; attempt <= kTightenings; ++attempt) {
    std::optional<ScfResult> attempt_result;
    try {
      attempt_result = run_windows(spec, tau, config, window_delta, spent);
    } catch (const NonConvergence&) {
      // A tighter pass can stall at the integrator noise floor.
      if (!best) throw;
      break;
    }
    ScfResult& pass = *attempt_result;
    spent += pass.iterations;
    pass.iterations = spent;
    if (pass.residual <= config.delta) return pass;
    if (!best || pass.residual < best->residual) best = std::move(pass);
    best->iterations = spent;
    window_delta /= 10.0;
  }
  std::ostringstream msg;
  msg << "self-consistent field did not converge: windowed residual " << best->residual << ", tolerance "
      << config.delta;
  throw NonConvergence(msg.str(), std::move(*best));
}

Vector moment_rhs(const ModelSpec& spec, const Vector& r) {
  Vector out = spec.gamma.transpose() * r;
  out.array() += (spec.lambda - mu_tilde(spec, r.cwiseMax(0.0))).array() * r.array();
  return out;
}

FieldTrajectory solve_moment_direct(const ModelSpec& spec, double tau, const ode::Tolerances& tol) {
  require_valid(spec);
  if (!(tau > 0.0)) throw std::invalid_argument("solve_moment_direct: tau must be positive");
  ode::Rhs rhs = [&spec](double, const Vector& r, Vector& dr) { dr = moment_rhs(spec, r); };
  auto solution = std::make_shared<const ode::DenseSolution>(ode::integrate(rhs, spec.r0, 0.0, tau, tol));
  return FieldTrajectory::from_solution(std::move(solution));
}

namespace {

Matrix moment_rhs_jacobian(const ModelSpec& spec, const Vector& r) {
  const Vector clipped = r.cwiseMax(0.0);
  Matrix jac = moment_coefficients(spec, clipped);
  if (clipped.sum() <= spec.interaction_cap) {
    jac -= r.asDiagonal() * spec.w;
    return jac;
  }
  // Above the cap the interaction is rescaled; fall back to central differences.
  const double h = 1e-7 * std::max(1.0, r.cwiseAbs().maxCoeff());
  for (int k = 0; k < spec.d; ++k) {
    Vector up = r, down = r;
    up[k] += h;
    down[k] -= h;
    jac.col(k) = (moment_rhs(spec, up) - moment_rhs(spec, down)) / (2 * h);
  }
  return jac;
}

}  // namespace

SteadyStates steady_states(const ModelSpec& spec, const std::vector<Vector>& guesses) {
  require_valid(spec);
  constexpr double kResidualTol = 1e-10;
  constexpr double kMergeTol = 1e-8;
  constexpr int kMaxNewton = 200;
  constexpr int kMaxHalvings = 40;

  SteadyStates out;
  out.roots.push_back(Vector::Zero(spec.d));
  const auto add_root = [&out](const Vector& root) {
    for (const auto& known : out.roots) {
      if ((known - root).cwiseAbs().maxCoeff() <= kMergeTol * std::max(1.0, root.cwiseAbs().maxCoeff())) return;
    }
    out.roots.push_back(root);
  };

  for (std::size_t g = 0; g < guesses.size(); ++g) {
    const Vector& guess = guesses[g];
    std::ostringstream tag;
    tag << "guess " << g << ": ";
    if (guess.size() != spec.d || !guess.allFinite() || (guess.array() < 0.0).any()) {
      out.diagnostics.push_back(tag.str() + "skipped (must be finite, nonnegative, of dimension d)");
      continue;
    }
    Vector x = guess;
    Vector f = moment_rhs(spec, x);
    double fnorm = f.cwiseAbs().maxCoeff();
    bool singular = false;
    int iter = 0;
    for (; iter < kMaxNewton && fnorm > kResidualTol; ++iter) {
      const Matrix jac = moment_rhs_jacobian(spec, x);
      Eigen::FullPivLU<Matrix> lu(jac);
      if (lu.rank() < spec.d) {
        singular = true;
        break;
      }
      const Vector step = lu.solve(-f);
      double alpha = 1.0;
      Vector trial = x + step;
      Vector ftrial = moment_rhs(spec, trial);
      int halvings = 0;
      while (!(ftrial.cwiseAbs().maxCoeff() < fnorm) && halvings < kMaxHalvings) {
        alpha *= 0.5;
        trial = x + alpha * step;
        ftrial = moment_rhs(spec, trial);
        ++halvings;
      }
      if (!(ftrial.cwiseAbs().maxCoeff() < fnorm)) break;
      x = trial;
      f = ftrial;
      fnorm = f.cwiseAbs().maxCoeff();
    }
    if (singular) {
      out.diagnostics.push_back(tag.str() + "singular Jacobian after " + std::to_string(iter) + " iterations");
      continue;
    }
    if (!(fnorm <= kResidualTol)) {
      std::ostringstream msg;
      msg << tag.str() << "no convergence (residual " << fnorm << ")";
      out.diagnostics.push_back(msg.str());
      continue;
    }
    if ((x.array() < -kMergeTol).any()) {
      out.diagnostics.push_back(tag.str() + "converged to a root with negative entries; discarded");
      continue;
    }
    x = x.cwiseMax(0.0);
    if (moment_rhs(spec, x).cwiseAbs().maxCoeff() > kResidualTol) {
      out.diagnostics.push_back(tag.str() + "root left the nonnegative orthant; discarded");
      continue;
    }
    add_root(x);
    out.diagnostics.push_back(tag.str() + "converged in " + std::to_string(iter) + " iterations");
  }
  return out;
}

std::vector<Vector> default_steady_guesses(const ModelSpec& spec, double tau, const ScfConfig& config) {
  std::vector<Vector> guesses{spec.r0};
  try {
    const ScfResult scf = solve_scf(spec, tau, config);
    guesses.push_back(scf.field(tau).cwiseMax(0.0));
  } catch (const NonConvergence& e) {
    guesses.push_back(e.last_iterate().field(tau).cwiseMax(0.0));
  } catch (const ode::IntegrationError&) {
  }
  guesses.push_back(Vector::Zero(spec.d));
  return guesses;
}

}  // namespace mfbd
