#include "mfbd/ode.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include <Eigen/SparseLU>

namespace mfbd::ode {

namespace {

constexpr double kSafety = 0.9;
constexpr double kFacMin = 0.2;
constexpr double kFacMax = 5.0;
constexpr double kEps = std::numeric_limits<double>::epsilon();

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                 a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;
// Dense output: fourth-order continuous extension of the 5(4) pair.
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

// Five-stage L-stable SDIRK of order 4 with embedded order 3, gamma = 1/4.
constexpr int kStages = 5;
constexpr double kGamma = 0.25;
constexpr std::array<double, kStages> kC = {0.25, 0.75, 11.0 / 20, 0.5, 1.0};
constexpr std::array<std::array<double, kStages>, kStages> kA = {{
    {0.25, 0, 0, 0, 0},
    {0.5, 0.25, 0, 0, 0},
    {17.0 / 50, -1.0 / 25, 0.25, 0, 0},
    {371.0 / 1360, -137.0 / 2720, 15.0 / 544, 0.25, 0},
    {25.0 / 24, -49.0 / 48, 125.0 / 16, -85.0 / 12, 0.25},
}};
constexpr std::array<double, kStages> kBhat = {59.0 / 48, -17.0 / 96, 225.0 / 32, -85.0 / 12, 0.0};

double error_norm(const Vector& err, const Vector& y0, const Vector& y1, const Tolerances& tol) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    const double scale = tol.atol + tol.rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    worst = std::max(worst, std::abs(err[i]) / scale);
  }
  return worst;
}

double initial_step(const Rhs& rhs, double t0, const Vector& y0, const Vector& f0, double span, int order,
                    const Tolerances& tol, Statistics& stats) {
  const Vector scale = (tol.atol + tol.rtol * y0.array().abs()).matrix();
  const double dy0 = (y0.array() / scale.array()).abs().maxCoeff();
  const double df0 = (f0.array() / scale.array()).abs().maxCoeff();
  double h0 = (dy0 < 1e-5 || df0 < 1e-5) ? 1e-6 : 0.01 * dy0 / df0;
  h0 = std::min(h0, span);
  Vector y1 = y0 + h0 * f0;
  Vector f1(y0.size());
  rhs(t0 + h0, y1, f1);
  ++stats.rhs_evaluations;
  double h1;
  if (!f1.allFinite()) {
    h1 = h0 * 1e-3;
  } else {
    const double ddf = ((f1 - f0).array() / scale.array()).abs().maxCoeff() / h0;
    const double m = std::max(df0, ddf);
    h1 = m <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / m, 1.0 / (order + 1));
  }
  return std::min({100 * h0, h1, span});
}

}  // namespace

class SolutionBuilder {
 public:
  SolutionBuilder(const Vector& y0, double t0) {
    sol_.n_ = y0.size();
    sol_.knots_.push_back(t0);
    sol_.states_.assign(y0.data(), y0.data() + y0.size());
  }

  /// Appends a step [t, t + h] given endpoint derivatives scaled by h and the
  /// optional fifth interpolation vector (zero for cubic Hermite).
  void append(double t_new, const Vector& y0, const Vector& y1, const Vector& hf0, const Vector& hf1,
              const Vector* extra) {
    const Vector delta = y1 - y0;
    const Vector c3 = hf0 - delta;
    const Vector c4 = delta - hf1 - c3;
    sol_.knots_.push_back(t_new);
    sol_.states_.insert(sol_.states_.end(), y1.data(), y1.data() + y1.size());
    sol_.coeffs_.insert(sol_.coeffs_.end(), c3.data(), c3.data() + c3.size());
    sol_.coeffs_.insert(sol_.coeffs_.end(), c4.data(), c4.data() + c4.size());
    if (extra != nullptr) {
      sol_.coeffs_.insert(sol_.coeffs_.end(), extra->data(), extra->data() + extra->size());
    } else {
      sol_.coeffs_.insert(sol_.coeffs_.end(), static_cast<std::size_t>(y1.size()), 0.0);
    }
  }

  DenseSolution finish(const Statistics& stats) && {
    sol_.stats_ = stats;
    return std::move(sol_);
  }

 private:
  DenseSolution sol_;
};

Vector DenseSolution::state_at_knot(std::size_t k) const {
  return Eigen::Map<const Vector>(states_.data() + k * n_, n_);
}

Vector DenseSolution::operator()(double t) const {
  Vector out(n_);
  evaluate(t, out);
  return out;
}

void DenseSolution::evaluate(double t, Vector& out) const {
  if (knots_.empty()) throw std::logic_error("DenseSolution: empty solution");
  const double span = knots_.back() - knots_.front();
  const double slack = 64 * kEps * std::max({std::abs(knots_.front()), std::abs(knots_.back()), span});
  if (t < knots_.front() - slack || t > knots_.back() + slack || std::isnan(t)) {
    std::ostringstream msg;
    msg << "DenseSolution: t=" << t << " outside [" << knots_.front() << ", " << knots_.back() << "]";
    throw std::out_of_range(msg.str());
  }
  out.resize(n_);
  t = std::clamp(t, knots_.front(), knots_.back());
  auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
  std::size_t k = it == knots_.begin() ? 0 : static_cast<std::size_t>(it - knots_.begin()) - 1;
  if (knots_[k] == t || k + 1 >= knots_.size()) {
    out = state_at_knot(std::min(k, knots_.size() - 1));
    return;
  }
  const double h = knots_[k + 1] - knots_[k];
  const double theta = (t - knots_[k]) / h;
  const double one_minus = 1.0 - theta;
  const double* y0 = states_.data() + k * n_;
  const double* y1 = y0 + n_;
  const double* cc3 = coeffs_.data() + 3 * k * n_;
  const double* cc4 = cc3 + n_;
  const double* cc5 = cc4 + n_;
  for (Eigen::Index i = 0; i < n_; ++i) {
    const double delta = y1[i] - y0[i];
    out[i] = y0[i] + theta * (delta + one_minus * (cc3[i] + theta * (cc4[i] + one_minus * cc5[i])));
  }
}

SparseMatrix numerical_jacobian(const Rhs& rhs, double t, const Vector& y) {
  const Eigen::Index n = y.size();
  Vector f0(n), f1(n);
  rhs(t, y, f0);
  Eigen::MatrixXd jac(n, n);
  Vector yp = y;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double step = std::sqrt(kEps) * std::max(1e-5, std::abs(y[j]));
    yp[j] = y[j] + step;
    rhs(t, yp, f1);
    jac.col(j) = (f1 - f0) / step;
    yp[j] = y[j];
  }
  SparseMatrix out = jac.sparseView(0.0, 0.0);
  // Keep the diagonal structurally present so the Newton matrix pattern is stable.
  for (Eigen::Index i = 0; i < n; ++i) out.coeffRef(i, i) += 0.0;
  out.makeCompressed();
  return out;
}

namespace {

void check_arguments(const Vector& y0, double t0, double t1, const Tolerances& tol) {
  if (!(t0 < t1)) throw std::invalid_argument("integrate: require t0 < t1");
  if (!(tol.rtol > 0.0) || !(tol.atol > 0.0) || !std::isfinite(tol.rtol) || !std::isfinite(tol.atol)) {
    throw std::invalid_argument("integrate: tolerances must be positive and finite");
  }
  if (tol.max_steps == 0) throw std::invalid_argument("integrate: max_steps must be positive");
  if (!y0.allFinite()) throw std::invalid_argument("integrate: initial state is not finite");
}

[[noreturn]] void fail(FailureKind kind, double t, const std::string& why) {
  std::ostringstream msg;
  msg << "integration failed at t=" << t << ": " << why;
  throw IntegrationError(kind, t, msg.str());
}

DenseSolution integrate_dopri(const Rhs& rhs, const Vector& y0, double t0, double t1, const Tolerances& tol,
                              const Options& opt) {
  const Eigen::Index n = y0.size();
  Statistics stats;
  SolutionBuilder builder(y0, t0);
  Vector y = y0, ynew(n), ytmp(n), err(n);
  Vector k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n);
  rhs(t0, y, k1);
  ++stats.rhs_evaluations;
  if (!k1.allFinite()) fail(FailureKind::non_finite, t0, "right-hand side is not finite at the initial state");

  double t = t0;
  double h = opt.initial_step > 0 ? opt.initial_step : initial_step(rhs, t0, y, k1, t1 - t0, 5, tol, stats);
  h = std::min(h, opt.max_step);
  bool last_rejected = false;
  std::size_t step_count = 0;

  while (t < t1) {
    if (++step_count > tol.max_steps) fail(FailureKind::step_limit, t, "maximum number of steps exceeded");
    if (h < 16 * kEps * std::max(1.0, std::abs(t))) fail(FailureKind::step_underflow, t, "step size underflow");
    bool final_step = false;
    if (t + h >= t1 || t + 1.01 * h >= t1) {
      h = t1 - t;
      final_step = true;
    }

    ytmp = y + h * a21 * k1;
    rhs(t + c2 * h, ytmp, k2);
    ytmp = y + h * (a31 * k1 + a32 * k2);
    rhs(t + c3 * h, ytmp, k3);
    ytmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
    rhs(t + c4 * h, ytmp, k4);
    ytmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    rhs(t + c5 * h, ytmp, k5);
    ytmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    const double t_new = final_step ? t1 : t + h;
    rhs(t_new, ytmp, k6);
    ynew = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    rhs(t_new, ynew, k7);
    stats.rhs_evaluations += 6;

    if (!ynew.allFinite() || !k7.allFinite()) {
      ++stats.rejected;
      h *= 0.25;
      last_rejected = true;
      continue;
    }
    err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    const double en = error_norm(err, y, ynew, tol);
    if (en <= 1.0) {
      const Vector hf0 = h * k1;
      const Vector hf1 = h * k7;
      const Vector extra = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
      builder.append(t_new, y, ynew, hf0, hf1, &extra);
      ++stats.accepted;
      t = t_new;
      y = ynew;
      k1 = k7;
      double fac = en == 0.0 ? kFacMax : kSafety * std::pow(en, -1.0 / 5.0);
      fac = std::clamp(fac, kFacMin, last_rejected ? 1.0 : kFacMax);
      h = std::min(h * fac, opt.max_step);
      last_rejected = false;
    } else {
      ++stats.rejected;
      h *= std::max(kFacMin, kSafety * std::pow(en, -1.0 / 5.0));
      last_rejected = true;
    }
  }
  return std::move(builder).finish(stats);
}

bool same_pattern(const SparseMatrix& a, const SparseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.nonZeros() != b.nonZeros()) return false;
  return std::equal(a.outerIndexPtr(), a.outerIndexPtr() + a.outerSize() + 1, b.outerIndexPtr()) &&
         std::equal(a.innerIndexPtr(), a.innerIndexPtr() + a.nonZeros(), b.innerIndexPtr());
}

DenseSolution integrate_sdirk(const Rhs& rhs, const Vector& y0, double t0, double t1, const Tolerances& tol,
                              const Options& opt) {
  const Eigen::Index n = y0.size();
  Statistics stats;
  SolutionBuilder builder(y0, t0);
  const Jacobian jacobian =
      opt.jacobian ? opt.jacobian : Jacobian([&rhs](double t, const Vector& y) { return numerical_jacobian(rhs, t, y); });

  Vector y = y0, f0(n), f1(n), z(n), stage(n), residual(n), delta(n), err(n), fstage(n);
  std::array<Vector, kStages> k;
  for (auto& v : k) v.resize(n);
  rhs(t0, y, f0);
  ++stats.rhs_evaluations;
  if (!f0.allFinite()) fail(FailureKind::non_finite, t0, "right-hand side is not finite at the initial state");

  SparseMatrix identity(n, n);
  identity.setIdentity();
  SparseMatrix newton_matrix;
  SparseMatrix analyzed_pattern;
  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;

  double t = t0;
  double h = opt.initial_step > 0 ? opt.initial_step : initial_step(rhs, t0, y, f0, t1 - t0, 4, tol, stats);
  h = std::min(h, opt.max_step);
  bool last_rejected = false;
  std::size_t step_count = 0;
  SparseMatrix jac;
  bool jac_current = false;

  const auto scaled_norm = [&](const Vector& v, const Vector& ref) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      worst = std::max(worst, std::abs(v[i]) / (tol.atol + tol.rtol * std::abs(ref[i])));
    }
    return worst;
  };

  while (t < t1) {
    if (++step_count > tol.max_steps) fail(FailureKind::step_limit, t, "maximum number of steps exceeded");
    if (h < 16 * kEps * std::max(1.0, std::abs(t))) fail(FailureKind::step_underflow, t, "step size underflow");
    bool final_step = false;
    if (t + h >= t1 || t + 1.01 * h >= t1) {
      h = t1 - t;
      final_step = true;
    }
    const double t_new = final_step ? t1 : t + h;

    if (!jac_current) {
      jac = jacobian(t, y);
      jac.makeCompressed();
      ++stats.jacobian_evaluations;
      jac_current = true;
    }
    newton_matrix = identity - (h * kGamma) * jac;
    newton_matrix.makeCompressed();
    if (!same_pattern(newton_matrix, analyzed_pattern)) {
      lu.analyzePattern(newton_matrix);
      analyzed_pattern = newton_matrix;
    }
    lu.factorize(newton_matrix);
    ++stats.factorizations;
    if (lu.info() != Eigen::Success) {
      ++stats.rejected;
      h *= 0.5;
      last_rejected = true;
      continue;
    }

    bool newton_ok = true;
    for (int s = 0; s < kStages && newton_ok; ++s) {
      z = y;
      for (int j = 0; j < s; ++j) z.noalias() += (h * kA[s][j]) * k[j];
      stage = s == 0 ? Vector(y + (kC[0] * h) * f0) : Vector(z + (h * kGamma) * k[s - 1]);
      const double ts = t + kC[s] * h;
      double previous = std::numeric_limits<double>::infinity();
      bool converged = false;
      for (int iter = 0; iter < 10; ++iter) {
        rhs(ts, stage, fstage);
        ++stats.rhs_evaluations;
        if (!fstage.allFinite()) break;
        residual = stage - z - (h * kGamma) * fstage;
        delta = lu.solve(-residual);
        stage += delta;
        const double dn = scaled_norm(delta, stage);
        if (!std::isfinite(dn)) break;
        if (dn <= 1e-3 || (iter > 0 && dn <= 1e-2 && dn < 0.5 * previous)) {
          converged = true;
          break;
        }
        if (iter > 1 && dn > 0.9 * previous) break;
        previous = dn;
      }
      if (!converged) {
        newton_ok = false;
        break;
      }
      k[s] = (stage - z) / (h * kGamma);
    }

    if (!newton_ok || !stage.allFinite()) {
      ++stats.rejected;
      h *= 0.25;
      last_rejected = true;
      continue;
    }

    // Stiffly accurate: the last stage is the new state.
    const Vector& ynew = stage;
    err.setZero();
    for (int s = 0; s < kStages; ++s) err.noalias() += (h * (kA[kStages - 1][s] - kBhat[s])) * k[s];
    // Filter the estimate through the Newton matrix to suppress stiff components.
    err = lu.solve(err);
    const double en = error_norm(err, y, ynew, tol);

    if (en <= 1.0) {
      rhs(t_new, ynew, f1);
      ++stats.rhs_evaluations;
      if (!f1.allFinite()) {
        ++stats.rejected;
        h *= 0.25;
        last_rejected = true;
        continue;
      }
      const Vector hf0 = h * f0;
      const Vector hf1 = h * f1;
      builder.append(t_new, y, ynew, hf0, hf1, nullptr);
      ++stats.accepted;
      t = t_new;
      y = ynew;
      f0 = f1;
      jac_current = false;
      double fac = en == 0.0 ? kFacMax : kSafety * std::pow(en, -1.0 / 4.0);
      fac = std::clamp(fac, kFacMin, last_rejected ? 1.0 : kFacMax);
      h = std::min(h * fac, opt.max_step);
      last_rejected = false;
    } else {
      ++stats.rejected;
      h *= std::max(kFacMin, kSafety * std::pow(en, -1.0 / 4.0));
      last_rejected = true;
    }
  }
  return std::move(builder).finish(stats);
}

}  // namespace

DenseSolution integrate(const Rhs& rhs, const Vector& y0, double t0, double t1, const Tolerances& tol,
                        const Options& options) {
  check_arguments(y0, t0, t1, tol);
  switch (options.scheme) {
    case Scheme::dormand_prince:
      return integrate_dopri(rhs, y0, t0, t1, tol, options);
    case Scheme::sdirk4:
      return integrate_sdirk(rhs, y0, t0, t1, tol, options);
  }
  throw std::invalid_argument("integrate: unknown scheme");
}

}  // namespace mfbd::ode
