#include <cmath>
#include <random>

#include <unsupported/Eigen/MatrixFunctions>

#include "doctest.h"
#include "mfbd/ode.hpp"

using namespace mfbd::ode;
using Matrix = Eigen::MatrixXd;

namespace {

Options with(Scheme scheme) {
  Options o;
  o.scheme = scheme;
  return o;
}

const Scheme kSchemes[] = {Scheme::dormand_prince, Scheme::sdirk4};

const char* name(Scheme s) { return s == Scheme::dormand_prince ? "dormand_prince" : "sdirk4"; }

}  // namespace

TEST_CASE("zero field keeps the state constant") {
  for (Scheme s : kSchemes) {
    CAPTURE(name(s));
    const Rhs rhs = [](double, const Vector&, Vector& dy) { dy.setZero(); };
    const DenseSolution sol = integrate(rhs, Vector::Constant(1, 2.0), 0.0, 1.0, {}, with(s));
    for (double t : {0.0, 0.1, 0.37, 0.5, 1.0}) CHECK(sol(t)[0] == 2.0);
  }
}

TEST_CASE("exponential decay") {
  for (Scheme s : kSchemes) {
    CAPTURE(name(s));
    const Rhs rhs = [](double, const Vector& y, Vector& dy) { dy = -y; };
    const DenseSolution sol = integrate(rhs, Vector::Ones(1), 0.0, 1.0, {1e-8, 1e-10, 200000}, with(s));
    CHECK(std::abs(sol(1.0)[0] - std::exp(-1.0)) <= 1e-7);
    for (double t = 0.0; t <= 1.0; t += 0.013) CHECK(std::abs(sol(t)[0] - std::exp(-t)) <= 1e-7);
  }
}

TEST_CASE("logistic growth") {
  for (Scheme s : kSchemes) {
    CAPTURE(name(s));
    const Rhs rhs = [](double, const Vector& y, Vector& dy) { dy = y.array() * (1.0 - y.array()); };
    const DenseSolution sol = integrate(rhs, Vector::Constant(1, 0.1), 0.0, 5.0, {}, with(s));
    CHECK(std::abs(sol(5.0)[0] - 1.0 / (1.0 + 9.0 * std::exp(-5.0))) <= 1e-6);
  }
}

TEST_CASE("linear systems match the matrix exponential") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal;
  const Tolerances tol{1e-8, 1e-10, 200000};
  for (int trial = 0; trial < 12; ++trial) {
    const int n = 2 + trial % 3;
    const Matrix a = Matrix::NullaryExpr(n, n, [&] { return 0.7 * normal(rng); });
    const Vector y0 = Vector::NullaryExpr(n, [&] { return normal(rng); });
    const Matrix expected_map = (a * 1.5).exp();
    const Vector expected = expected_map * y0;
    for (Scheme s : kSchemes) {
      CAPTURE(name(s));
      Options o = with(s);
      o.jacobian = [&a](double, const Vector&) { return SparseMatrix(a.sparseView()); };
      const Rhs rhs = [&a](double, const Vector& y, Vector& dy) { dy.noalias() = a * y; };
      const Vector got = integrate(rhs, y0, 0.0, 1.5, tol, o)(1.5);
      for (int i = 0; i < n; ++i) {
        CHECK(std::abs(got[i] - expected[i]) <= 10 * (tol.atol + tol.rtol * std::abs(expected[i])) +
                                                     10 * tol.rtol * expected.cwiseAbs().maxCoeff());
      }
    }
  }
}

TEST_CASE("integrating back along the reversed field returns to the start") {
  const Tolerances tol{1e-9, 1e-11, 200000};
  const Rhs forward = [](double, const Vector& y, Vector& dy) {
    dy[0] = y[1];
    dy[1] = -std::sin(y[0]);
  };
  const Rhs backward = [&forward](double t, const Vector& y, Vector& dy) {
    forward(t, y, dy);
    dy = -dy;
  };
  const Vector y0{{1.0, 0.2}};
  for (Scheme s : kSchemes) {
    CAPTURE(name(s));
    const Vector end = integrate(forward, y0, 0.0, 3.0, tol, with(s))(3.0);
    const Vector back = integrate(backward, end, 0.0, 3.0, tol, with(s))(3.0);
    CHECK((back - y0).cwiseAbs().maxCoeff() <= 100 * (tol.atol + tol.rtol));
  }
}

TEST_CASE("dense output at step midpoints agrees with re-integration") {
  const Tolerances tol{1e-8, 1e-10, 200000};
  const Rhs rhs = [](double t, const Vector& y, Vector& dy) {
    dy[0] = y[1];
    dy[1] = -y[0] + 0.3 * std::cos(t);
  };
  const Vector y0{{1.0, 0.0}};
  for (Scheme s : kSchemes) {
    CAPTURE(name(s));
    const DenseSolution sol = integrate(rhs, y0, 0.0, 4.0, tol, with(s));
    REQUIRE(sol.steps() > 3);
    for (std::size_t k = 0; k < sol.steps(); k += std::max<std::size_t>(1, sol.steps() / 10)) {
      const double a = sol.knots()[k], b = sol.knots()[k + 1];
      const double mid = 0.5 * (a + b);
      Options fine = with(Scheme::dormand_prince);
      fine.max_step = 0.5 * (b - a);
      const Vector ref = integrate(rhs, sol.state_at_knot(k), a, mid, {1e-12, 1e-14, 200000}, fine)(mid);
      CHECK((sol(mid) - ref).cwiseAbs().maxCoeff() <= 10 * (tol.atol + tol.rtol * ref.cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("evaluation at knots reproduces step endpoints exactly") {
  const Rhs rhs = [](double t, const Vector& y, Vector& dy) { dy = -y * (1 + std::sin(t)); };
  for (Scheme s : kSchemes) {
    const DenseSolution sol = integrate(rhs, Vector::Ones(2), 0.0, 2.0, {}, with(s));
    for (std::size_t k = 0; k < sol.knots().size(); ++k) {
      CHECK(sol(sol.knots()[k]) == sol.state_at_knot(k));
    }
    CHECK(sol.knots().front() == 0.0);
    CHECK(sol.knots().back() == 2.0);
    for (std::size_t k = 1; k < sol.knots().size(); ++k) CHECK(sol.knots()[k] > sol.knots()[k - 1]);
  }
}

TEST_CASE("stiff decay towards a moving target") {
  // y' = -k (y - cos t) has the slow solution y ~ (k^2 cos t + k sin t) / (k^2 + 1).
  const double k = 1e6;
  const Rhs rhs = [k](double t, const Vector& y, Vector& dy) { dy[0] = -k * (y[0] - std::cos(t)); };
  Options o = with(Scheme::sdirk4);
  o.jacobian = [k](double, const Vector&) {
    SparseMatrix j(1, 1);
    j.insert(0, 0) = -k;
    return j;
  };
  const double y0 = k * k / (k * k + 1);
  const Tolerances tol{1e-8, 1e-10, 200000};
  const DenseSolution sol = integrate(rhs, Vector::Constant(1, y0), 0.0, 2.0, tol, o);
  const double exact = (k * k * std::cos(2.0) + k * std::sin(2.0)) / (k * k + 1);
  CHECK(std::abs(sol(2.0)[0] - exact) <= 1e-7);
  CHECK(sol.steps() < 500);
  // An explicit scheme is held to steps of order 1 / k and runs out of budget.
  CHECK_THROWS_AS(integrate(rhs, Vector::Constant(1, y0), 0.0, 2.0, {1e-8, 1e-10, 20000}), IntegrationError);
}

TEST_CASE("failures are reported with the time they occurred") {
  const Rhs blowup = [](double, const Vector& y, Vector& dy) { dy = y.cwiseAbs2(); };
  for (Scheme s : kSchemes) {
    CAPTURE(name(s));
    try {
      integrate(blowup, Vector::Ones(1), 0.0, 2.0, {}, with(s));
      FAIL("expected an integration failure");
    } catch (const IntegrationError& e) {
      // The exact solution 1 / (1 - t) blows up at t = 1.
      CHECK(std::abs(e.time() - 1.0) <= 1e-6);
    }
  }

  const Rhs decay = [](double, const Vector& y, Vector& dy) { dy = -y; };
  try {
    integrate(decay, Vector::Ones(1), 0.0, 100.0, {1e-10, 1e-12, 5});
    FAIL("expected the step budget to run out");
  } catch (const IntegrationError& e) {
    CHECK(e.kind() == FailureKind::step_limit);
  }

  const Rhs nan_field = [](double t, const Vector&, Vector& dy) { dy.setConstant(t > 0.5 ? std::nan("") : 1.0); };
  CHECK_THROWS_AS(integrate(nan_field, Vector::Ones(1), 0.0, 1.0), IntegrationError);
}

TEST_CASE("invalid arguments are rejected") {
  const Rhs rhs = [](double, const Vector& y, Vector& dy) { dy = -y; };
  CHECK_THROWS_AS(integrate(rhs, Vector::Ones(1), 1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(integrate(rhs, Vector::Ones(1), 0.0, 1.0, {0.0, 1e-10, 10}), std::invalid_argument);
  CHECK_THROWS_AS(integrate(rhs, Vector::Constant(1, std::nan("")), 0.0, 1.0), std::invalid_argument);
  const DenseSolution sol = integrate(rhs, Vector::Ones(1), 0.0, 1.0);
  CHECK_THROWS_AS(sol(1.5), std::out_of_range);
}

TEST_CASE("numerical Jacobian of a linear map") {
  const Matrix a{{1.0, 2.0}, {-3.0, 0.5}};
  const Rhs rhs = [&a](double, const Vector& y, Vector& dy) { dy = a * y; };
  const Matrix j = Matrix(numerical_jacobian(rhs, 0.0, Vector{{0.3, -0.7}}));
  CHECK((j - a).cwiseAbs().maxCoeff() < 1e-6);
}
