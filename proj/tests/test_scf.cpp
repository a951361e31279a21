#include <cmath>

#include <unsupported/Eigen/MatrixFunctions>

#include "doctest.h"
#include "fixtures.hpp"
#include "mfbd/scf.hpp"

using namespace mfbd;
using fixtures::Interaction;

namespace {

double sup_distance(const FieldTrajectory& a, const FieldTrajectory& b, double tau, int points = 2001) {
  double worst = 0.0;
  for (int k = 0; k < points; ++k) {
    const double t = tau * k / (points - 1);
    worst = std::max(worst, (a(t) - b(t)).cwiseAbs().maxCoeff());
  }
  return worst;
}

double min_entry(const FieldTrajectory& f, double tau, int points = 1001) {
  double lo = INFINITY;
  for (int k = 0; k < points; ++k) lo = std::min(lo, f(tau * k / (points - 1)).minCoeff());
  return lo;
}

ModelSpec two_state_switch(double gamma) {
  ModelSpec s;
  s.d = 2;
  s.lambda = Vector::Ones(2);
  s.mu = Vector::Ones(2);
  s.gamma = Matrix{{-gamma, gamma}, {gamma, -gamma}};
  s.w = Matrix::Zero(2, 2);
  s.r0 = Vector{{1.0, 0.0}};
  return s;
}

}  // namespace

TEST_CASE("field trajectories") {
  const FieldTrajectory c = FieldTrajectory::constant(Vector{{1.0, 2.0}}, 3.0);
  CHECK(c(1.7) == Vector{{1.0, 2.0}});
  CHECK_THROWS_AS(c(3.5), std::out_of_range);

  const FieldTrajectory s = FieldTrajectory::from_samples({0.0, 1.0, 3.0}, Matrix{{0.0}, {2.0}, {6.0}});
  CHECK(s(1.0)[0] == 2.0);
  CHECK(s(2.0)[0] == doctest::Approx(4.0));

  const FieldTrajectory b = FieldTrajectory::blend(FieldTrajectory::constant(Vector::Constant(1, 2.0), 3.0), s, 0.25);
  CHECK(b(3.0)[0] == doctest::Approx(0.75 * 2.0 + 0.25 * 6.0));

  const FieldTrajectory chained = FieldTrajectory::chain({0.0, 3.0}, {s, FieldTrajectory::constant(Vector::Constant(1, 6.0), 2.0)});
  CHECK(chained.horizon() == 5.0);
  CHECK(chained(2.0)[0] == doctest::Approx(4.0));
  CHECK(chained(4.0)[0] == 6.0);
  CHECK_THROWS_AS(FieldTrajectory::chain({0.0, 2.0}, {s, s}), std::invalid_argument);

  // A constant gap c over [0, tau] has L2 norm c sqrt(tau) per component.
  const FieldTrajectory zero = FieldTrajectory::constant(Vector::Zero(2), 4.0);
  const FieldTrajectory gap = FieldTrajectory::constant(Vector{{0.5, 1.5}}, 4.0);
  CHECK(trajectory_distance(zero, gap, 4.0, 512) == doctest::Approx(2.0 * 2.0));
}

TEST_CASE("repeated blending does not grow the representation without bound") {
  FieldTrajectory f = FieldTrajectory::constant(Vector::Ones(1), 1.0);
  for (int k = 0; k < 200; ++k) {
    f = FieldTrajectory::blend(f, FieldTrajectory::constant(Vector::Constant(1, k), 1.0), 0.5);
  }
  CHECK(std::isfinite(f(0.5)[0]));
}

TEST_CASE("moment map examples") {
  SUBCASE("exponential growth") {
    const ModelSpec s = fixtures::scalar(2, 1, 0, 1);
    const FieldTrajectory r = moment_map(s, FieldTrajectory::constant(s.r0, 1.0), 1.0);
    CHECK(std::abs(r(1.0)[0] - std::exp(1.0)) <= 1e-6);
  }
  SUBCASE("critical rates keep r0 whatever the field") {
    ModelSpec s = fixtures::scalar(1.5, 1.5, 0, 3);
    const FieldTrajectory phi = FieldTrajectory::from_samples({0.0, 2.0}, Matrix{{0.0}, {50.0}});
    const FieldTrajectory r = moment_map(s, phi, 2.0);
    CHECK(std::abs(r(2.0)[0] - 3.0) <= 1e-9);
  }
  SUBCASE("two-state switching") {
    const double g = 0.7;
    const ModelSpec s = two_state_switch(g);
    const FieldTrajectory r = moment_map(s, FieldTrajectory::constant(s.r0, 3.0), 3.0);
    for (double t : {0.0, 0.4, 1.1, 3.0}) {
      CHECK(std::abs(r(t)[0] - 0.5 * (1 + std::exp(-2 * g * t))) <= 1e-7);
      CHECK(std::abs(r(t)[1] - 0.5 * (1 - std::exp(-2 * g * t))) <= 1e-7);
    }
  }
}

TEST_CASE("without interaction one correction suffices") {
  const ModelSpec s = fixtures::five_type(Interaction::none);
  const double tau = 4.0;
  const ScfResult res = solve_scf(s, tau);
  CHECK(res.iterations == 1);
  CHECK(res.residual <= 1e-6);

  const Matrix a = s.gamma.transpose() + Matrix((s.lambda - s.mu).asDiagonal());
  for (double t : {0.5, 2.0, 4.0}) {
    const Vector expected = (a * t).exp() * s.r0;
    CHECK((res.field(t) - expected).cwiseAbs().maxCoeff() <= 1e-6 * std::max(1.0, expected.maxCoeff()));
  }
}

TEST_CASE("logistic closed form") {
  const ModelSpec s = fixtures::scalar(2, 1, 0.01, 1);
  const double tau = 20.0;
  const FieldTrajectory direct = solve_moment_direct(s, tau);
  const ScfResult res = solve_scf(s, tau);
  double scf_err = 0.0, direct_err = 0.0;
  for (int k = 0; k <= 400; ++k) {
    const double t = tau * k / 400;
    const double exact = fixtures::logistic(t, 1.0, 100.0, 1.0);
    scf_err = std::max(scf_err, std::abs(res.field(t)[0] - exact));
    direct_err = std::max(direct_err, std::abs(direct(t)[0] - exact) / exact);
  }
  CHECK(scf_err <= 1e-5);
  CHECK(direct_err <= 1e-6);
}

TEST_CASE("five-type configurations converge and agree with the direct solve") {
  for (Interaction kind : {Interaction::capacity, Interaction::frequency, Interaction::mixed}) {
    CAPTURE(static_cast<int>(kind));
    const ModelSpec s = fixtures::five_type(kind);
    const double tau = fixtures::kFiveTypeHorizon;
    const ScfResult res = solve_scf(s, tau);
    CHECK(res.iterations < 50);
    CHECK(res.residual <= 1e-6);
    CHECK(sup_distance(res.field, solve_moment_direct(s, tau, {1e-11, 1e-12, 200000}), tau) <= 1e-5);
    CHECK(min_entry(res.field, tau) >= -1e-9);

    // Applying the map once more moves the field by at most delta.
    const FieldTrajectory again = moment_map(s, res.field, tau, ScfConfig{}.tol);
    CHECK(trajectory_distance(res.field, again, tau, 512) <= 1e-6);
  }
}

TEST_CASE("non-convergence carries the last iterate") {
  const ModelSpec s = fixtures::scalar(2, 1, 0.01, 1);
  ScfConfig config;
  config.max_iters = 3;
  try {
    solve_scf(s, 20.0, config);
    FAIL("expected NonConvergence");
  } catch (const NonConvergence& e) {
    CHECK(e.last_iterate().iterations == 3);
    CHECK(e.last_iterate().residual > config.delta);
    CHECK(e.last_iterate().field.horizon() == 20.0);
    CHECK(e.last_iterate().residual_history.size() == 4);
  }
}

TEST_CASE("windowed iteration reproduces the whole-horizon fixed point") {
  const ModelSpec s = fixtures::scalar(2, 1, 0.01, 1);
  ScfConfig config;
  config.window = 10.0;
  const double tau = 45.0;
  const ScfResult res = solve_scf(s, tau, config);
  CHECK(res.windows == 5);
  CHECK(res.residual <= 1e-5);
  for (double t : {0.0, 5.0, 10.0, 17.3, 30.0, 45.0}) {
    CHECK(std::abs(res.field(t)[0] - fixtures::logistic(t, 1.0, 100.0, 1.0)) <= 1e-5);
  }
}

TEST_CASE("steady states") {
  SUBCASE("logistic root") {
    const ModelSpec s = fixtures::scalar(2, 1, 0.01, 1);
    const SteadyStates st = steady_states(s, {s.r0, Vector::Constant(1, 300.0)});
    REQUIRE(st.roots.size() == 2);
    CHECK(st.roots[0][0] == 0.0);
    CHECK(std::abs(st.roots[1][0] - 100.0) <= 1e-10);
  }
  SUBCASE("subcritical models only have the trivial root") {
    ModelSpec s = fixtures::five_type(Interaction::capacity);
    s.lambda = Vector::Constant(5, 0.8);
    const SteadyStates st = steady_states(s, default_steady_guesses(s, 5.0));
    CHECK(st.roots.size() == 1);
    CHECK(st.roots[0].isZero());
  }
  SUBCASE("five-type roots are fixed points of the moment equation") {
    for (Interaction kind : {Interaction::capacity, Interaction::frequency, Interaction::mixed}) {
      const ModelSpec s = fixtures::five_type(kind);
      const SteadyStates st = steady_states(s, default_steady_guesses(s, fixtures::kFiveTypeHorizon));
      REQUIRE(st.roots.size() >= 2);
      for (const Vector& root : st.roots) {
        CHECK(moment_rhs(s, root).cwiseAbs().maxCoeff() <= 1e-10);
        CHECK((root.array() >= 0.0).all());
      }
    }
  }
  SUBCASE("bad guesses are skipped with a diagnostic") {
    const ModelSpec s = fixtures::scalar(2, 1, 0.01, 1);
    const SteadyStates st = steady_states(s, {Vector::Constant(1, -1.0), Vector::Zero(2)});
    CHECK(st.roots.size() == 1);
    CHECK(st.diagnostics.size() == 2);
  }
}
