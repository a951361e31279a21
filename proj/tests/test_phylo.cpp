#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "mfbd/master.hpp"
#include "mfbd/ode.hpp"
#include "mfbd/phylo.hpp"

using namespace mfbd;

namespace {

const char* const kTwoTip = "((A[&type=1,event=sample]:1.0,B[&type=1,event=sample]:1.0)[&type=1]:0.5)[&type=1];";

// Constant-rate single-type oracle. The observation probability u = 1 - p
// solves u' = g u - lambda u^2 with u(0) = rho, g = lambda - mu, so
// u(t) = g rho e^{gt} / D(t) with D(t) = g + lambda rho (e^{gt} - 1). D keeps the
// sign of g, so the log uses |D|.
struct ConstantRate {
  double lambda, mu, rho;

  double g() const { return lambda - mu; }
  double denom(double t) const { return g() + lambda * rho * (std::exp(g() * t) - 1.0); }
  double p(double t) const { return 1.0 - g() * rho * std::exp(g() * t) / denom(t); }
  // Integral of 2 lambda p - lambda - mu = g - 2 lambda u over (a, b].
  double log_propagator(double a, double b) const {
    return g() * (b - a) - 2.0 * (std::log(std::abs(denom(b))) - std::log(std::abs(denom(a))));
  }
};

ModelSpec one_type(double lambda, double mu, double w = 0.0) { return fixtures::scalar(lambda, mu, w, 1.0); }

double rel_error(double got, double expected) { return std::abs(got - expected) / std::abs(expected); }

ModelSpec two_type(double w_scale) {
  ModelSpec s;
  s.d = 2;
  s.lambda = Vector{{1.6, 1.1}};
  s.mu = Vector{{0.6, 0.7}};
  s.gamma = Matrix{{-0.3, 0.3}, {0.2, -0.2}};
  s.w = w_scale * Matrix::Ones(2, 2);
  s.r0 = Vector{{1.0, 0.0}};
  return s;
}

const char* const kTwoTypeTree =
    "(((A[&type=1,event=sample]:0.7,(B[&type=2,event=sample]:0.4)[&type=1,event=typechange,to=2]:0.3)[&type=1]:0.8,"
    "(C[&type=1,event=fossil]:0.5,D[&type=1,event=sample]:1.2)[&type=1]:0.3)[&type=1]:0.4)[&type=1];";

}  // namespace

TEST_CASE("parsing the minimal tree") {
  const PhyloTree t = parse_tree(kTwoTip);
  CHECK(t.tau == doctest::Approx(1.5));
  REQUIRE(t.branches.size() == 3);
  const Branch& stem = t.branches[static_cast<std::size_t>(t.root)];
  CHECK(stem.end == BranchEnd::split);
  CHECK(stem.t1 == doctest::Approx(1.0));
  CHECK(stem.t2 == 1.5);
  CHECK(stem.parent == -1);
  for (int child : {stem.left, stem.right}) {
    const Branch& b = t.branches[static_cast<std::size_t>(child)];
    CHECK(b.end == BranchEnd::sample);
    CHECK(b.t1 == 0.0);
    CHECK(b.t2 == stem.t1);
    CHECK(b.parent == t.root);
  }
  CHECK(t.explicit_origin);
  CHECK(parse_tree("(A[&type=1,event=sample]:1,B[&type=1,event=sample]:1)[&type=1]:0.5;").tau == doctest::Approx(1.5));
}

TEST_CASE("fossils and type changes") {
  const PhyloTree t = parse_tree(kTwoTypeTree);
  int fossils = 0, changes = 0;
  for (const Branch& b : t.branches) {
    if (b.end == BranchEnd::fossil) {
      ++fossils;
      CHECK(b.t1 > 0.0);
      CHECK(b.t1 < b.t2);
    }
    if (b.end == BranchEnd::type_change) {
      ++changes;
      const Branch& child = t.branches[static_cast<std::size_t>(b.left)];
      CHECK(child.type != b.type);
      CHECK(child.t2 == b.t1);
    }
  }
  CHECK(fossils == 1);
  CHECK(changes == 1);
  CHECK(t.tau == doctest::Approx(1.9));
}

TEST_CASE("malformed trees are reported with a position") {
  struct Case {
    std::string text;
    std::size_t position;
  };
  const std::vector<Case> cases{
      {"(A[&type=1,event=sample]:1.0", 28},
      {"(A[&type=1,event=sample]:1.0,B[&type=1,event=sample]:2.0)[&type=1]:1;", 1},
      {"(A[&type=1,event=sample]:1.0)[&type=1,event=typechange,to=1]:1;", 58},
      {"A[&event=sample]:1;", 0},
      {"A[&type=1,event=sample]:-1;", 24},
      {"A[&type=1,event=sample,event=sample]:1;", 23},
      {"(A[&type=1,event=fossil]:1.0)[&type=1];", 1},
      {"(A[&type=1,event=sample]:1,B[&type=1,event=sample]:1,C[&type=1,event=sample]:1)[&type=1]:1;", 0},
      {"A[&type=1,event=sample]:1; x", 27},
  };
  for (const Case& c : cases) {
    CAPTURE(c.text);
    try {
      parse_tree(c.text);
      FAIL("expected a parse error");
    } catch (const TreeParseError& e) {
      CHECK(e.position() == c.position);
      CHECK(std::string(e.what()).find("position " + std::to_string(c.position)) != std::string::npos);
    }
  }
}

TEST_CASE("serialization round-trips") {
  for (const char* text : {kTwoTip, kTwoTypeTree, "'tip one'[&type=3,event=sample]:0.1;",
                           "(A[&type=1,event=sample]:0.30000000000000004,B[&type=1,event=sample]:0.30000000000000004)[&type=1]:1e-3;"}) {
    CAPTURE(text);
    const PhyloTree t = parse_tree(text);
    const std::string once = serialize_tree(t);
    CHECK(parse_tree(once) == t);
    CHECK(serialize_tree(parse_tree(once)) == once);
  }
}

TEST_CASE("non-observation probability") {
  SUBCASE("nothing is ever observed") {
    ModelSpec s = fixtures::five_type(fixtures::Interaction::mixed);
    const FieldTrajectory r = solve_moment_direct(s, 5.0);
    const NonObservation p = solve_nonobs(s, {0.0, 0.0}, r, 5.0);
    for (int k = 0; k <= 50; ++k) CHECK((p.raw(0.1 * k).array() - 1.0).abs().maxCoeff() <= 1e-8);
  }
  SUBCASE("classical extinction probability") {
    const ModelSpec s = one_type(2, 1);
    const NonObservation p = solve_nonobs(s, {1.0, 0.0}, FieldTrajectory::constant(s.r0, 4.0), 4.0);
    CHECK(p(0.0)[0] == 0.0);
    for (int k = 1; k <= 40; ++k) {
      const double t = 0.1 * k;
      const double exact = (std::exp(t) - 1) / (2 * std::exp(t) - 1);
      CHECK(std::abs(p(t)[0] - exact) <= 1e-6 * exact);
    }
  }
  SUBCASE("starts at 1 - rho") {
    const ModelSpec s = two_type(0.02);
    const NonObservation p = solve_nonobs(s, {0.3, 0.1}, solve_moment_direct(s, 2.0), 2.0);
    CHECK(p(0.0)[0] == 0.7);
    CHECK(p(0.0)[1] == 0.7);
    for (int k = 0; k <= 20; ++k) {
      const Vector v = p.raw(0.1 * k);
      CHECK(v.minCoeff() >= -1e-12);
      CHECK(v.maxCoeff() <= 1.0 + 1e-12);
    }
  }
  SUBCASE("the extinction probability is the absorbed mass of the master equation") {
    const ModelSpec s = one_type(2, 1);
    const int kappa = 200;
    const TruncatedLattice lattice(1, kappa);
    const int one = 1;
    const DistributionTrajectory traj = solve_master(s, point_mass(lattice, {&one, 1}), kappa, 3.0);
    const NonObservation p = solve_nonobs(s, {1.0, 0.0}, FieldTrajectory::constant(s.r0, 3.0), 3.0);
    for (double t : {0.5, 1.0, 2.0, 3.0}) CHECK(std::abs(traj.distribution(t)[0] - p(t)[0]) <= 1e-6);
  }
}

TEST_CASE("single-branch likelihoods") {
  const PhyloTree stem = parse_tree("A[&type=1,event=sample]:1.0;");
  CHECK(stem.tau == 1.0);
  CHECK(log_likelihood(stem, one_type(0, 0), {1.0, 0.0}, false) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(log_likelihood(stem, one_type(0, 1), {1.0, 0.0}, false) + 1.0) <= 1e-9);
  // Conditioning on observation cancels the survival factor exactly.
  CHECK(std::abs(log_likelihood(stem, one_type(0, 1), {1.0, 0.0}, true)) <= 1e-9);

  for (double rho : {1.0, 0.4}) {
    const ConstantRate oracle{1.7, 0.6, rho};
    const double expected = std::log(rho) + oracle.log_propagator(0.0, 1.0);
    CHECK(rel_error(log_likelihood(stem, one_type(1.7, 0.6), {rho, 0.0}, false), expected) <= 1e-6);
  }
}

TEST_CASE("two-tip likelihood matches the closed form") {
  const PhyloTree t = parse_tree(kTwoTip);
  for (double rho : {1.0, 0.5}) {
    for (auto [lambda, mu] : {std::pair{2.0, 1.0}, std::pair{1.3, 0.2}, std::pair{0.8, 1.1}}) {
      CAPTURE(rho);
      CAPTURE(lambda);
      const ConstantRate oracle{lambda, mu, rho};
      const double tip = std::log(rho) + oracle.log_propagator(0.0, 1.0);
      const double unconditioned = 2 * tip + std::log(lambda) + oracle.log_propagator(1.0, 1.5);
      const double conditioned = unconditioned - std::log(1.0 - oracle.p(1.5));
      CHECK(rel_error(log_likelihood(t, one_type(lambda, mu), {rho, 0.0}, false), unconditioned) <= 1e-6);
      CHECK(rel_error(log_likelihood(t, one_type(lambda, mu), {rho, 0.0}, true), conditioned) <= 1e-6);
    }
  }
}

TEST_CASE("swapping split children leaves the likelihood unchanged") {
  const ModelSpec s = two_type(0.02);
  const PhyloTree t = parse_tree(kTwoTypeTree);
  const SamplingSpec sampling{0.6, 0.3};
  const double base = log_likelihood(t, s, sampling);
  REQUIRE(std::isfinite(base));
  for (std::size_t k = 0; k < t.branches.size(); ++k) {
    if (t.branches[k].end != BranchEnd::split) continue;
    PhyloTree swapped = parse_tree(serialize_tree(t));
    std::swap(swapped.branches[k].left, swapped.branches[k].right);
    CHECK(log_likelihood(parse_tree(serialize_tree(swapped)), s, sampling) == base);
  }
}

TEST_CASE("the likelihood is continuous as the interaction vanishes") {
  const PhyloTree t = parse_tree(kTwoTypeTree);
  const SamplingSpec sampling{0.6, 0.3};
  const double off = log_likelihood(t, two_type(0.0), sampling);
  const double tiny = log_likelihood(t, two_type(1e-8), sampling);
  CHECK(std::abs(tiny - off) <= 1e-4);
  CHECK(log_likelihood(t, two_type(0.05), sampling) != off);
}

TEST_CASE("fossils without fossil sampling have zero likelihood") {
  const PhyloTree t = parse_tree(kTwoTypeTree);
  const LikelihoodResult res = evaluate_likelihood(t, two_type(0.02), {0.6, 0.0});
  CHECK(res.loglik == -std::numeric_limits<double>::infinity());
  CHECK_FALSE(res.diagnostics.empty());
}

TEST_CASE("the fossil rate can use the mean-field death rate") {
  const PhyloTree t = parse_tree(kTwoTypeTree);
  const ModelSpec s = two_type(0.05);
  LikelihoodOptions meanfield;
  meanfield.fossil_uses_meanfield_rate = true;
  const LikelihoodResult a = evaluate_likelihood(t, s, {0.6, 0.3});
  const LikelihoodResult b = evaluate_likelihood(t, s, {0.6, 0.3}, meanfield);
  CHECK(b.loglik > a.loglik);
  CHECK(a.scf_iterations > 0);
  CHECK(a.tau == t.tau);
}

TEST_CASE("the log propagator agrees with a linear-space solve") {
  const ModelSpec s = two_type(0.05);
  const double tau = 3.0;
  const ScfResult scf = solve_scf(s, tau);
  const NonObservation p = solve_nonobs(s, {0.5, 0.2}, scf.field, tau);
  for (int type : {0, 1}) {
    for (auto [a, b] : {std::pair{0.0, 3.0}, std::pair{0.37, 1.9}}) {
      const ode::Rhs rhs = [&](double t, const Vector& q, Vector& dq) {
        const Vector r = p.field_at(t);
        const double c = 2 * s.lambda[type] * p(t)[type] + s.gamma(type, type) - s.lambda[type] - s.mu[type] -
                         s.w.row(type).dot(r);
        dq = c * q;
      };
      const double linear = ode::integrate(rhs, Vector::Ones(1), a, b, {1e-12, 1e-14, 200000})(b)[0];
      const double logged = log_propagator_integral(s, p, type, a, b);
      CHECK(std::abs(std::exp(logged) - linear) <= 1e-8 * linear);
    }
  }
}

TEST_CASE("tree types must exist in the model") {
  const PhyloTree t = parse_tree(kTwoTypeTree);
  CHECK_THROWS_AS(log_likelihood(t, one_type(1, 0.5), {1.0, 0.0}), std::invalid_argument);
}
