#include <random>

#include "doctest.h"
#include "mfbd/model.hpp"

using namespace mfbd;

namespace {

ModelSpec scalar(double lambda, double mu, double w, double r0) {
  ModelSpec s;
  s.d = 1;
  s.lambda = Vector::Constant(1, lambda);
  s.mu = Vector::Constant(1, mu);
  s.gamma = Matrix::Zero(1, 1);
  s.w = Matrix::Constant(1, 1, w);
  s.r0 = Vector::Constant(1, r0);
  return s;
}

bool mentions(const std::vector<Violation>& vs, const std::string& field) {
  for (const auto& v : vs) {
    if (v.field == field) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("a simple scalar model is valid") {
  ModelSpec s = scalar(1, 1, 0, 1);
  s.interaction_cap = 1e6;
  CHECK(validate(s).empty());
}

TEST_CASE("gamma rows must sum to zero") {
  ModelSpec s = scalar(1, 1, 0, 1);
  s.gamma(0, 0) = 0.1;
  const auto v = validate(s);
  REQUIRE(mentions(v, "gamma"));
}

TEST_CASE("interaction matrix must be nonnegative") {
  ModelSpec s = scalar(1, 1, -0.1, 1);
  CHECK(mentions(validate(s), "w"));
}

TEST_CASE("every violation is reported") {
  ModelSpec s = scalar(-1, std::nan(""), 0, 0);
  s.interaction_cap = -1;
  const auto v = validate(s);
  CHECK(mentions(v, "lambda"));
  CHECK(mentions(v, "mu"));
  CHECK(mentions(v, "r0"));
  CHECK(mentions(v, "interaction_cap"));
}

TEST_CASE("cap must exceed the initial total") {
  ModelSpec s = scalar(1, 1, 0, 10);
  s.interaction_cap = 10;
  CHECK(mentions(validate(s), "interaction_cap"));
}

TEST_CASE("dimension mismatches are violations, not crashes") {
  ModelSpec s = scalar(1, 1, 0, 1);
  s.d = 2;
  const auto v = validate(s);
  CHECK(mentions(v, "lambda"));
  CHECK(mentions(v, "gamma"));
  CHECK(mentions(v, "w"));
}

TEST_CASE("off-diagonal-only gamma is completed") {
  ModelSpec s;
  s.d = 3;
  s.lambda = Vector::Ones(3);
  s.mu = Vector::Ones(3);
  s.w = Matrix::Zero(3, 3);
  s.r0 = Vector::Ones(3);
  s.gamma = Matrix::Zero(3, 3);
  s.gamma(0, 1) = 0.2;
  s.gamma(0, 2) = 0.3;
  s.gamma(2, 0) = 0.5;
  CHECK_FALSE(validate(s).empty());
  const ModelSpec n = normalized(s);
  CHECK(n.gamma(0, 0) == doctest::Approx(-0.5));
  CHECK(n.gamma(1, 1) == 0.0);
  CHECK(n.gamma(2, 2) == doctest::Approx(-0.5));
  CHECK(validate(n).empty());
  CHECK(normalized(n).gamma == n.gamma);
}

TEST_CASE("mu_tilde examples") {
  CHECK(mu_tilde(scalar(1, 1, 0.01, 1), Vector::Constant(1, 100))[0] == doctest::Approx(2.0));

  ModelSpec s;
  s.d = 2;
  s.lambda = Vector::Ones(2);
  s.mu = Vector::Ones(2);
  s.gamma = Matrix::Zero(2, 2);
  s.w = Matrix::Ones(2, 2);
  s.r0 = Vector::Ones(2);
  const Vector m = mu_tilde(s, Vector{{3.0, 4.0}});
  CHECK(m[0] == 8.0);
  CHECK(m[1] == 8.0);

  s.w.setZero();
  CHECK(mu_tilde(s, Vector{{1e5, 7.0}}) == s.mu);
}

TEST_CASE("mu_tilde rejects a field of the wrong dimension") {
  CHECK_THROWS_AS(mu_tilde(scalar(1, 1, 0, 1), Vector::Zero(2)), std::invalid_argument);
}

TEST_CASE("mu_tilde properties on random models") {
  std::mt19937_64 rng(20240611);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 1 + static_cast<int>(rng() % 5);
    ModelSpec s;
    s.d = d;
    s.lambda = Vector::Zero(d);
    s.mu = Vector::NullaryExpr(d, [&] { return unit(rng); });
    s.gamma = Matrix::Zero(d, d);
    s.w = Matrix::NullaryExpr(d, d, [&] { return 0.1 * unit(rng); });
    s.r0 = Vector::Ones(d);
    s.interaction_cap = 50.0;

    CHECK(mu_tilde(s, Vector::Zero(d)) == s.mu);

    const Vector r = Vector::NullaryExpr(d, [&] { return 5.0 * unit(rng); });
    const Vector r2 = r + Vector::NullaryExpr(d, [&] { return 2.0 * unit(rng); });
    const Vector a = mu_tilde(s, r), b = mu_tilde(s, r2);
    CHECK(((b - a).array() >= 0.0).all());
    CHECK(((a - s.mu).array() >= 0.0).all());

    // Lipschitz in the max norm with the largest row sum of W.
    const double lip = s.w.rowwise().sum().maxCoeff();
    CHECK((b - a).cwiseAbs().maxCoeff() <= lip * (r2 - r).cwiseAbs().maxCoeff() * (1 + 1e-12));

    // Bounded no matter how large the field.
    const Vector huge = Vector::Constant(d, 1e12);
    const Vector bound = s.mu + s.w * Vector::Constant(d, s.interaction_cap);
    CHECK(((mu_tilde(s, huge) - bound).array() <= 1e-9).all());
  }
}

TEST_CASE("rescaling above the cap keeps the direction and is continuous") {
  ModelSpec s;
  s.d = 2;
  s.lambda = Vector::Ones(2);
  s.mu = Vector::Zero(2);
  s.gamma = Matrix::Zero(2, 2);
  s.w = Matrix::Identity(2, 2);
  s.r0 = Vector::Ones(2);
  s.interaction_cap = 10.0;
  const Vector below = mu_tilde(s, Vector{{2.5, 7.5}});
  const Vector above = mu_tilde(s, Vector{{25.0, 75.0}});
  CHECK(below[0] == doctest::Approx(above[0]));
  CHECK(below[1] == doctest::Approx(above[1]));
  const Vector edge = mu_tilde(s, Vector{{2.5, 7.5 + 1e-12}});
  CHECK((edge - below).norm() < 1e-10);
}

TEST_CASE("sampling probabilities must be in the unit interval") {
  CHECK(validate(SamplingSpec{1.0, 0.0}).empty());
  CHECK(validate(SamplingSpec{1.5, 0.0}).size() == 1);
  CHECK(validate(SamplingSpec{0.5, -0.1}).size() == 1);
}
