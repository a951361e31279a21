#pragma once

#include <cmath>

#include "mfbd/model.hpp"

namespace fixtures {

using mfbd::Matrix;
using mfbd::ModelSpec;
using mfbd::Vector;

inline ModelSpec scalar(double lambda, double mu, double w, double r0) {
  ModelSpec s;
  s.d = 1;
  s.lambda = Vector::Constant(1, lambda);
  s.mu = Vector::Constant(1, mu);
  s.gamma = Matrix::Zero(1, 1);
  s.w = Matrix::Constant(1, 1, w);
  s.r0 = Vector::Constant(1, r0);
  return s;
}

/// K r0 e^{g t} / (K + r0 (e^{g t} - 1)).
inline double logistic(double t, double g, double k, double r0) {
  const double e = std::exp(g * t);
  return k * r0 * e / (k + r0 * (e - 1.0));
}

enum class Interaction { none, capacity, frequency, mixed };

/// Five types, type 1 with the higher birth rate, shared death rate, Toeplitz
/// transition rates 0.1 * 2^{1-|i-j|}, and ||W||_F = 0.01 when W != 0.
inline ModelSpec five_type(Interaction kind) {
  const int d = 5;
  ModelSpec s;
  s.d = d;
  s.lambda = Vector::Constant(d, 1.4);
  s.lambda[0] = 1.8;
  s.mu = Vector::Ones(d);
  s.gamma = Matrix::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      if (i != j) s.gamma(i, j) = 0.1 * std::pow(0.5, std::abs(i - j) - 1);
    }
    s.gamma(i, i) = -s.gamma.row(i).sum();
  }
  Matrix m = Matrix::Zero(d, d);
  switch (kind) {
    case Interaction::none:
      break;
    case Interaction::capacity:
      m = Matrix::Ones(d, d);
      break;
    case Interaction::frequency:
      m = Matrix::Identity(d, d);
      break;
    case Interaction::mixed:
      m = Matrix::Ones(d, d) - 0.6 * Matrix::Identity(d, d);
      break;
  }
  s.w = kind == Interaction::none ? m : Matrix(0.01 * m / m.norm());
  s.r0 = Vector::Constant(d, 20.0);
  return s;
}

constexpr double kFiveTypeHorizon = 15.0;

/// Two interacting types used for finite-N studies.
inline ModelSpec two_type_capacity() {
  ModelSpec s;
  s.d = 2;
  s.lambda = Vector{{1.5, 1.2}};
  s.mu = Vector{{0.5, 0.5}};
  s.gamma = Matrix{{-0.1, 0.1}, {0.2, -0.2}};
  s.w = Matrix::Constant(2, 2, 0.05);
  s.r0 = Vector{{2.0, 2.0}};
  return s;
}

}  // namespace fixtures
