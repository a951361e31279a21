#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mfbd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Simple multi-type birth-death process whose death rates depend on the
/// expected state vector through a linear interaction term.
///
/// Rates per particle of type i: birth lambda_i, death mu_i + (W r)_i, and
/// transition to type k at gamma(i, k). The interaction term is frozen once the
/// expected total size exceeds `interaction_cap`, which keeps all rates bounded.
struct ModelSpec {
  int d = 0;
  Vector lambda;
  Vector mu;
  Matrix gamma;
  Matrix w;
  Vector r0;
  double interaction_cap = 1e9;

  /// Off-diagonal outflow rate of type i, sum_{k != i} gamma(i, k).
  double transition_outflow(int i) const;
};

struct SamplingSpec {
  double rho = 1.0;
  double sigma = 0.0;
};

struct Violation {
  std::string field;
  std::string reason;
};

std::vector<Violation> validate(const ModelSpec& spec);
std::vector<Violation> validate(const SamplingSpec& sampling);

/// Fills the diagonal of gamma so that rows sum to zero when every diagonal
/// entry is exactly zero (the off-diagonal-only input form). Any other gamma is
/// returned unchanged.
ModelSpec normalized(ModelSpec spec);

/// Effective death rates mu + W r', where r' = r rescaled so that its total does
/// not exceed the interaction cap. Throws std::invalid_argument on a dimension
/// mismatch.
Vector mu_tilde(const ModelSpec& spec, const Vector& r);

/// Throws std::invalid_argument listing every violation, if any.
void require_valid(const ModelSpec& spec);

}  // namespace mfbd
