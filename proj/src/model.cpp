#include "mfbd/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mfbd {

namespace {

bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

void check_vector(std::vector<Violation>& out, const std::string& name, const Vector& v, int d) {
  if (v.size() != d) {
    out.push_back({name, "expected length " + std::to_string(d) + ", got " + std::to_string(v.size())});
    return;
  }
  if (!all_finite(v)) {
    out.push_back({name, "entries must be finite"});
    return;
  }
  for (int i = 0; i < d; ++i) {
    if (v[i] < 0.0) {
      out.push_back({name, "entry " + std::to_string(i) + " is negative"});
    }
  }
}

bool square(const Matrix& m, int d) { return m.rows() == d && m.cols() == d; }

}  // namespace

double ModelSpec::transition_outflow(int i) const {
  double total = 0.0;
  for (int k = 0; k < d; ++k) {
    if (k != i) total += gamma(i, k);
  }
  return total;
}

std::vector<Violation> validate(const ModelSpec& spec) {
  std::vector<Violation> out;
  if (spec.d < 1) {
    out.push_back({"d", "must be a positive integer"});
    return out;
  }
  const int d = spec.d;
  check_vector(out, "lambda", spec.lambda, d);
  check_vector(out, "mu", spec.mu, d);
  check_vector(out, "r0", spec.r0, d);
  if (spec.r0.size() == d && spec.r0.allFinite() && spec.r0.sum() <= 0.0) {
    out.push_back({"r0", "must not be all zero"});
  }

  if (!square(spec.gamma, d)) {
    out.push_back({"gamma", "expected a " + std::to_string(d) + "x" + std::to_string(d) + " matrix"});
  } else if (!all_finite(spec.gamma)) {
    out.push_back({"gamma", "entries must be finite"});
  } else {
    for (int i = 0; i < d; ++i) {
      const double row_sum = spec.gamma.row(i).sum();
      // Tolerate rounding from the caller's diagonal fill.
      const double scale = spec.gamma.row(i).cwiseAbs().sum();
      if (std::abs(row_sum) > 1e-12 * std::max(1.0, scale)) {
        std::ostringstream msg;
        msg << "row " << i << " sums to " << row_sum << ", expected 0";
        out.push_back({"gamma", msg.str()});
      }
      for (int k = 0; k < d; ++k) {
        if (k != i && spec.gamma(i, k) < 0.0) {
          out.push_back({"gamma", "off-diagonal entry (" + std::to_string(i) + "," + std::to_string(k) +
                                      ") is negative"});
        }
      }
      if (spec.gamma(i, i) > 0.0) {
        out.push_back({"gamma", "diagonal entry " + std::to_string(i) + " is positive"});
      }
    }
  }

  if (!square(spec.w, d)) {
    out.push_back({"w", "expected a " + std::to_string(d) + "x" + std::to_string(d) + " matrix"});
  } else if (!all_finite(spec.w)) {
    out.push_back({"w", "entries must be finite"});
  } else if ((spec.w.array() < 0.0).any()) {
    out.push_back({"w", "entries must be nonnegative"});
  }

  if (!std::isfinite(spec.interaction_cap) || spec.interaction_cap <= 0.0) {
    out.push_back({"interaction_cap", "must be a positive finite number"});
  } else if (spec.r0.size() == d && spec.r0.allFinite() && !(spec.interaction_cap > spec.r0.sum())) {
    out.push_back({"interaction_cap", "must exceed the total of r0"});
  }
  return out;
}

std::vector<Violation> validate(const SamplingSpec& sampling) {
  std::vector<Violation> out;
  if (!(sampling.rho >= 0.0 && sampling.rho <= 1.0)) out.push_back({"rho", "must lie in [0, 1]"});
  if (!(sampling.sigma >= 0.0 && sampling.sigma <= 1.0)) out.push_back({"sigma", "must lie in [0, 1]"});
  return out;
}

ModelSpec normalized(ModelSpec spec) {
  if (!square(spec.gamma, spec.d)) return spec;
  if ((spec.gamma.diagonal().array() != 0.0).any()) return spec;
  for (int i = 0; i < spec.d; ++i) {
    spec.gamma(i, i) = -spec.transition_outflow(i);
  }
  return spec;
}

Vector mu_tilde(const ModelSpec& spec, const Vector& r) {
  if (r.size() != spec.d) {
    throw std::invalid_argument("mu_tilde: field has dimension " + std::to_string(r.size()) + ", model has " +
                                std::to_string(spec.d));
  }
  const double total = r.sum();
  if (total > spec.interaction_cap) {
    return spec.mu + spec.w * (r * (spec.interaction_cap / total));
  }
  return spec.mu + spec.w * r;
}

void require_valid(const ModelSpec& spec) {
  const auto violations = validate(spec);
  if (violations.empty()) return;
  std::ostringstream msg;
  msg << "invalid model:";
  for (const auto& v : violations) msg << "\n  " << v.field << ": " << v.reason;
  throw std::invalid_argument(msg.str());
}

}  // namespace mfbd
