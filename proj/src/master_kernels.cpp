#include <cstdint>

#include "mfbd/master.hpp"

namespace mfbd {

GeneratorPattern build_generator(const ModelSpec& spec, const TruncatedLattice& lattice) {
  const int d = spec.d;
  if (lattice.dim() != d) throw std::invalid_argument("build_generator: lattice dimension does not match the model");
  if (lattice.size() > static_cast<std::size_t>(INT32_MAX)) {
    throw std::invalid_argument("build_generator: lattice too large for 32-bit state indices");
  }
  const int kappa = lattice.kappa();
  const int mu_slot = d;
  const int gamma_slot = 2 * d;

  // Death rates can only vanish identically if mu_i = 0 and W has a zero row.
  std::vector<char> has_death(d), has_birth(d);
  for (int i = 0; i < d; ++i) {
    has_birth[i] = spec.lambda[i] != 0.0;
    has_death[i] = spec.mu[i] != 0.0 || (spec.w.row(i).array() != 0.0).any();
  }

  GeneratorPattern g;
  g.d = d;
  const std::size_t n = lattice.size();
  g.row_start.reserve(n + 1);
  g.counts.resize(n * d);
  g.absorbing.resize(n);
  g.row_start.push_back(0);

  std::vector<int> src(d);
  const auto push = [&](std::span<const int> y, int slot, double mult) {
    const auto idx = lattice.index(y);
    g.source.push_back(static_cast<std::int32_t>(*idx));
    g.slot.push_back(slot);
    g.mult.push_back(mult);
  };

  for (std::size_t row = 0; row < n; ++row) {
    const auto y = lattice.state(row);
    const int total = lattice.total(row);
    g.absorbing[row] = total == kappa;
    for (int i = 0; i < d; ++i) g.counts[row * d + i] = y[i];
    std::copy(y.begin(), y.end(), src.begin());

    for (int i = 0; i < d; ++i) {
      // Birth into y from y - e_i; the source lies below the boundary.
      if (has_birth[i] && y[i] >= 2) {
        --src[i];
        push(src, i, y[i] - 1);
        ++src[i];
      }
      // Death into y from y + e_i, which must itself be below the boundary.
      if (has_death[i] && total + 1 < kappa) {
        ++src[i];
        push(src, mu_slot + i, y[i] + 1);
        --src[i];
      }
    }
    // Type change i -> k lands on y from y + e_i - e_k.
    if (total < kappa) {
      for (int k = 0; k < d; ++k) {
        if (y[k] == 0) continue;
        for (int i = 0; i < d; ++i) {
          if (i == k || spec.gamma(i, k) == 0.0) continue;
          ++src[i];
          --src[k];
          push(src, gamma_slot + i * d + k, y[i] + 1);
          --src[i];
          ++src[k];
        }
      }
    }
    g.row_start.push_back(static_cast<std::int64_t>(g.source.size()));
  }
  return g;
}

RateTable rate_table(const ModelSpec& spec, const Vector& field) {
  const int d = spec.d;
  const Vector mt = mu_tilde(spec, field.cwiseMax(0.0));
  RateTable rt;
  rt.rates.resize(2 * d + d * d);
  rt.outflow.resize(d);
  for (int i = 0; i < d; ++i) {
    rt.rates[i] = spec.lambda[i];
    rt.rates[d + i] = mt[i];
    for (int k = 0; k < d; ++k) rt.rates[2 * d + i * d + k] = spec.gamma(i, k);
    rt.outflow[i] = spec.lambda[i] + mt[i] + spec.transition_outflow(i);
  }
  return rt;
}

namespace {

// One row of Q v. Shared by both drivers so their arithmetic is identical.
inline double generator_row(const GeneratorPattern& g, const double* rates, const double* outflow, const double* v,
                            std::size_t row) {
  double acc = 0.0;
  if (!g.absorbing[row]) {
    const double* y = g.counts.data() + row * g.d;
    double diag = 0.0;
    for (int i = 0; i < g.d; ++i) diag += y[i] * outflow[i];
    acc = -diag * v[row];
  }
  for (std::int64_t e = g.row_start[row]; e < g.row_start[row + 1]; ++e) {
    acc += g.mult[e] * rates[g.slot[e]] * v[g.source[e]];
  }
  return acc;
}

}  // namespace

void apply_generator_serial(const GeneratorPattern& g, const RateTable& rt, const double* v, double* out) {
  const std::size_t n = g.size();
  for (std::size_t row = 0; row < n; ++row) {
    out[row] = generator_row(g, rt.rates.data(), rt.outflow.data(), v, row);
  }
}

void apply_generator_parallel(const GeneratorPattern& g, const RateTable& rt, const double* v, double* out) {
  const auto n = static_cast<std::int64_t>(g.size());
  const double* rates = rt.rates.data();
  const double* outflow = rt.outflow.data();
#pragma omp parallel for schedule(static) if (n > 4096)
  for (std::int64_t row = 0; row < n; ++row) {
    out[row] = generator_row(g, rates, outflow, v, static_cast<std::size_t>(row));
  }
}

Vector first_moment(const GeneratorPattern& g, const double* v) {
  Vector m = Vector::Zero(g.d);
  const std::size_t n = g.size();
  for (std::size_t row = 0; row < n; ++row) {
    const double* y = g.counts.data() + row * g.d;
    for (int i = 0; i < g.d; ++i) m[i] += y[i] * v[row];
  }
  return m;
}

}  // namespace mfbd
