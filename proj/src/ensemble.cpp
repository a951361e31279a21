#include "mfbd/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "mfbd/scf.hpp"

namespace mfbd {

namespace {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1p-53; }

  double exponential(double rate) { return -std::log1p(-uniform()) / rate; }

  // Uniform on {0, ..., n-1} by rejection, free of modulo bias.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::mt19937_64 engine_;
};

// Fenwick tree over nonnegative integer weights.
class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {
    top_ = 1;
    while (top_ * 2 <= n) top_ *= 2;
  }

  void add(std::size_t i, std::int64_t delta) {
    for (std::size_t k = i + 1; k < tree_.size(); k += k & (~k + 1)) tree_[k] += delta;
  }

  // Smallest index i with weight(0..i) > target, for 0 <= target < total.
  std::size_t find(std::int64_t target) const {
    std::size_t pos = 0;
    for (std::size_t step = top_; step > 0; step /= 2) {
      if (pos + step < tree_.size() && tree_[pos + step] <= target) {
        pos += step;
        target -= tree_[pos];
      }
    }
    return pos;
  }

 private:
  std::vector<std::int64_t> tree_;
  std::size_t top_;
};

void check_common(int d, int n_replicas, double tau, const InitialState& init, const std::vector<double>& checkpoints) {
  if (n_replicas < 1) throw std::invalid_argument("simulate: need at least one replica");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("simulate: tau must be positive and finite");
  if (init.replicas.size() != 1 && init.replicas.size() != static_cast<std::size_t>(n_replicas)) {
    throw std::invalid_argument("simulate: initial state must be shared or given for every replica");
  }
  for (const auto& y : init.replicas) {
    if (static_cast<int>(y.size()) != d) throw std::invalid_argument("simulate: initial state has the wrong dimension");
    for (auto v : y) {
      if (v < 0) throw std::invalid_argument("simulate: initial counts must be nonnegative");
    }
  }
  for (std::size_t k = 0; k < checkpoints.size(); ++k) {
    if (!(checkpoints[k] >= 0.0 && checkpoints[k] <= tau)) {
      throw std::invalid_argument("simulate: checkpoints must lie in [0, tau]");
    }
    if (k > 0 && !(checkpoints[k] > checkpoints[k - 1])) {
      throw std::invalid_argument("simulate: checkpoints must be strictly increasing");
    }
  }
}

const State& initial_of(const InitialState& init, int j) {
  return init.replicas.size() == 1 ? init.replicas[0] : init.replicas[static_cast<std::size_t>(j)];
}

std::string describe(std::span<const std::int64_t> y) {
  std::ostringstream out;
  out << "(";
  for (std::size_t i = 0; i < y.size(); ++i) out << (i ? "," : "") << y[i];
  out << ")";
  return out.str();
}

}  // namespace

EnsembleTrace simulate(const ModelSpec& spec, int n_replicas, double tau, const InitialState& init,
                       std::uint64_t seed, const std::vector<double>& checkpoints, const SimulationOptions& options) {
  require_valid(spec);
  const int d = spec.d;
  check_common(d, n_replicas, tau, init, checkpoints);
  const auto n = static_cast<std::size_t>(n_replicas);

  std::vector<std::int64_t> counts(n * d);
  std::vector<std::int64_t> totals(d, 0);
  std::vector<Fenwick> index(d, Fenwick(n));
  for (std::size_t j = 0; j < n; ++j) {
    const State& y = initial_of(init, static_cast<int>(j));
    for (int i = 0; i < d; ++i) {
      counts[j * d + i] = y[i];
      totals[i] += y[i];
      if (y[i] != 0) index[i].add(j, y[i]);
    }
  }

  Vector outflow(d);
  for (int i = 0; i < d; ++i) outflow[i] = spec.transition_outflow(i);
  const double inv_n = 1.0 / static_cast<double>(n_replicas);
  Vector mean(d), rate_death(d);

  const auto refresh = [&](const std::vector<std::int64_t>& s) {
    for (int i = 0; i < d; ++i) mean[i] = static_cast<double>(s[i]) * inv_n;
    rate_death = mu_tilde(spec, mean);
    double lambda_total = 0.0;
    for (int i = 0; i < d; ++i) {
      lambda_total += static_cast<double>(s[i]) * (spec.lambda[i] + rate_death[i] + outflow[i]);
    }
    return lambda_total;
  };

  EnsembleTrace trace;
  std::size_t next_cp = 0;
  const auto record_until = [&](double limit, bool inclusive) {
    while (next_cp < checkpoints.size() && (checkpoints[next_cp] < limit || (inclusive && checkpoints[next_cp] <= limit))) {
      Checkpoint cp;
      cp.t = checkpoints[next_cp];
      cp.mean.resize(d);
      for (int i = 0; i < d; ++i) cp.mean[i] = static_cast<double>(totals[i]) * inv_n;
      cp.events = trace.events;
      if (options.record_histogram) {
        Histogram h;
        for (std::size_t j = 0; j < n; ++j) ++h[State(counts.begin() + j * d, counts.begin() + (j + 1) * d)];
        cp.histogram = std::move(h);
      }
      trace.checkpoints.push_back(std::move(cp));
      ++next_cp;
    }
  };

  const auto all_empty = [&] { return std::all_of(totals.begin(), totals.end(), [](auto v) { return v == 0; }); };
  if (all_empty()) trace.extinction_time = 0.0;

  Rng rng(seed);
  double t = 0.0;
  while (true) {
    const double lambda_total = refresh(totals);
    if (!std::isfinite(lambda_total)) throw SimulationError("simulate: total event rate is not finite");
    if (lambda_total <= 0.0) break;
    const double t_next = t + rng.exponential(lambda_total);
    if (t_next > tau) break;
    record_until(t_next, false);

    // Event kind: per type, birth then death then type change.
    double u = rng.uniform() * lambda_total;
    int type = -1, kind = 0;
    for (int i = 0; i < d && type < 0; ++i) {
      const double s = static_cast<double>(totals[i]);
      const double parts[3] = {s * spec.lambda[i], s * rate_death[i], s * outflow[i]};
      for (int k = 0; k < 3; ++k) {
        if (parts[k] > 0.0) {
          type = i;
          kind = k;
          if (u < parts[k]) break;
          u -= parts[k];
          type = -1;
        }
      }
    }
    if (type < 0) {
      // Rounding pushed u past the last category; take the last positive one.
      for (int i = d - 1; i >= 0 && type < 0; --i) {
        const double s = static_cast<double>(totals[i]);
        const double parts[3] = {s * spec.lambda[i], s * rate_death[i], s * outflow[i]};
        for (int k = 2; k >= 0; --k) {
          if (parts[k] > 0.0) {
            type = i;
            kind = k;
            break;
          }
        }
      }
    }

    const std::size_t j = index[type].find(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(totals[type]))));
    std::int64_t* z = counts.data() + j * d;
    if (kind == 0) {
      ++z[type];
      ++totals[type];
      index[type].add(j, 1);
      ++trace.events.birth;
    } else if (kind == 1) {
      --z[type];
      --totals[type];
      index[type].add(j, -1);
      ++trace.events.death;
    } else {
      double v = rng.uniform() * outflow[type];
      int target = -1;
      for (int k = 0; k < d; ++k) {
        if (k == type || spec.gamma(type, k) <= 0.0) continue;
        target = k;
        if (v < spec.gamma(type, k)) break;
        v -= spec.gamma(type, k);
      }
      --z[type];
      --totals[type];
      index[type].add(j, -1);
      ++z[target];
      ++totals[target];
      index[target].add(j, 1);
      ++trace.events.mutation;
    }
    t = t_next;
    if (kind == 1 && all_empty()) trace.extinction_time = t;

    const std::uint64_t fired = trace.events.total();
    if (fired > options.max_events) {
      throw SimulationError("simulate: event budget of " + std::to_string(options.max_events) + " exceeded at t=" +
                            std::to_string(t));
    }
    if (options.audit_every != 0 && fired % options.audit_every == 0) {
      std::vector<std::int64_t> recount(d, 0);
      for (std::size_t r = 0; r < n; ++r) {
        for (int i = 0; i < d; ++i) recount[i] += counts[r * d + i];
      }
      const double maintained = refresh(totals);
      const double scratch = refresh(recount);
      if (recount != totals || std::abs(maintained - scratch) > 1e-9 * std::max(1.0, std::abs(scratch))) {
        throw SimulationError("simulate: total-rate bookkeeping drifted at t=" + std::to_string(t));
      }
    }
  }
  record_until(tau, true);
  return trace;
}

EnsembleTrace simulate_general(const RateCallback& rates, int d, int n_replicas, double tau, const InitialState& init,
                               std::uint64_t seed, const std::vector<double>& checkpoints,
                               const SimulationOptions& options) {
  if (d < 1) throw std::invalid_argument("simulate_general: d must be positive");
  check_common(d, n_replicas, tau, init, checkpoints);

  // Replicas are exchangeable, so the histogram carries the whole state and
  // replicas sharing a state share their rates.
  Histogram hist;
  std::vector<std::int64_t> totals(d, 0);
  for (int j = 0; j < n_replicas; ++j) {
    const State& y = initial_of(init, j);
    ++hist[y];
    for (int i = 0; i < d; ++i) totals[i] += y[i];
  }
  const double inv_n = 1.0 / static_cast<double>(n_replicas);

  EnsembleTrace trace;
  std::size_t next_cp = 0;
  const auto record_until = [&](double limit, bool inclusive) {
    while (next_cp < checkpoints.size() && (checkpoints[next_cp] < limit || (inclusive && checkpoints[next_cp] <= limit))) {
      Checkpoint cp;
      cp.t = checkpoints[next_cp];
      cp.mean.resize(d);
      for (int i = 0; i < d; ++i) cp.mean[i] = static_cast<double>(totals[i]) * inv_n;
      cp.events = trace.events;
      if (options.record_histogram) cp.histogram = hist;
      trace.checkpoints.push_back(std::move(cp));
      ++next_cp;
    }
  };
  const auto all_empty = [&] { return std::all_of(totals.begin(), totals.end(), [](auto v) { return v == 0; }); };
  if (all_empty()) trace.extinction_time = 0.0;

  struct Entry {
    const State* y;
    std::int64_t count;
    ReplicaRates r;
    double weight;  // count * total per-replica rate
  };
  std::vector<Entry> entries;

  Rng rng(seed);
  double t = 0.0;
  while (true) {
    EmpiricalSummary nu;
    nu.n_replicas = n_replicas;
    nu.histogram = &hist;
    nu.mean.resize(d);
    for (int i = 0; i < d; ++i) nu.mean[i] = static_cast<double>(totals[i]) * inv_n;

    entries.clear();
    double lambda_total = 0.0;
    for (const auto& [y, count] : hist) {
      ReplicaRates r = rates(y, nu);
      if (r.birth.size() != d || r.death.size() != d || r.mutation.rows() != d || r.mutation.cols() != d) {
        throw SimulationError("simulate_general: rate callback returned wrongly sized rates at state " + describe(y));
      }
      double per = 0.0;
      for (int i = 0; i < d; ++i) {
        double row = r.birth[i] + r.death[i];
        for (int k = 0; k < d; ++k) {
          if (k != i) row += r.mutation(i, k);
        }
        bool bad = !std::isfinite(row) || r.birth[i] < 0.0 || r.death[i] < 0.0;
        for (int k = 0; k < d && !bad; ++k) bad = k != i && r.mutation(i, k) < 0.0;
        if (bad) throw SimulationError("simulate_general: negative or non-finite rate at state " + describe(y));
        if (y[i] == 0 && row != r.birth[i]) {
          throw SimulationError("simulate_general: death or type change from an empty type " + std::to_string(i) +
                                " at state " + describe(y));
        }
        per += row;
      }
      const double weight = static_cast<double>(count) * per;
      lambda_total += weight;
      entries.push_back({&y, count, std::move(r), weight});
    }
    if (!std::isfinite(lambda_total)) throw SimulationError("simulate_general: total event rate is not finite");
    if (lambda_total <= 0.0) break;
    const double t_next = t + rng.exponential(lambda_total);
    if (t_next > tau) break;
    record_until(t_next, false);

    // Pick a state, then an event of one of its replicas.
    double u = rng.uniform() * lambda_total;
    std::size_t pick = entries.size();
    for (std::size_t e = 0; e < entries.size(); ++e) {
      if (entries[e].weight <= 0.0) continue;
      pick = e;
      if (u < entries[e].weight) break;
      u -= entries[e].weight;
    }
    const Entry& chosen = entries[pick];
    u = std::min(u / static_cast<double>(chosen.count), chosen.weight / static_cast<double>(chosen.count));
    int kind = -1, from = -1, to = -1;
    for (int i = 0; i < d && kind < 0; ++i) {
      const auto consider = [&](double rate, int k, int target) {
        if (kind >= 0 || rate <= 0.0) return;
        kind = k;
        from = i;
        to = target;
        if (u < rate) return;
        u -= rate;
        kind = -1;
      };
      consider(chosen.r.birth[i], 0, i);
      consider(chosen.r.death[i], 1, i);
      for (int k = 0; k < d; ++k) {
        if (k != i) consider(chosen.r.mutation(i, k), 2, k);
      }
    }
    if (kind < 0) {
      // Rounding fell past the end; use the last positive event.
      for (int i = 0; i < d; ++i) {
        if (chosen.r.birth[i] > 0.0) kind = 0, from = to = i;
        if (chosen.r.death[i] > 0.0) kind = 1, from = to = i;
        for (int k = 0; k < d; ++k) {
          if (k != i && chosen.r.mutation(i, k) > 0.0) kind = 2, from = i, to = k;
        }
      }
    }

    State next = *chosen.y;
    if (kind == 0) {
      ++next[from];
      ++totals[from];
      ++trace.events.birth;
    } else if (kind == 1) {
      --next[from];
      --totals[from];
      ++trace.events.death;
    } else {
      --next[from];
      ++next[to];
      --totals[from];
      ++totals[to];
      ++trace.events.mutation;
    }
    const auto old = hist.find(*chosen.y);
    if (--old->second == 0) hist.erase(old);
    ++hist[next];
    t = t_next;
    if (kind == 1 && all_empty()) trace.extinction_time = t;
    if (trace.events.total() > options.max_events) {
      throw SimulationError("simulate_general: event budget of " + std::to_string(options.max_events) +
                            " exceeded at t=" + std::to_string(t));
    }
  }
  record_until(tau, true);
  return trace;
}

std::uint64_t batch_seed(std::uint64_t base, std::uint64_t k) {
  // splitmix64 finalizer over a golden-ratio stride.
  std::uint64_t z = base + (k + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<EnsembleTrace> simulate_batch_serial(const ModelSpec& spec, int n_replicas, double tau,
                                                 const InitialState& init, std::uint64_t seed, int runs,
                                                 const std::vector<double>& checkpoints,
                                                 const SimulationOptions& options) {
  std::vector<EnsembleTrace> out;
  out.reserve(static_cast<std::size_t>(std::max(runs, 0)));
  for (int k = 0; k < runs; ++k) {
    out.push_back(simulate(spec, n_replicas, tau, init, batch_seed(seed, static_cast<std::uint64_t>(k)), checkpoints,
                           options));
  }
  return out;
}

std::vector<EnsembleTrace> simulate_batch(const ModelSpec& spec, int n_replicas, double tau, const InitialState& init,
                                          std::uint64_t seed, int runs, const std::vector<double>& checkpoints,
                                          const SimulationOptions& options) {
  require_valid(spec);
  check_common(spec.d, n_replicas, tau, init, checkpoints);
  std::vector<EnsembleTrace> out(static_cast<std::size_t>(std::max(runs, 0)));
  // Exceptions cannot cross the parallel region; keep the first by run index.
  std::vector<std::exception_ptr> errors(out.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (int k = 0; k < runs; ++k) {
    try {
      out[static_cast<std::size_t>(k)] = simulate(spec, n_replicas, tau, init,
                                                  batch_seed(seed, static_cast<std::uint64_t>(k)), checkpoints, options);
    } catch (...) {
      errors[static_cast<std::size_t>(k)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

ConvergenceStudy convergence_study(const ModelSpec& spec, const std::vector<int>& ns, double tau, int runs_per_n,
                                   const std::vector<double>& checkpoints, std::uint64_t seed) {
  require_valid(spec);
  if (runs_per_n < 2) throw std::invalid_argument("convergence_study: need at least two runs per N");
  for (std::size_t k = 1; k < ns.size(); ++k) {
    if (!(ns[k] > ns[k - 1])) throw std::invalid_argument("convergence_study: Ns must be increasing");
  }
  State start(spec.d);
  for (int i = 0; i < spec.d; ++i) {
    if (spec.r0[i] != std::round(spec.r0[i])) {
      throw std::invalid_argument("convergence_study: r0 must be integer-valued to serve as the initial state");
    }
    start[i] = static_cast<std::int64_t>(spec.r0[i]);
  }

  ConvergenceStudy study;
  study.checkpoints = checkpoints;
  const FieldTrajectory reference = solve_moment_direct(spec, tau, {1e-10, 1e-12, 200000});
  for (double t : checkpoints) study.reference.push_back(reference(t));

  for (int n : ns) {
    const auto traces = simulate_batch(spec, n, tau, InitialState::shared(start), batch_seed(seed, n), runs_per_n,
                                       checkpoints);
    ConvergenceRow row;
    row.n_replicas = n;
    std::vector<double> sup(traces.size(), 0.0);
    for (std::size_t c = 0; c < checkpoints.size(); ++c) {
      Vector sum = Vector::Zero(spec.d), sq = Vector::Zero(spec.d);
      for (std::size_t k = 0; k < traces.size(); ++k) {
        const Vector& m = traces[k].checkpoints[c].mean;
        sum += m;
        sq += m.cwiseAbs2();
        sup[k] = std::max(sup[k], (m - study.reference[c]).cwiseAbs().maxCoeff());
      }
      const double runs = static_cast<double>(traces.size());
      const Vector mean = sum / runs;
      const Vector var = ((sq - runs * mean.cwiseAbs2()) / (runs - 1.0)).cwiseMax(0.0);
      row.pooled_mean.push_back(mean);
      row.pooled_se.push_back((var / runs).cwiseSqrt());
    }
    double s = 0.0, s2 = 0.0;
    for (double e : sup) {
      s += e;
      s2 += e * e;
    }
    const double runs = static_cast<double>(sup.size());
    row.sup_error = s / runs;
    row.sup_error_se = std::sqrt(std::max(0.0, (s2 - runs * row.sup_error * row.sup_error) / (runs - 1.0)) / runs);
    study.rows.push_back(std::move(row));
  }
  return study;
}

}  // namespace mfbd
