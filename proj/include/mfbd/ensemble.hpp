#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mfbd/model.hpp"

namespace mfbd {

using State = std::vector<std::int64_t>;
using Histogram = std::map<State, std::int64_t>;

struct EventCounts {
  std::uint64_t birth = 0;
  std::uint64_t death = 0;
  std::uint64_t mutation = 0;

  std::uint64_t total() const { return birth + death + mutation; }
  bool operator==(const EventCounts&) const = default;
};

struct Checkpoint {
  double t = 0.0;
  /// Empirical mean S / N.
  Vector mean;
  EventCounts events;
  /// Replica-state histogram, present when requested.
  std::optional<Histogram> histogram;

  bool operator==(const Checkpoint& other) const {
    return t == other.t && mean.size() == other.mean.size() && mean == other.mean && events == other.events &&
           histogram == other.histogram;
  }
};

struct EnsembleTrace {
  std::vector<Checkpoint> checkpoints;
  EventCounts events;
  /// Time at which every replica became empty, if that happened before tau.
  std::optional<double> extinction_time;

  bool operator==(const EnsembleTrace&) const = default;
};

/// Initial replica states: either one state shared by all N replicas, or one
/// state per replica.
struct InitialState {
  std::vector<State> replicas;

  static InitialState shared(State y) { return {{std::move(y)}}; }
  static InitialState per_replica(std::vector<State> ys) { return {std::move(ys)}; }
};

struct SimulationOptions {
  std::uint64_t max_events = 1'000'000'000;
  bool record_histogram = false;
  /// Recompute the total rate from the full count matrix every this many
  /// events and compare it with the maintained value. Zero disables the check.
  std::uint64_t audit_every = 0;
};

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exact Gillespie simulation of N replicas coupled through the empirical mean.
EnsembleTrace simulate(const ModelSpec& spec, int n_replicas, double tau, const InitialState& init,
                       std::uint64_t seed, const std::vector<double>& checkpoints,
                       const SimulationOptions& options = {});

struct EmpiricalSummary {
  int n_replicas = 0;
  const Histogram* histogram = nullptr;
  Vector mean;
};

struct ReplicaRates {
  Vector birth;     // d
  Vector death;     // d
  Matrix mutation;  // d x d, diagonal ignored
};

using RateCallback = std::function<ReplicaRates(std::span<const std::int64_t> y, const EmpiricalSummary& nu)>;

/// Exact simulation under arbitrary per-replica rates depending on the replica
/// state and the empirical distribution. All rates are recomputed after every
/// event, O(N d^2) per event.
EnsembleTrace simulate_general(const RateCallback& rates, int d, int n_replicas, double tau,
                               const InitialState& init, std::uint64_t seed,
                               const std::vector<double>& checkpoints, const SimulationOptions& options = {});

/// Seed of replicate run k in a batch started from `base`.
std::uint64_t batch_seed(std::uint64_t base, std::uint64_t k);

/// Runs `runs` independent simulations with seeds batch_seed(seed, k).
std::vector<EnsembleTrace> simulate_batch_serial(const ModelSpec& spec, int n_replicas, double tau,
                                                 const InitialState& init, std::uint64_t seed, int runs,
                                                 const std::vector<double>& checkpoints,
                                                 const SimulationOptions& options = {});
/// Same output as simulate_batch_serial, with runs distributed over OpenMP threads.
std::vector<EnsembleTrace> simulate_batch(const ModelSpec& spec, int n_replicas, double tau,
                                          const InitialState& init, std::uint64_t seed, int runs,
                                          const std::vector<double>& checkpoints,
                                          const SimulationOptions& options = {});

struct ConvergenceRow {
  int n_replicas = 0;
  /// Mean over runs of the largest checkpoint error max_i |mean_i - r_i(t)|.
  double sup_error = 0.0;
  double sup_error_se = 0.0;
  /// Per checkpoint: mean over runs of the empirical mean, and its standard error.
  std::vector<Vector> pooled_mean;
  std::vector<Vector> pooled_se;
};

struct ConvergenceStudy {
  std::vector<double> checkpoints;
  /// solve_moment_direct at the checkpoints.
  std::vector<Vector> reference;
  std::vector<ConvergenceRow> rows;
};

/// Monte-Carlo comparison of the empirical mean with the limiting moment
/// trajectory. Requires an integer-valued r0, used as the shared initial state.
ConvergenceStudy convergence_study(const ModelSpec& spec, const std::vector<int>& ns, double tau, int runs_per_n,
                                   const std::vector<double>& checkpoints, std::uint64_t seed);

}  // namespace mfbd
