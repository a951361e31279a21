#pragma once

#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mfbd/model.hpp"
#include "mfbd/ode.hpp"
#include "mfbd/scf.hpp"

namespace mfbd {

enum class BranchEnd { sample, fossil, split, type_change };

/// One branch, covering backward times (t1, t2]; `end` is what happens at t1.
struct Branch {
  int type = 0;  // 0-based
  double t1 = 0.0;
  double t2 = 0.0;
  /// Length as written in the input; times are derived from it.
  double length = 0.0;
  BranchEnd end = BranchEnd::sample;
  std::string label;
  int parent = -1;
  /// Child branches: two for a split, one for a type change.
  int left = -1;
  int right = -1;

  bool operator==(const Branch&) const = default;
};

struct PhyloTree {
  /// Age of the origin before the present.
  double tau = 0.0;
  std::vector<Branch> branches;
  int root = 0;
  /// Type written on the origin node, when the stem is given that way.
  bool explicit_origin = false;

  bool operator==(const PhyloTree&) const = default;
};

class TreeParseError : public std::runtime_error {
 public:
  TreeParseError(std::size_t position, const std::string& message);
  /// Byte offset into the input.
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

/// Annotated Newick: every node carries [&type=<1-based int>]; leaves carry
/// event=sample or event=fossil; single-child nodes carry event=typechange,to=<int>.
/// The stem is either the branch length on the outermost node or the branch of
/// the only child of an unannotated single-child outermost node.
PhyloTree parse_tree(std::string_view text);
std::string serialize_tree(const PhyloTree& tree);

/// Probability that a lineage at backward time s leaves no sampled descendant,
/// computed against a field given in forward time from the origin.
class NonObservation {
 public:
  NonObservation(std::shared_ptr<const ode::DenseSolution> solution, FieldTrajectory field, double tau);

  double tau() const { return tau_; }
  /// Clamped to [0, 1].
  Vector operator()(double s) const;
  Vector raw(double s) const;
  /// r at backward time s.
  Vector field_at(double s) const;
  const ode::DenseSolution& solution() const { return *solution_; }

 private:
  std::shared_ptr<const ode::DenseSolution> solution_;
  FieldTrajectory field_;
  double tau_;
};

NonObservation solve_nonobs(const ModelSpec& spec, const SamplingSpec& sampling, const FieldTrajectory& field,
                            double tau, const ode::Tolerances& tol = {1e-11, 1e-13, 200000});

struct LikelihoodOptions {
  bool condition_on_observation = true;
  /// Fossil boundary sigma * (mu + W r) instead of sigma * mu.
  bool fossil_uses_meanfield_rate = false;
  ScfConfig scf;
};

struct LikelihoodResult {
  double loglik = 0.0;
  bool conditioned = false;
  double tau = 0.0;
  int scf_iterations = 0;
  double scf_residual = 0.0;
  std::vector<std::string> diagnostics;
};

/// Tree log-likelihood with the field from solve_scf on [0, tree.tau].
LikelihoodResult evaluate_likelihood(const PhyloTree& tree, const ModelSpec& spec, const SamplingSpec& sampling,
                                     const LikelihoodOptions& options = {});

/// Same, against a supplied field (forward time from the origin, horizon >= tau).
LikelihoodResult evaluate_likelihood(const PhyloTree& tree, const ModelSpec& spec, const SamplingSpec& sampling,
                                     const FieldTrajectory& field, const LikelihoodOptions& options = {});

double log_likelihood(const PhyloTree& tree, const ModelSpec& spec, const SamplingSpec& sampling,
                      bool condition_on_observation = true);

/// Integral over (a, b] of 2 lambda_i p_i + gamma_ii - lambda_i - mu_i - (W r)_i.
double log_propagator_integral(const ModelSpec& spec, const NonObservation& p, int type, double a, double b);

}  // namespace mfbd
