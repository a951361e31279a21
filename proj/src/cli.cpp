#include "mfbd/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "mfbd/ensemble.hpp"
#include "mfbd/io.hpp"
#include "mfbd/master.hpp"
#include "mfbd/phylo.hpp"
#include "mfbd/scf.hpp"

namespace mfbd::cli {

namespace {

using nlohmann::json;

struct Flags {
  std::string config;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> grid;
  bool to_stdout = false;
  std::string tree;
};

// Where each artifact goes. With --stdout the primary artifact is written to
// the data stream and files are only written when --out is also given.
class Sink {
 public:
  Sink(const Flags& flags, const json& config, std::ostream& out) : out_(out), to_stdout_(flags.to_stdout) {
    if (!flags.out_dir.empty()) {
      dir_ = flags.out_dir;
    } else if (!flags.to_stdout) {
      dir_ = config.contains("output") && config["output"].contains("dir") ? config["output"]["dir"].get<std::string>()
                                                                            : std::string(".");
    }
    if (dir_) std::filesystem::create_directories(*dir_);
  }

  template <class Writer>
  void primary(const std::string& name, Writer&& write) {
    if (to_stdout_) {
      write(out_);
      out_.flush();
    }
    if (dir_) secondary(name, write);
  }

  template <class Writer>
  void secondary(const std::string& name, Writer&& write) {
    if (!dir_) return;
    const auto path = std::filesystem::path(*dir_) / name;
    std::ofstream file(path);
    if (!file) throw std::runtime_error("cannot write " + path.string());
    write(file);
    if (!file) throw std::runtime_error("failed writing " + path.string());
  }

 private:
  std::ostream& out_;
  bool to_stdout_;
  std::optional<std::string> dir_;
};

const json& section(const json& config, const char* name) {
  static const json empty = json::object();
  const auto it = config.find(name);
  if (it == config.end()) return empty;
  if (!it->is_object()) throw io::ConfigError(name, "expected an object");
  return *it;
}

ModelSpec load_model(const json& config) {
  if (!config.contains("model")) throw io::ConfigError("model", "missing");
  ModelSpec spec = io::model_from_json(config["model"]);
  const auto violations = validate(spec);
  if (!violations.empty()) {
    std::ostringstream msg;
    for (std::size_t k = 0; k < violations.size(); ++k) {
      msg << (k ? "; " : "") << violations[k].field << " " << violations[k].reason;
    }
    throw io::ConfigError("model", msg.str());
  }
  return spec;
}

double load_tau(const json& config) {
  if (!config.contains("tau")) throw io::ConfigError("tau", "missing");
  const double tau = io::number_at(config["tau"], "tau");
  if (!(tau > 0.0)) throw io::ConfigError("tau", "must be positive");
  return tau;
}

int positive_int(const json& j, const std::string& path) {
  if (!j.is_number_integer() || j.get<long long>() < 1 || j.get<long long>() > 1'000'000'000) {
    throw io::ConfigError(path, "expected a positive integer");
  }
  return static_cast<int>(j.get<long long>());
}

ScfConfig load_scf(const json& config) {
  const json& s = section(config, "scf");
  ScfConfig c;
  if (s.contains("delta")) c.delta = io::number_at(s["delta"], "scf.delta");
  if (!(c.delta > 0.0)) throw io::ConfigError("scf.delta", "must be positive");
  if (s.contains("max_iters")) c.max_iters = positive_int(s["max_iters"], "scf.max_iters");
  if (s.contains("quadrature_points")) c.quadrature_points = positive_int(s["quadrature_points"], "scf.quadrature_points");
  if (c.quadrature_points < 2) throw io::ConfigError("scf.quadrature_points", "must be at least 2");
  if (s.contains("stall_window")) c.stall_window = positive_int(s["stall_window"], "scf.stall_window");
  if (s.contains("rtol")) c.tol.rtol = io::number_at(s["rtol"], "scf.rtol");
  if (s.contains("atol")) c.tol.atol = io::number_at(s["atol"], "scf.atol");
  if (!(c.tol.rtol > 0.0) || !(c.tol.atol > 0.0)) throw io::ConfigError("scf", "rtol and atol must be positive");
  if (s.contains("window")) c.window = io::number_at(s["window"], "scf.window");
  if (c.window < 0.0) throw io::ConfigError("scf.window", "must be nonnegative");
  return c;
}

int grid_size(const Flags& flags, const json& config) {
  int n = 201;
  const json& o = section(config, "output");
  if (o.contains("grid")) n = positive_int(o["grid"], "output.grid");
  if (flags.grid) n = *flags.grid;
  if (n < 2) throw io::ConfigError("output.grid", "need at least 2 points");
  return n;
}

std::vector<double> times_or_grid(const json& sec, const char* key, const std::string& path, double tau, int n) {
  if (!sec.contains(key)) return io::uniform_grid(tau, n);
  const Vector v = io::vector_at(sec[key], path);
  std::vector<double> times(v.data(), v.data() + v.size());
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (times[k] < 0.0 || times[k] > tau || (k > 0 && !(times[k] > times[k - 1]))) {
      throw io::ConfigError(path, "times must increase within [0, tau]");
    }
  }
  return times;
}

json vectors_to_json(const std::vector<Vector>& vs) {
  json out = json::array();
  for (const Vector& v : vs) out.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  return out;
}

int cmd_scf(const Flags& flags, const json& config, std::ostream& out, std::ostream& err) {
  const ModelSpec spec = load_model(config);
  const double tau = load_tau(config);
  const ScfConfig scf_config = load_scf(config);
  const auto grid = io::uniform_grid(tau, grid_size(flags, config));
  Sink sink(flags, config, out);

  std::optional<ScfResult> result;
  bool converged = true;
  std::string failure;
  try {
    result = solve_scf(spec, tau, scf_config);
  } catch (const NonConvergence& e) {
    result = e.last_iterate();
    converged = false;
    failure = e.what();
  }
  sink.primary("field.csv", [&](std::ostream& s) { io::write_trajectory_csv(s, result->field, grid); });

  json sidecar = {{"iterations", result->iterations},
                  {"final_residual", result->residual},
                  {"converged", converged},
                  {"damped", result->damped},
                  {"windows", result->windows},
                  {"residual_history", result->residual_history}};
  if (converged) {
    const SteadyStates steady = steady_states(spec, {spec.r0, result->field(tau).cwiseMax(0.0), Vector::Zero(spec.d)});
    sidecar["steady_states"] = vectors_to_json(steady.roots);
  }
  sink.secondary("scf.json", [&](std::ostream& s) { s << sidecar.dump(2) << "\n"; });
  if (!converged) {
    err << "mfbd scf: " << failure << "\n";
    return not_converged;
  }
  err << "mfbd scf: converged in " << result->iterations << " iterations, residual " << result->residual << "\n";
  return ok;
}

int cmd_steady(const Flags& flags, const json& config, std::ostream& out, std::ostream& err) {
  const ModelSpec spec = load_model(config);
  const json& s = section(config, "steady");
  std::vector<Vector> guesses;
  if (s.contains("guesses")) {
    if (!s["guesses"].is_array()) throw io::ConfigError("steady.guesses", "expected a list of vectors");
    for (std::size_t k = 0; k < s["guesses"].size(); ++k) {
      guesses.push_back(io::vector_at(s["guesses"][k], "steady.guesses[" + std::to_string(k) + "]"));
    }
  } else {
    guesses = default_steady_guesses(spec, load_tau(config), load_scf(config));
  }
  const SteadyStates steady = steady_states(spec, guesses);
  const json doc = {{"roots", vectors_to_json(steady.roots)},
                    {"nontrivial_found", steady.roots.size() > 1},
                    {"diagnostics", steady.diagnostics}};
  Sink sink(flags, config, out);
  sink.primary("steady.json", [&](std::ostream& o) { o << doc.dump(2) << "\n"; });
  if (steady.roots.size() == 1) err << "mfbd steady: only the trivial root was found\n";
  return ok;
}

std::size_t max_states_from_env() {
  const char* raw = std::getenv("MFBD_MAX_STATES");
  MasterOptions defaults;
  if (raw == nullptr || *raw == '\0') return defaults.max_states;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(raw, &end, 10);
  if (*end != '\0' || v == 0 || raw[0] == '-') {
    throw io::ConfigError("MFBD_MAX_STATES", "expected a positive integer, got '" + std::string(raw) + "'");
  }
  return static_cast<std::size_t>(v);
}

std::vector<int> int_state(const json& j, const std::string& path, int d) {
  const Vector v = io::vector_at(j, path);
  if (v.size() != d) throw io::ConfigError(path, "expected " + std::to_string(d) + " entries");
  std::vector<int> y(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    if (v[i] < 0.0 || v[i] != std::round(v[i]) || v[i] > 1e9) throw io::ConfigError(path, "expected nonnegative integers");
    y[static_cast<std::size_t>(i)] = static_cast<int>(v[i]);
  }
  return y;
}

int cmd_master(const Flags& flags, const json& config, std::ostream& out, std::ostream&) {
  const ModelSpec spec = load_model(config);
  const double tau = load_tau(config);
  const json& m = section(config, "master");
  if (!m.contains("kappa")) throw io::ConfigError("master.kappa", "missing");
  const int kappa = positive_int(m["kappa"], "master.kappa");
  MasterOptions options;
  options.max_states = max_states_from_env();
  if (m.contains("rtol")) options.tol.rtol = io::number_at(m["rtol"], "master.rtol");
  if (m.contains("atol")) options.tol.atol = io::number_at(m["atol"], "master.atol");

  const std::size_t states = TruncatedLattice::count(spec.d, kappa);
  if (states > options.max_states) {
    int largest = kappa;
    while (largest > 0 && TruncatedLattice::count(spec.d, largest) > options.max_states) --largest;
    throw LatticeTooLarge(states, options.max_states, largest);
  }
  const TruncatedLattice lattice(spec.d, kappa);
  Vector v0;
  if (!m.contains("v0")) throw io::ConfigError("master.v0", "missing");
  const json& v0j = m["v0"];
  if (v0j.is_object() && v0j.contains("point_mass")) {
    const auto y = int_state(v0j["point_mass"], "master.v0.point_mass", spec.d);
    if (!lattice.index(y)) throw io::ConfigError("master.v0.point_mass", "state lies outside the lattice");
    v0 = point_mass(lattice, y);
  } else if (v0j.is_object() && v0j.contains("probabilities")) {
    v0 = io::vector_at(v0j["probabilities"], "master.v0.probabilities");
  } else {
    throw io::ConfigError("master.v0", "expected {\"point_mass\": [...]} or {\"probabilities\": [...]}");
  }

  const auto grid = io::uniform_grid(tau, grid_size(flags, config));
  const auto snapshots = times_or_grid(m, "snapshots", "master.snapshots", tau, 11);
  const DistributionTrajectory traj = solve_master(spec, v0, kappa, tau, options);
  Sink sink(flags, config, out);
  sink.primary("moments.csv", [&](std::ostream& s) { io::write_moments_csv(s, traj, grid); });
  sink.secondary("distribution.csv", [&](std::ostream& s) { io::write_distribution_csv(s, traj, snapshots); });
  return ok;
}

int cmd_simulate(const Flags& flags, const json& config, std::ostream& out, std::ostream& err) {
  const ModelSpec spec = load_model(config);
  const double tau = load_tau(config);
  const json& e = section(config, "ensemble");
  if (!e.contains("N")) throw io::ConfigError("ensemble.N", "missing");
  const int n = positive_int(e["N"], "ensemble.N");
  std::uint64_t seed = 1;
  if (e.contains("seed")) {
    if (!e["seed"].is_number_unsigned()) throw io::ConfigError("ensemble.seed", "expected a nonnegative integer");
    seed = e["seed"].get<std::uint64_t>();
  }
  if (flags.seed) seed = *flags.seed;
  const auto checkpoints = times_or_grid(e, "checkpoints", "ensemble.checkpoints", tau, grid_size(flags, config));

  State start(static_cast<std::size_t>(spec.d));
  if (e.contains("init")) {
    const auto y = int_state(e["init"], "ensemble.init", spec.d);
    start.assign(y.begin(), y.end());
  } else {
    for (int i = 0; i < spec.d; ++i) {
      if (spec.r0[i] != std::round(spec.r0[i])) {
        throw io::ConfigError("ensemble.init", "missing, and model.r0 is not integer-valued");
      }
      start[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(spec.r0[i]);
    }
  }
  SimulationOptions options;
  if (e.contains("histogram")) options.record_histogram = e["histogram"].get<bool>();
  if (e.contains("max_events")) {
    if (!e["max_events"].is_number_unsigned()) throw io::ConfigError("ensemble.max_events", "expected a positive integer");
    options.max_events = e["max_events"].get<std::uint64_t>();
  }

  const EnsembleTrace trace = simulate(spec, n, tau, InitialState::shared(start), seed, checkpoints, options);
  Sink sink(flags, config, out);
  sink.primary("trace.csv", [&](std::ostream& s) { io::write_trace_csv(s, trace); });
  if (options.record_histogram) {
    sink.secondary("histograms.json", [&](std::ostream& s) { s << io::histograms_to_json(trace).dump() << "\n"; });
  }
  err << "mfbd simulate: " << trace.events.total() << " events\n";
  return ok;
}

int cmd_loglik(const Flags& flags, const json& config, std::ostream& out, std::ostream&) {
  const ModelSpec spec = load_model(config);
  const SamplingSpec sampling = io::sampling_from_json(section(config, "sampling"));
  const auto bad = validate(sampling);
  if (!bad.empty()) throw io::ConfigError("sampling." + bad.front().field, bad.front().reason);
  const json& p = section(config, "phylo");

  std::string text;
  std::string tree_path = flags.tree;
  if (tree_path.empty() && p.contains("tree")) {
    // Relative paths in the config are taken from the config's directory.
    std::filesystem::path path = p["tree"].get<std::string>();
    if (path.is_relative()) path = std::filesystem::path(flags.config).parent_path() / path;
    tree_path = path.string();
  }
  if (!tree_path.empty()) {
    std::ifstream in(tree_path);
    if (!in) throw io::ConfigError(tree_path, "cannot open tree file");
    std::stringstream buf;
    buf << in.rdbuf();
    text = buf.str();
  } else if (p.contains("newick")) {
    text = p["newick"].get<std::string>();
  } else {
    throw io::ConfigError("phylo", "give a tree with --tree, phylo.tree or phylo.newick");
  }
  const PhyloTree tree = parse_tree(text);

  LikelihoodOptions options;
  options.scf = load_scf(config);
  if (p.contains("condition_on_observation")) options.condition_on_observation = p["condition_on_observation"].get<bool>();
  if (p.contains("fossil_uses_meanfield_rate")) {
    options.fossil_uses_meanfield_rate = p["fossil_uses_meanfield_rate"].get<bool>();
  }
  const LikelihoodResult result = evaluate_likelihood(tree, spec, sampling, options);
  json doc = {{"loglik", nullptr},
              {"conditioned", result.conditioned},
              {"tau", result.tau},
              {"scf_iterations", result.scf_iterations},
              {"scf_residual", result.scf_residual},
              {"diagnostics", result.diagnostics}};
  // JSON has no infinities; a zero likelihood is reported as null.
  if (std::isfinite(result.loglik)) doc["loglik"] = result.loglik;
  Sink sink(flags, config, out);
  sink.primary("loglik.json", [&](std::ostream& s) { s << doc.dump(2) << "\n"; });
  return ok;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mean-field interacting multi-type birth-death processes"};
  app.require_subcommand(1);
  Flags flags;
  std::uint64_t seed = 0;
  int grid = 0;
  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "JSON run configuration")->required();
    sub->add_option("--out", flags.out_dir, "Output directory (overrides output.dir)");
    sub->add_option("--grid", grid, "Number of output grid points (overrides output.grid)");
    sub->add_flag("--stdout", flags.to_stdout, "Write the main result to standard output");
  };
  CLI::App* scf = app.add_subcommand("scf", "Self-consistent field by fixed-point iteration");
  CLI::App* steady = app.add_subcommand("steady", "Steady states of the moment equation");
  CLI::App* master = app.add_subcommand("master", "Truncated master equation");
  CLI::App* sim = app.add_subcommand("simulate", "Exact stochastic simulation of N coupled replicas");
  CLI::App* loglik = app.add_subcommand("loglik", "Log-likelihood of a typed, time-calibrated tree");
  for (CLI::App* sub : {scf, steady, master, sim, loglik}) common(sub);
  CLI::Option* seed_opt = sim->add_option("--seed", seed, "Random seed (overrides ensemble.seed)");
  loglik->add_option("--tree", flags.tree, "Annotated Newick file (overrides phylo.tree)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return invalid_input;
  }
  if (*seed_opt) flags.seed = seed;
  if (grid != 0) flags.grid = grid;
  if (flags.grid && *flags.grid < 2) {
    err << "mfbd: --grid must be at least 2\n";
    return invalid_input;
  }

  try {
    const json config = io::read_json_file(flags.config);
    if (!config.is_object()) throw io::ConfigError(flags.config, "expected a JSON object");
    if (*scf) return cmd_scf(flags, config, out, err);
    if (*steady) return cmd_steady(flags, config, out, err);
    if (*master) return cmd_master(flags, config, out, err);
    if (*sim) return cmd_simulate(flags, config, out, err);
    return cmd_loglik(flags, config, out, err);
  } catch (const io::ConfigError& e) {
    err << "mfbd: invalid configuration: " << e.what() << "\n";
    return invalid_input;
  } catch (const TreeParseError& e) {
    err << "mfbd: " << e.what() << "\n";
    return invalid_input;
  } catch (const LatticeTooLarge& e) {
    err << "mfbd: " << e.what() << "\n";
    return invalid_input;
  } catch (const nlohmann::json::exception& e) {
    err << "mfbd: invalid configuration: " << e.what() << "\n";
    return invalid_input;
  } catch (const std::invalid_argument& e) {
    err << "mfbd: " << e.what() << "\n";
    return invalid_input;
  } catch (const std::exception& e) {
    err << "mfbd: " << e.what() << "\n";
    return runtime_failure;
  }
}

}  // namespace mfbd::cli
