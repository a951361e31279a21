#include "mfbd/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace mfbd::io {

double number_at(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  const double x = j.get<double>();
  if (!std::isfinite(x)) throw ConfigError(path, "must be finite");
  return x;
}

Vector vector_at(const nlohmann::json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    v[static_cast<Eigen::Index>(k)] = number_at(j[k], path + "[" + std::to_string(k) + "]");
  }
  return v;
}

Matrix matrix_at(const nlohmann::json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array of rows");
  const std::size_t rows = j.size();
  const std::size_t cols = rows == 0 ? 0 : (j[0].is_array() ? j[0].size() : 0);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::string row_path = path + "[" + std::to_string(r) + "]";
    const Vector row = vector_at(j[r], row_path);
    if (static_cast<std::size_t>(row.size()) != cols) throw ConfigError(row_path, "rows have unequal lengths");
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

namespace {

const nlohmann::json& require(const nlohmann::json& j, const char* key, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  const auto it = j.find(key);
  if (it == j.end()) throw ConfigError(path + "." + key, "missing");
  return *it;
}

}  // namespace

ModelSpec model_from_json(const nlohmann::json& j, const std::string& path) {
  ModelSpec spec;
  const auto& d = require(j, "d", path);
  if (!d.is_number_integer() || d.get<long long>() < 1) throw ConfigError(path + ".d", "expected a positive integer");
  spec.d = static_cast<int>(d.get<long long>());
  spec.lambda = vector_at(require(j, "lambda", path), path + ".lambda");
  spec.mu = vector_at(require(j, "mu", path), path + ".mu");
  spec.r0 = vector_at(require(j, "r0", path), path + ".r0");
  spec.gamma = j.contains("gamma") ? matrix_at(j["gamma"], path + ".gamma") : Matrix::Zero(spec.d, spec.d);
  spec.w = j.contains("w") ? matrix_at(j["w"], path + ".w") : Matrix::Zero(spec.d, spec.d);
  if (j.contains("interaction_cap")) spec.interaction_cap = number_at(j["interaction_cap"], path + ".interaction_cap");
  return normalized(std::move(spec));
}

nlohmann::json model_to_json(const ModelSpec& spec) {
  const auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  const auto mat = [&vec](const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec(m.row(r).transpose()));
    return rows;
  };
  return {{"d", spec.d},         {"lambda", vec(spec.lambda)}, {"mu", vec(spec.mu)},
          {"gamma", mat(spec.gamma)}, {"w", mat(spec.w)},          {"r0", vec(spec.r0)},
          {"interaction_cap", spec.interaction_cap}};
}

SamplingSpec sampling_from_json(const nlohmann::json& j, const std::string& path) {
  SamplingSpec s;
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  if (j.contains("rho")) s.rho = number_at(j["rho"], path + ".rho");
  if (j.contains("sigma")) s.sigma = number_at(j["sigma"], path + ".sigma");
  return s;
}

nlohmann::json read_json_file(const std::string& filename) {
  std::ifstream in(filename);
  if (!in) throw ConfigError(filename, "cannot open file");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(filename, e.what());
  }
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::vector<double> uniform_grid(double tau, int n) {
  if (n < 2) throw std::invalid_argument("uniform_grid: need at least two points");
  std::vector<double> t(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) t[static_cast<std::size_t>(k)] = tau * k / (n - 1);
  t.back() = tau;
  return t;
}

void write_trajectory_csv(std::ostream& out, const FieldTrajectory& field, const std::vector<double>& times,
                          const std::string& prefix) {
  out << "t";
  for (int i = 1; i <= field.dim(); ++i) out << "," << prefix << "_" << i;
  out << "\n";
  Vector v(field.dim());
  for (double t : times) {
    field.evaluate(t, v);
    out << format_double(t);
    for (int i = 0; i < field.dim(); ++i) out << "," << format_double(v[i]);
    out << "\n";
  }
}

Table read_csv(std::istream& in) {
  Table table;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_csv: empty input");
  std::stringstream header(line);
  for (std::string cell; std::getline(header, cell, ',');) table.header.push_back(cell);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (start <= line.size()) {
      std::size_t end = line.find(',', start);
      if (end == std::string::npos) end = line.size();
      double x = 0.0;
      const auto [ptr, ec] = std::from_chars(line.data() + start, line.data() + end, x);
      if (ec != std::errc() || ptr != line.data() + end) {
        throw std::runtime_error("read_csv: line " + std::to_string(line_no) + " has a malformed number");
      }
      row.push_back(x);
      start = end + 1;
    }
    if (row.size() != table.header.size()) {
      throw std::runtime_error("read_csv: line " + std::to_string(line_no) + " has the wrong number of fields");
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

void write_distribution_csv(std::ostream& out, const DistributionTrajectory& traj, const std::vector<double>& times) {
  const TruncatedLattice& lattice = traj.lattice();
  out << "t";
  for (int i = 1; i <= lattice.dim(); ++i) out << ",y_" << i;
  out << ",prob\n";
  for (double t : times) {
    const Vector v = traj.distribution(t);
    for (std::size_t k = 0; k < lattice.size(); ++k) {
      const double p = v[static_cast<Eigen::Index>(k)];
      if (p < 1e-12) continue;
      out << format_double(t);
      for (int y : lattice.state(k)) out << "," << y;
      out << "," << format_double(p) << "\n";
    }
  }
}

void write_moments_csv(std::ostream& out, const DistributionTrajectory& traj, const std::vector<double>& times) {
  const int d = traj.lattice().dim();
  out << "t";
  for (int i = 1; i <= d; ++i) out << ",m_" << i;
  out << ",mass,boundary_mass\n";
  for (double t : times) {
    const Vector m = traj.moments(t);
    out << format_double(t);
    for (int i = 0; i < d; ++i) out << "," << format_double(m[i]);
    out << "," << format_double(traj.distribution(t).sum()) << "," << format_double(traj.boundary_mass(t)) << "\n";
  }
}

void write_trace_csv(std::ostream& out, const EnsembleTrace& trace) {
  const int d = trace.checkpoints.empty() ? 0 : static_cast<int>(trace.checkpoints.front().mean.size());
  out << "t";
  for (int i = 1; i <= d; ++i) out << ",mean_" << i;
  out << ",events_birth,events_death,events_mutation\n";
  for (const Checkpoint& cp : trace.checkpoints) {
    out << format_double(cp.t);
    for (int i = 0; i < d; ++i) out << "," << format_double(cp.mean[i]);
    out << "," << cp.events.birth << "," << cp.events.death << "," << cp.events.mutation << "\n";
  }
}

nlohmann::json histograms_to_json(const EnsembleTrace& trace) {
  nlohmann::json out = nlohmann::json::array();
  for (const Checkpoint& cp : trace.checkpoints) {
    nlohmann::json states = nlohmann::json::array();
    if (cp.histogram) {
      for (const auto& [y, count] : *cp.histogram) states.push_back({{"state", y}, {"count", count}});
    }
    out.push_back({{"t", cp.t}, {"states", std::move(states)}});
  }
  return out;
}

}  // namespace mfbd::io
