#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "mfbd/ensemble.hpp"
#include "mfbd/master.hpp"
#include "mfbd/model.hpp"
#include "mfbd/scf.hpp"

namespace mfbd::io {

/// Malformed or out-of-range configuration; `path` names the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, const std::string& reason)
      : std::runtime_error(path + ": " + reason), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// {"d", "lambda", "mu", "gamma", "w", "r0", "interaction_cap"}; gamma may give
/// off-diagonal rates only. The result is normalized but not validated.
ModelSpec model_from_json(const nlohmann::json& j, const std::string& path = "model");
nlohmann::json model_to_json(const ModelSpec& spec);
SamplingSpec sampling_from_json(const nlohmann::json& j, const std::string& path = "sampling");

double number_at(const nlohmann::json& j, const std::string& path);
Vector vector_at(const nlohmann::json& j, const std::string& path);
Matrix matrix_at(const nlohmann::json& j, const std::string& path);

/// Reads a JSON document; parse errors become ConfigError.
nlohmann::json read_json_file(const std::string& filename);

/// %.17g, which round-trips every finite double.
std::string format_double(double x);

/// n points on [0, tau]; the last is tau exactly.
std::vector<double> uniform_grid(double tau, int n);

void write_trajectory_csv(std::ostream& out, const FieldTrajectory& field, const std::vector<double>& times,
                          const std::string& prefix = "r");

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};
Table read_csv(std::istream& in);

/// Rows "t,y_1,...,y_d,prob" for probabilities >= 1e-12.
void write_distribution_csv(std::ostream& out, const DistributionTrajectory& traj, const std::vector<double>& times);
/// Rows "t,m_1,...,m_d,mass,boundary_mass".
void write_moments_csv(std::ostream& out, const DistributionTrajectory& traj, const std::vector<double>& times);

void write_trace_csv(std::ostream& out, const EnsembleTrace& trace);
nlohmann::json histograms_to_json(const EnsembleTrace& trace);

}  // namespace mfbd::io
