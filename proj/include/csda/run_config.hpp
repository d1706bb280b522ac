#pragma once

#include <map>
#include <string>

#include "csda/dose_planner.hpp"

namespace csda {

/// Sectioned key = value text config. Unknown keys are rejected to keep run
/// manifests trustworthy.
class ConfigFile {
 public:
  static ConfigFile load(const std::string& path);
  static ConfigFile from_string(const std::string& text);

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const;
  double get_num(const std::string& section, const std::string& key, double fallback) const;
  int get_int(const std::string& section, const std::string& key, int fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  std::vector<double> get_list(const std::string& section, const std::string& key) const;

  const std::map<std::string, std::map<std::string, std::string>>& sections() const {
    return sections_;
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

struct RunConfig {
  // grid
  std::array<int, 3> dims{4, 4, 4};
  Vec3 spacing{1, 1, 1};
  Vec3 origin{0, 0, 0};
  int sphere_level = 1;
  int energy_levels = 8;
  double e_min = 1.5;
  double e_max = 10.0;
  std::string label_file;        // raw uint8 labels, x-fastest
  std::string phantom = "uniform";  // uniform | three_region
  std::array<int, 3> target_lo{0, 0, 0}, target_hi{-1, -1, -1};
  std::array<int, 3> critical_lo{0, 0, 0}, critical_hi{-1, -1, -1};

  ProblemOptions physics;
  std::array<double, 3> stopping_power{1.0, 1.0, 1.0};
  Prescription rx;

  // sources for forward/adjoint commands
  double boundary_flux = 1.0;
  int boundary_species = kPhoton;
  double volume_source = 0.0;
  int volume_species = kElectron;

  SolverOptions solver;
  FixedPointOptions fixed_point;

  std::uint64_t seed = 1234;
  int threads = 1;

  std::vector<double> kappa_list{2.0, 1.5, 1.25, 1.125};
  int kappa_samples = 8;

  static RunConfig parse(const ConfigFile& file, const std::string& config_dir);
  void validate() const;
};

/// Grid + problem + planning inputs assembled from a config.
struct RunSetup {
  std::shared_ptr<const PhaseSpaceGrid> grid;
  TransportProblem problem;
  StoppingPowers stopping;
  RunConfig config;
};

RunSetup build_setup(const RunConfig& cfg);

}  // namespace csda
