#include "csda/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace csda {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

const std::set<std::string> kKnownKeys = {
    "grid.dims", "grid.spacing", "grid.origin", "grid.sphere_level", "grid.energy_levels",
    "grid.e_min", "grid.e_max", "grid.label_file", "grid.phantom", "grid.target_lo",
    "grid.target_hi", "grid.critical_lo", "grid.critical_hi",
    "physics.sigma0", "physics.kappa", "physics.sigma_margin", "physics.coupling_photon_self",
    "physics.coupling_photon_electron", "physics.coupling_photon_positron",
    "physics.coupling_electron_photon", "physics.coupling_positron_photon",
    "physics.moller_self_scatter", "physics.n_s", "physics.stopping_power",
    "prescription.d0", "prescription.d_crit", "prescription.d_norm", "prescription.target_t",
    "prescription.target_c", "prescription.target_n", "prescription.dv_level",
    "prescription.dv_fraction", "prescription.eps", "prescription.c_t", "prescription.c_c",
    "prescription.c_n", "prescription.c_dv", "prescription.c_ad", "prescription.c_sc",
    "source.boundary_flux", "source.boundary_species", "source.volume_source",
    "source.volume_species",
    "solver.tol", "solver.max_iter", "solver.theta", "solver.fp_tol", "solver.fp_max_iter",
    "run.seed", "run.threads",
    "kappa_study.kappas", "kappa_study.samples",
};

}  // namespace

ConfigFile ConfigFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

ConfigFile ConfigFile::from_string(const std::string& text) {
  ConfigFile f;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: malformed line " + std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) throw std::runtime_error("config: key outside a section");
    if (!kKnownKeys.count(section + "." + key))
      throw std::runtime_error("config: unknown key " + section + "." + key);
    f.sections_[section][key] = value;
  }
  return f;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  return s != sections_.end() && s->second.count(key) > 0;
}

std::string ConfigFile::get(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return fallback;
  auto k = s->second.find(key);
  return k == s->second.end() ? fallback : k->second;
}

double ConfigFile::get_num(const std::string& section, const std::string& key,
                           double fallback) const {
  if (!has(section, key)) return fallback;
  return std::stod(get(section, key, ""));
}

int ConfigFile::get_int(const std::string& section, const std::string& key, int fallback) const {
  if (!has(section, key)) return fallback;
  return std::stoi(get(section, key, ""));
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
  if (!has(section, key)) return fallback;
  const std::string v = get(section, key, "");
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::runtime_error("config: bad boolean for " + section + "." + key);
}

std::vector<double> ConfigFile::get_list(const std::string& section, const std::string& key) const {
  std::vector<double> out;
  std::istringstream ss(get(section, key, ""));
  double v;
  while (ss >> v) out.push_back(v);
  return out;
}

namespace {

std::array<int, 3> int3(const ConfigFile& f, const std::string& sec, const std::string& key,
                        std::array<int, 3> fallback) {
  if (!f.has(sec, key)) return fallback;
  const auto v = f.get_list(sec, key);
  if (v.size() != 3) throw std::runtime_error("config: " + sec + "." + key + " needs 3 values");
  return {static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2])};
}

Vec3 vec3(const ConfigFile& f, const std::string& sec, const std::string& key, Vec3 fallback) {
  if (!f.has(sec, key)) return fallback;
  const auto v = f.get_list(sec, key);
  if (v.size() != 3) throw std::runtime_error("config: " + sec + "." + key + " needs 3 values");
  return {v[0], v[1], v[2]};
}

}  // namespace

RunConfig RunConfig::parse(const ConfigFile& f, const std::string& config_dir) {
  RunConfig c;
  c.dims = int3(f, "grid", "dims", c.dims);
  c.spacing = vec3(f, "grid", "spacing", c.spacing);
  c.origin = vec3(f, "grid", "origin", c.origin);
  c.sphere_level = f.get_int("grid", "sphere_level", c.sphere_level);
  c.energy_levels = f.get_int("grid", "energy_levels", c.energy_levels);
  c.e_min = f.get_num("grid", "e_min", c.e_min);
  c.e_max = f.get_num("grid", "e_max", c.e_max);
  c.label_file = f.get("grid", "label_file", "");
  if (!c.label_file.empty() && c.label_file.front() != '/' && !config_dir.empty())
    c.label_file = config_dir + "/" + c.label_file;
  c.phantom = f.get("grid", "phantom", c.phantom);
  c.target_lo = int3(f, "grid", "target_lo", c.target_lo);
  c.target_hi = int3(f, "grid", "target_hi", c.target_hi);
  c.critical_lo = int3(f, "grid", "critical_lo", c.critical_lo);
  c.critical_hi = int3(f, "grid", "critical_hi", c.critical_hi);

  c.physics.sigma0 = f.get_num("physics", "sigma0", c.physics.sigma0);
  c.physics.kappa = f.get_num("physics", "kappa", c.physics.kappa);
  c.physics.sigma_margin = f.get_num("physics", "sigma_margin", c.physics.sigma_margin);
  c.physics.coupling_photon_self =
      f.get_num("physics", "coupling_photon_self", c.physics.coupling_photon_self);
  c.physics.coupling_photon_electron =
      f.get_num("physics", "coupling_photon_electron", c.physics.coupling_photon_electron);
  c.physics.coupling_photon_positron =
      f.get_num("physics", "coupling_photon_positron", c.physics.coupling_photon_positron);
  c.physics.coupling_electron_photon =
      f.get_num("physics", "coupling_electron_photon", c.physics.coupling_electron_photon);
  c.physics.coupling_positron_photon =
      f.get_num("physics", "coupling_positron_photon", c.physics.coupling_positron_photon);
  c.physics.moller_self_scatter =
      f.get_bool("physics", "moller_self_scatter", c.physics.moller_self_scatter);
  c.physics.n_s = f.get_int("physics", "n_s", c.physics.n_s);
  if (f.has("physics", "stopping_power")) {
    const auto v = f.get_list("physics", "stopping_power");
    if (v.size() != 3) throw std::runtime_error("config: stopping_power needs 3 values");
    c.stopping_power = {v[0], v[1], v[2]};
  }

  c.rx.d0 = f.get_num("prescription", "d0", c.rx.d0);
  c.rx.d_crit = f.get_num("prescription", "d_crit", c.rx.d_crit);
  c.rx.d_norm = f.get_num("prescription", "d_norm", c.rx.d_norm);
  c.rx.target_t = f.get_num("prescription", "target_t", c.rx.d0);
  c.rx.target_c = f.get_num("prescription", "target_c", 0.0);
  c.rx.target_n = f.get_num("prescription", "target_n", 0.0);
  c.rx.dv_level = f.get_num("prescription", "dv_level", c.rx.dv_level);
  c.rx.dv_fraction = f.get_num("prescription", "dv_fraction", c.rx.dv_fraction);
  c.rx.eps = f.get_num("prescription", "eps", 0.02 * c.rx.dv_level);
  c.rx.c_t = f.get_num("prescription", "c_t", c.rx.c_t);
  c.rx.c_c = f.get_num("prescription", "c_c", c.rx.c_c);
  c.rx.c_n = f.get_num("prescription", "c_n", c.rx.c_n);
  c.rx.c_dv = f.get_num("prescription", "c_dv", c.rx.c_dv);
  c.rx.c_ad = f.get_num("prescription", "c_ad", c.rx.c_ad);
  c.rx.c_sc = f.get_num("prescription", "c_sc", c.rx.c_sc);

  c.boundary_flux = f.get_num("source", "boundary_flux", c.boundary_flux);
  c.boundary_species = f.get_int("source", "boundary_species", c.boundary_species);
  c.volume_source = f.get_num("source", "volume_source", c.volume_source);
  c.volume_species = f.get_int("source", "volume_species", c.volume_species);

  c.solver.tol = f.get_num("solver", "tol", c.solver.tol);
  c.solver.max_iter = f.get_int("solver", "max_iter", c.solver.max_iter);
  c.fixed_point.theta = f.get_num("solver", "theta", c.fixed_point.theta);
  c.fixed_point.tol = f.get_num("solver", "fp_tol", c.fixed_point.tol);
  c.fixed_point.max_iter = f.get_int("solver", "fp_max_iter", c.fixed_point.max_iter);
  c.fixed_point.solver = c.solver;

  c.seed = static_cast<std::uint64_t>(f.get_num("run", "seed", static_cast<double>(c.seed)));
  c.threads = f.get_int("run", "threads", c.threads);

  if (f.has("kappa_study", "kappas")) c.kappa_list = f.get_list("kappa_study", "kappas");
  c.kappa_samples = f.get_int("kappa_study", "samples", c.kappa_samples);

  c.validate();
  return c;
}

void RunConfig::validate() const {
  if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1)
    throw std::runtime_error("config: dims must be positive");
  if (!(e_max > e_min) || e_min <= 0.0)
    throw std::runtime_error("config: requires E_m > E_0 > 0");
  if ((physics.kappa - 1.0) * e_min <= 1.0)
    throw std::runtime_error(
        "config: E_0 too small for the truncation (requires E_0 > 1/(kappa-1), e.g. E_0 > 1 "
        "for kappa = 2)");
  if (!(solver.tol > 0.0) || !(fixed_point.tol > 0.0))
    throw std::runtime_error("config: tolerances must be positive");
  if (energy_levels < 3) throw std::runtime_error("config: need at least 3 energy levels");
  if (boundary_species < 0 || boundary_species > 2 || volume_species < 0 || volume_species > 2)
    throw std::runtime_error("config: species indices must be 0, 1 or 2");
}

namespace {

std::vector<Region> load_labels(const RunConfig& cfg) {
  const std::size_t n =
      static_cast<std::size_t>(cfg.dims[0]) * cfg.dims[1] * cfg.dims[2];
  if (!cfg.label_file.empty()) {
    std::ifstream in(cfg.label_file, std::ios::binary);
    if (!in) throw std::runtime_error("labels: cannot open " + cfg.label_file);
    std::vector<std::uint8_t> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
      throw std::runtime_error("labels: file size does not match dims");
    char extra;
    if (in.read(&extra, 1))
      throw std::runtime_error("labels: file size does not match dims");
    std::vector<Region> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (raw[i] > 3) throw std::runtime_error("labels: value out of range");
      labels[i] = static_cast<Region>(raw[i]);
    }
    return labels;
  }
  std::vector<Region> labels(n, Region::Normal);
  auto box = [&](std::array<int, 3> lo, std::array<int, 3> hi, Region r) {
    for (int k = std::max(0, lo[2]); k <= std::min(cfg.dims[2] - 1, hi[2]); ++k)
      for (int j = std::max(0, lo[1]); j <= std::min(cfg.dims[1] - 1, hi[1]); ++j)
        for (int i = std::max(0, lo[0]); i <= std::min(cfg.dims[0] - 1, hi[0]); ++i)
          labels[(static_cast<std::size_t>(k) * cfg.dims[1] + j) * cfg.dims[0] + i] = r;
  };
  if (cfg.phantom == "three_region") {
    std::array<int, 3> tl = cfg.target_lo, th = cfg.target_hi;
    if (th[0] < tl[0]) {  // default: centered box of one third per axis
      for (int a = 0; a < 3; ++a) {
        tl[a] = cfg.dims[a] / 3;
        th[a] = std::max(tl[a], 2 * cfg.dims[a] / 3 - 1);
      }
    }
    std::array<int, 3> cl = cfg.critical_lo, ch = cfg.critical_hi;
    if (ch[0] < cl[0]) {  // default: one voxel-thick slab beside the target
      cl = {0, 0, 0};
      ch = {cfg.dims[0] - 1, cfg.dims[1] - 1, 0};
    }
    box(cl, ch, Region::Critical);
    box(tl, th, Region::Target);
  } else if (cfg.phantom != "uniform") {
    throw std::runtime_error("config: unknown phantom " + cfg.phantom);
  }
  return labels;
}

}  // namespace

RunSetup build_setup(const RunConfig& cfg) {
  RunSetup s;
  s.config = cfg;
  auto spatial = SpatialGrid::box(cfg.origin, cfg.spacing, cfg.dims, load_labels(cfg));
  auto sphere = build_sphere_grid(cfg.sphere_level);
  auto energy = EnergyGrid::uniform(cfg.e_max, cfg.e_min, cfg.energy_levels);
  s.grid = std::make_shared<PhaseSpaceGrid>(std::move(spatial), std::move(sphere),
                                            std::move(energy));
  s.problem = make_problem(s.grid, cfg.physics);
  s.stopping = StoppingPowers::constant(*s.grid, cfg.stopping_power);
  return s;
}

}  // namespace csda
