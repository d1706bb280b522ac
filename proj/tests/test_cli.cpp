#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "csda/runner.hpp"

using namespace csda;
namespace fs = std::filesystem;

namespace {

const char* kToyConfig = R"(
[grid]
dims = 4 4 2
spacing = 0.25 0.25 0.5
sphere_level = 0
energy_levels = 4
e_min = 1.5
e_max = 8.0
phantom = three_region
target_lo = 1 1 1
target_hi = 2 2 1
critical_lo = 0 0 0
critical_hi = 3 3 0

[physics]
sigma0 = 1.0
kappa = 2.0
sigma_margin = 0.5

[prescription]
target_t = 1.0
c_sc = 1.0

[source]
boundary_flux = 1.0
boundary_species = 0

[solver]
tol = 1e-11
fp_tol = 1e-10
fp_max_iter = 200

[run]
seed = 99
)";

RunContext make_ctx(const std::string& text, const std::string& out) {
  RunContext ctx;
  ctx.config = RunConfig::parse(ConfigFile::from_string(text), "");
  ctx.out_dir = out;
  ctx.seed = ctx.config.seed;
  return ctx;
}

std::vector<double> read_raw_f64(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() % 8 == 0);
  std::vector<double> v(bytes.size() / 8);
  std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TmpDir {
  fs::path path;
  explicit TmpDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TmpDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("config: unknown keys, invariants, species bounds") {
  CHECK_THROWS_WITH_AS(ConfigFile::from_string("[grid]\nbogus = 1\n"),
                       doctest::Contains("unknown key"), std::runtime_error);
  // E_0 = 0.5 with kappa = 2 sits in the ln(kappa E - E) <= 0 regime.
  CHECK_THROWS_WITH_AS(
      RunConfig::parse(ConfigFile::from_string("[grid]\ne_min = 0.5\ne_max = 8\n"), ""),
      doctest::Contains("E_0"), std::runtime_error);
  CHECK_THROWS(RunConfig::parse(
      ConfigFile::from_string("[solver]\ntol = 0\n"), ""));
  CHECK_THROWS(RunConfig::parse(
      ConfigFile::from_string("[source]\nboundary_species = 5\n"), ""));
}

TEST_CASE("validate command: default passes, zero margin fails with the named assumption") {
  TmpDir out("csda_validate_ok");
  CHECK(cmd_validate(make_ctx(kToyConfig, out.str())) == kExitOk);
  const std::string manifest = slurp(out.str() + "/manifest.txt");
  CHECK(manifest.find("all hypothesis checks passed") != std::string::npos);
  CHECK(manifest.find("margin:sigma-minus-kernel-sums") != std::string::npos);

  // Sigma without any margin: the coupled coercivity margin check fails.
  std::string bad = kToyConfig;
  const auto pos = bad.find("sigma_margin = 0.5");
  bad.replace(pos, 18, "sigma_margin = 0.0");
  TmpDir out2("csda_validate_bad");
  CHECK(cmd_validate(make_ctx(bad, out2.str())) == kExitValidation);
  const std::string m2 = slurp(out2.str() + "/manifest.txt");
  CHECK(m2.find("FAIL") != std::string::npos);
  CHECK(m2.find("margin") != std::string::npos);
}

TEST_CASE("hypothesis failure names the margin when Sigma is zeroed") {
  auto grid = std::make_shared<PhaseSpaceGrid>(
      SpatialGrid::uniform_box({0, 0, 0}, {1, 1, 1}, {2, 2, 1}), build_sphere_grid(0),
      EnergyGrid::uniform(8.0, 1.5, 4));
  TransportProblem prob = make_problem(grid, ProblemOptions{});
  for (auto& s : prob.sigma) std::fill(s.begin(), s.end(), 0.0);
  prob.hypotheses_validated = false;
  CHECK_THROWS_WITH_AS(prob.validate_hypotheses(),
                       doctest::Contains("Sigma minus kernel row/column sums"),
                       std::runtime_error);
}

TEST_CASE("forward command: zero source gives an all-zero dose volume") {
  std::string zero_src = kToyConfig;
  const auto pos = zero_src.find("boundary_flux = 1.0");
  zero_src.replace(pos, 19, "boundary_flux = 0.0");
  TmpDir out("csda_forward_zero");
  CHECK(cmd_forward(make_ctx(zero_src, out.str())) == kExitOk);
  const std::vector<double> dose_vol = read_raw_f64(out.str() + "/dose.raw");
  CHECK(dose_vol.size() == 4 * 4 * 2);
  for (double d : dose_vol) CHECK(d == 0.0);
}

TEST_CASE("forward command: determinism across runs, bit-identical exports") {
  TmpDir out1("csda_det_1"), out2("csda_det_2");
  CHECK(cmd_forward(make_ctx(kToyConfig, out1.str())) == kExitOk);
  CHECK(cmd_forward(make_ctx(kToyConfig, out2.str())) == kExitOk);
  for (const char* name : {"dose.raw", "flux_photon.raw", "flux_electron.raw",
                           "flux_positron.raw"}) {
    const auto a = read_raw_f64(out1.str() + "/" + name);
    const auto b = read_raw_f64(out2.str() + "/" + name);
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * 8) == 0);
  }
}

TEST_CASE("adjoint command runs and exports") {
  TmpDir out("csda_adjoint");
  CHECK(cmd_adjoint(make_ctx(kToyConfig, out.str())) == kExitOk);
  CHECK(fs::exists(out.path / "manifest.txt"));
  CHECK(fs::exists(out.path / "flux_electron.raw.meta"));
}

TEST_CASE("plan command: complementarity residual lands in the manifest") {
  TmpDir out("csda_plan");
  CHECK(cmd_plan(make_ctx(kToyConfig, out.str()), "external") == kExitOk);
  const std::string manifest = slurp(out.str() + "/manifest.txt");
  const auto pos = manifest.find("complementarity_residual: ");
  REQUIRE(pos != std::string::npos);
  const double comp = std::stod(manifest.substr(pos + 26));
  CHECK(comp <= 1e-8);
  CHECK(fs::exists(out.path / "kkt.txt"));
  CHECK(fs::exists(out.path / "objective.tsv"));
  CHECK(fs::exists(out.path / "dvh.tsv"));
  CHECK(fs::exists(out.path / "control_boundary.raw"));
}

TEST_CASE("kappa-study command writes a decreasing table") {
  TmpDir out("csda_kappa");
  CHECK(cmd_kappa_study(make_ctx(kToyConfig, out.str())) == kExitOk);
  std::ifstream in(out.str() + "/kappa_consistency.tsv");
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  double kappa, disc, prev = 1e18;
  int rows = 0;
  while (in >> kappa >> disc) {
    CHECK(disc < prev);
    prev = disc;
    ++rows;
  }
  CHECK(rows == 4);
}

TEST_CASE("label file round trip and size validation") {
  TmpDir dir("csda_labels");
  const std::string label_path = (dir.path / "labels.u8").string();
  {
    std::ofstream out(label_path, std::ios::binary);
    // 2x2x1 labels: one outside corner.
    const unsigned char raw[4] = {2, 2, 2, 3};
    out.write(reinterpret_cast<const char*>(raw), 4);
  }
  std::string cfg = R"(
[grid]
dims = 2 2 1
sphere_level = 0
energy_levels = 3
e_min = 1.5
e_max = 8.0
label_file = )" + label_path +
                    "\n";
  RunConfig rc = RunConfig::parse(ConfigFile::from_string(cfg), "");
  RunSetup setup = build_setup(rc);
  CHECK(setup.grid->n_vox() == 3);

  std::string bad_cfg = cfg;
  bad_cfg.replace(bad_cfg.find("dims = 2 2 1"), 12, "dims = 2 2 2");
  RunConfig rc2 = RunConfig::parse(ConfigFile::from_string(bad_cfg), "");
  CHECK_THROWS_WITH_AS(build_setup(rc2), doctest::Contains("size"), std::runtime_error);
}
