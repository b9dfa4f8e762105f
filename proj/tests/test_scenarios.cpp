#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "bilayer/scenarios.hpp"

using namespace bilayer;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("presets encode the reference experiments") {
  const ScenarioConfig cyl = scenario_preset("cylinder");
  CHECK(cyl.nx * cyl.ny == 256);
  CHECK(cyl.xmin == -5);
  CHECK(cyl.ymax == 2);
  CHECK(cyl.bc == "clamped");
  CHECK(cyl.z_constant == Mat2::Identity());
  CHECK(cyl.flow.tau == 5e-3);
  CHECK(cyl.flow.tol == 1e-4);
  CHECK(cyl.flow.gamma0 == 1.0);
  CHECK(cyl.flow.gamma1 == 1.0);
  CHECK(cyl.degree == 2);
  CHECK(cyl.flow.lifting.l1 == 2);
  CHECK(cyl.flow.lifting.l2 == 2);

  const ScenarioConfig cigar = scenario_preset("cigar");
  CHECK(cigar.nx * cigar.ny == 1024);
  CHECK(cigar.bc == "free");
  CHECK(cigar.z_constant(0, 0) == 3.0);
  CHECK(cigar.z_constant(0, 1) == -2.0);

  const ScenarioConfig helix = scenario_preset("helix");
  CHECK(helix.nx * helix.ny == 1024);
  CHECK(helix.xmin == -8);
  CHECK(helix.ymin == -0.5);
  CHECK(helix.z_constant(0, 1) == -1.5);
  CHECK(helix.flow.tau == 1e-2);

  const ScenarioConfig climate = scenario_preset("climate");
  CHECK(climate.flow.tau == 1.0);
  CHECK(climate.bc == "clamped");
  CHECK(climate.clamp_side == "bottom");

  const ScenarioConfig origami = scenario_preset("origami");
  CHECK(origami.has_crease);
  CHECK(origami.z_by_region);
  CHECK(origami.z_region0(1, 1) == 0.5);
  CHECK(origami.z_region1(1, 1) == -0.5);
  CHECK(origami.flow.lifting.mode == LiftingConfig::Mode::crease);
  CHECK(origami.crease_pts[2] == Vec2(4.8, 6));

  CHECK_THROWS_AS(scenario_preset("nope"), std::invalid_argument);
}

TEST_CASE("config files and overrides") {
  SECTION("parses a preset with overrides") {
    std::istringstream in(
        "# reference run, shrunk\n"
        "scenario = cylinder\n"
        "nx = 8\n"
        "ny = 4   # coarse\n"
        "tau = 1e-2\n");
    const ScenarioConfig cfg = parse_config(in, "inline.cfg");
    CHECK(cfg.scenario == "cylinder");
    CHECK(cfg.nx == 8);
    CHECK(cfg.ny == 4);
    CHECK(cfg.flow.tau == 1e-2);
    CHECK(cfg.z_constant == Mat2::Identity());  // preset field survives
  }

  SECTION("unknown keys carry the line number") {
    std::istringstream in("scenario = flat\nwat = 7\n");
    try {
      parse_config(in, "bad.cfg");
      FAIL("expected a parse error");
    } catch (const std::invalid_argument& e) {
      CHECK(std::string(e.what()).find("bad.cfg:2") != std::string::npos);
      CHECK(std::string(e.what()).find("wat") != std::string::npos);
    }
  }

  SECTION("missing separators are rejected") {
    std::istringstream in("scenario flat\n");
    CHECK_THROWS_AS(parse_config(in, "x.cfg"), std::invalid_argument);
  }

  SECTION("command-line overrides") {
    ScenarioConfig cfg = scenario_preset("cylinder");
    apply_override(cfg, "nx=4");
    apply_override(cfg, "tol = 2e-3");
    CHECK(cfg.nx == 4);
    CHECK(cfg.flow.tol == 2e-3);
    CHECK_THROWS_AS(apply_override(cfg, "nonsense"), std::invalid_argument);
    CHECK_THROWS_AS(apply_override(cfg, "foo=1"), std::invalid_argument);
  }
}

TEST_CASE("surface export") {
  const Mesh m = build_rect_mesh(0, 1, 0, 1, 2, 2);
  const DGSpace sp(m, 2);
  const DGField flat = interpolate(sp, [](const Vec2& x) { return Vec3(x[0], x[1], 0); });
  const fs::path path = fs::temp_directory_path() / "bilayer_flat.vtk";
  export_surface(flat, path.string());
  const std::string vtk = slurp(path);
  CHECK(vtk.find("POINTS 32 double") != std::string::npos);  // 8 nodes per element, unmerged
  CHECK(vtk.find("SCALARS defect double 1") != std::string::npos);
  CHECK(vtk.find("SCALARS region int 1") != std::string::npos);
  // a flat plate export keeps every z coordinate at zero
  std::istringstream in(vtk);
  std::string line;
  while (std::getline(in, line) && line.rfind("POINTS", 0) != 0) {
  }
  for (int i = 0; i < 32; ++i) {
    REQUIRE(std::getline(in, line));
    double x, y, z;
    REQUIRE(std::sscanf(line.c_str(), "%lg %lg %lg", &x, &y, &z) == 3);
    CHECK(z == 0.0);
  }
}

TEST_CASE("state round trip") {
  ScenarioConfig cfg = scenario_preset("cylinder");
  cfg.nx = 4;
  cfg.ny = 2;
  cfg.flow.tol = 0.0;
  cfg.flow.max_steps = 3;
  ScenarioSetup setup = build_scenario(cfg);
  FlowDriver driver(*setup.space, setup.Z, setup.flow);
  const FlowState st = driver.run(*setup.initial);

  const fs::path dir = fs::temp_directory_path() / "bilayer_state_test";
  fs::create_directories(dir);
  const fs::path state_file = dir / "state.bin";
  save_state(st.y, state_file.string());

  const LoadedState loaded = load_state(state_file.string());
  REQUIRE(loaded.y->coeffs().size() == st.y.coeffs().size());
  CHECK((loaded.y->coeffs() - st.y.coeffs()).norm() == 0.0);  // bit-exact payload
  CHECK(loaded.mesh->n_elements() == setup.mesh->n_elements());
  CHECK(loaded.mesh->h_min() == Catch::Approx(setup.mesh->h_min()));

  // re-exporting the reloaded state reproduces the bytes exactly
  const fs::path v1 = dir / "a.vtk", v2 = dir / "b.vtk";
  export_surface(st.y, v1.string());
  export_surface(*loaded.y, v2.string());
  CHECK(slurp(v1) == slurp(v2));

  // corrupted magic is refused
  {
    std::ofstream bad(dir / "bad.bin", std::ios::binary);
    bad << "NOTASTATE";
  }
  CHECK_THROWS(load_state((dir / "bad.bin").string()));
}

TEST_CASE("scenario run writes the full artifact set") {
  ScenarioConfig cfg = scenario_preset("flat");
  cfg.nx = 4;
  cfg.ny = 2;
  cfg.cadence = 1;
  const fs::path dir = fs::temp_directory_path() / "bilayer_run_test";
  fs::remove_all(dir);
  cfg.out_dir = dir.string();
  const ScenarioReport rep = run_scenario(cfg);
  CHECK(rep.stopped_by_tolerance);
  CHECK(rep.steps == 1);
  CHECK(std::abs(rep.final_energy) < 1e-12);

  const std::string csv = slurp(dir / "energies.csv");
  CHECK(csv.rfind("step,E_h,B_h,C_h,max_defect,increment_norm,cg_iters,wall_ms\n", 0) == 0);
  int lines = 0;
  for (char ch : csv)
    if (ch == '\n') ++lines;
  CHECK(lines == 1 + 2);  // header + step 0 + step 1
  CHECK(fs::exists(dir / "final_state.bin"));
  CHECK(fs::exists(dir / "final_surface.vtk"));
  CHECK(fs::exists(dir / "mesh.vtk"));
  CHECK(fs::exists(dir / "snapshot_000000.vtk"));
  CHECK(fs::exists(dir / "snapshot_000001.vtk"));
}

TEST_CASE("climate scenario assembles and takes a step") {
  ScenarioConfig cfg = scenario_preset("climate");
  cfg.subdiv = 2;
  cfg.alpha = 2.0;
  cfg.flow.tol = 0.0;
  cfg.flow.max_steps = 2;
  ScenarioSetup setup = build_scenario(cfg);
  CHECK(setup.mesh->n_elements() == 3 * 2 * 2);
  int clamped = 0;
  for (const Edge& e : setup.mesh->edges)
    if (e.cls == EdgeClass::dirichlet) ++clamped;
  CHECK(clamped == 2 * cfg.subdiv);
  FlowDriver driver(*setup.space, setup.Z, setup.flow);
  const FlowState st = driver.run(*setup.initial);
  CHECK(st.step == 2);
  CHECK(st.history.back().energy < st.initial_energy);
}

TEST_CASE("manufactured studies") {
  SECTION("interpolation converges at third order") {
    const auto rows = manufactured_study("interpolation", 2);
    REQUIRE(rows.size() == 2);
    CHECK(rows[1].ratio >= 7.0);
  }
  SECTION("reconstructed Hessian converges") {
    const auto rows = manufactured_study("hessian_convergence", 2);
    REQUIRE(rows.size() == 2);
    CHECK(rows[1].ratio >= 1.7);
  }
  SECTION("csv output and input validation") {
    const fs::path out = fs::temp_directory_path() / "study.csv";
    manufactured_study("interpolation", 2, out.string());
    CHECK(slurp(out).rfind("level,elements,h,value,ratio,extra\n", 0) == 0);
    CHECK_THROWS_AS(manufactured_study("interpolation", 1), std::invalid_argument);
    CHECK_THROWS_AS(manufactured_study("nope", 2), std::invalid_argument);
  }
}
