#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "bilayer/flow.hpp"
#include "bilayer/oracle.hpp"

namespace bilayer {

/// Full description of a simulation run: domain, mesh, curvature, boundary
/// conditions, flow parameters and output policy. Presets encode the
/// reference experiments; `custom` expects an explicit config file.
struct ScenarioConfig {
  std::string scenario = "custom";
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  int nx = 16, ny = 16;
  int degree = 2;

  Mat2 z_constant = Mat2::Zero();
  bool z_by_region = false;
  Mat2 z_region0 = Mat2::Zero(), z_region1 = Mat2::Zero();
  double alpha = 1.0;  // climate opening parameter, Z = diag(0, alpha)

  std::string bc = "free";          // "clamped" or "free"
  std::string clamp_side = "left";  // left | right | bottom | top | all

  bool has_crease = false;
  std::array<Vec2, 3> crease_pts{Vec2(0, 0), Vec2(0, 0), Vec2(0, 0)};
  int subdiv = 8;  // climate triangle subdivision depth

  FlowConfig flow;
  std::string out_dir = ".";
  int cadence = 0;  // snapshot every m steps; 0 disables intermediate snapshots
  int threads = 1;
  bool deterministic = true;
};

inline ScenarioConfig scenario_preset(const std::string& name) {
  ScenarioConfig c;
  c.scenario = name;
  if (name == "flat") {
    c.xmin = -5, c.xmax = 5, c.ymin = -2, c.ymax = 2;
    c.nx = 32, c.ny = 8;
    c.bc = "clamped";
    c.clamp_side = "left";
    c.z_constant = Mat2::Zero();
    c.flow.tau = 5e-3;
    c.flow.tol = 1e-4;
  } else if (name == "cylinder") {
    c.xmin = -5, c.xmax = 5, c.ymin = -2, c.ymax = 2;
    c.nx = 32, c.ny = 8;  // 256 elements
    c.bc = "clamped";
    c.clamp_side = "left";
    c.z_constant = Mat2::Identity();
    c.flow.tau = 5e-3;
    c.flow.tol = 1e-4;
  } else if (name == "cigar") {
    c.xmin = -5, c.xmax = 5, c.ymin = -2, c.ymax = 2;
    c.nx = 64, c.ny = 16;  // 1024 elements
    c.bc = "free";
    c.z_constant << 3, -2, -2, 3;
    c.flow.tau = 5e-3;
    c.flow.tol = 1e-4;
    c.flow.l2_weight = 1.0;
  } else if (name == "helix") {
    c.xmin = -8, c.xmax = 8, c.ymin = -0.5, c.ymax = 0.5;
    c.nx = 128, c.ny = 8;  // 1024 square cells
    c.bc = "free";
    c.z_constant << 1, -1.5, -1.5, 1;
    c.flow.tau = 1e-2;
    c.flow.tol = 1e-4;
    c.flow.l2_weight = 1.0;
  } else if (name == "climate") {
    c.bc = "clamped";
    c.clamp_side = "bottom";
    c.alpha = 1.0;
    c.subdiv = 8;
    c.flow.tau = 1.0;
    c.flow.tol = 1e-4;
  } else if (name == "origami") {
    c.xmin = 0, c.xmax = 9.6, c.ymin = 0, c.ymax = 15;
    c.nx = 12, c.ny = 18;
    c.bc = "free";
    c.has_crease = true;
    c.crease_pts = {Vec2(0, 2), Vec2(9.6, 2), Vec2(4.8, 6)};
    c.z_by_region = true;
    c.z_region0 << 0, 0, 0, 0.5;
    c.z_region1 << 0, 0, 0, -0.5;
    c.flow.tau = 1e-2;
    c.flow.tol = 1e-4;
    c.flow.l2_weight = 1.0;
    c.flow.lifting.mode = LiftingConfig::Mode::crease;
  } else if (name != "custom") {
    throw std::invalid_argument("unknown scenario preset '" + name + "'");
  }
  return c;
}

namespace detail {

inline bool parse_kv(ScenarioConfig& c, const std::string& key, const std::string& val) {
  const auto d = [&] { return std::stod(val); };
  const auto i = [&] { return std::stoi(val); };
  if (key == "scenario") c.scenario = val;
  else if (key == "xmin") c.xmin = d();
  else if (key == "xmax") c.xmax = d();
  else if (key == "ymin") c.ymin = d();
  else if (key == "ymax") c.ymax = d();
  else if (key == "nx") c.nx = i();
  else if (key == "ny") c.ny = i();
  else if (key == "degree") c.degree = i();
  else if (key == "z11") c.z_constant(0, 0) = d();
  else if (key == "z12") { c.z_constant(0, 1) = d(); c.z_constant(1, 0) = d(); }
  else if (key == "z22") c.z_constant(1, 1) = d();
  else if (key == "z0_11") { c.z_by_region = true; c.z_region0(0, 0) = d(); }
  else if (key == "z0_12") { c.z_by_region = true; c.z_region0(0, 1) = c.z_region0(1, 0) = d(); }
  else if (key == "z0_22") { c.z_by_region = true; c.z_region0(1, 1) = d(); }
  else if (key == "z1_11") { c.z_by_region = true; c.z_region1(0, 0) = d(); }
  else if (key == "z1_12") { c.z_by_region = true; c.z_region1(0, 1) = c.z_region1(1, 0) = d(); }
  else if (key == "z1_22") { c.z_by_region = true; c.z_region1(1, 1) = d(); }
  else if (key == "alpha") c.alpha = d();
  else if (key == "bc") c.bc = val;
  else if (key == "clamp_side") c.clamp_side = val;
  else if (key == "crease") c.has_crease = (val == "1" || val == "true");
  else if (key == "crease_x0") c.crease_pts[0][0] = d();
  else if (key == "crease_y0") c.crease_pts[0][1] = d();
  else if (key == "crease_x1") c.crease_pts[1][0] = d();
  else if (key == "crease_y1") c.crease_pts[1][1] = d();
  else if (key == "crease_xa") c.crease_pts[2][0] = d();
  else if (key == "crease_ya") c.crease_pts[2][1] = d();
  else if (key == "subdiv") c.subdiv = i();
  else if (key == "tau") c.flow.tau = d();
  else if (key == "tol") c.flow.tol = d();
  else if (key == "max_steps") c.flow.max_steps = i();
  else if (key == "gamma0") c.flow.gamma0 = d();
  else if (key == "gamma1") c.flow.gamma1 = d();
  else if (key == "l2_weight") c.flow.l2_weight = d();
  else if (key == "cg_rel_tol") c.flow.cg_rel_tol = d();
  else if (key == "cg_max_iters") c.flow.cg_max_iters = i();
  else if (key == "lift_l1") c.flow.lifting.l1 = i();
  else if (key == "lift_l2") c.flow.lifting.l2 = i();
  else if (key == "defect_budget") c.flow.defect_budget = d();
  else if (key == "out") c.out_dir = val;
  else if (key == "cadence") c.cadence = i();
  else if (key == "threads") c.threads = i();
  else if (key == "deterministic") c.deterministic = (val == "1" || val == "true");
  else return false;
  return true;
}

inline std::pair<std::string, std::string> split_kv(const std::string& line) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) return {"", ""};
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  return {trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
}

}  // namespace detail

/// Parses the key = value config format; `# ...` lines are comments. The
/// `scenario` key may name a preset whose fields the file then overrides.
inline ScenarioConfig parse_config(std::istream& in, const std::string& filename = "<config>") {
  // First pass: find the scenario to seed the preset defaults.
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  ScenarioConfig cfg;
  for (const std::string& line : lines) {
    const auto [k, v] = detail::split_kv(line);
    if (k == "scenario") cfg = scenario_preset(v);
  }
  int lineno = 0;
  for (const std::string& raw : lines) {
    ++lineno;
    std::string line = raw;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto [k, v] = detail::split_kv(line);
    if (k.empty())
      throw std::invalid_argument(filename + ":" + std::to_string(lineno) +
                                  ": expected key = value");
    try {
      if (!detail::parse_kv(cfg, k, v))
        throw std::invalid_argument("unknown key '" + k + "'");
    } catch (const std::exception& e) {
      throw std::invalid_argument(filename + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

inline void apply_override(ScenarioConfig& cfg, const std::string& assignment) {
  const auto [k, v] = detail::split_kv(assignment);
  if (k.empty() || !detail::parse_kv(cfg, k, v))
    throw std::invalid_argument("bad override '" + assignment + "'");
}

/// Everything a live run needs, with ownership: mesh, space, fields.
struct ScenarioSetup {
  std::unique_ptr<Mesh> mesh;
  std::unique_ptr<DGSpace> space;
  SpontaneousCurvature Z;
  std::unique_ptr<DGField> initial;
  FlowConfig flow;
};

inline EdgePredicate clamp_predicate(const ScenarioConfig& c) {
  const double tol = 1e-9 * std::max(c.xmax - c.xmin, c.ymax - c.ymin);
  const double xmin = c.xmin, xmax = c.xmax, ymin = c.ymin, ymax = c.ymax;
  if (c.clamp_side == "left")
    return [=](const Vec2& a, const Vec2& b) {
      return std::abs(a[0] - xmin) < tol && std::abs(b[0] - xmin) < tol;
    };
  if (c.clamp_side == "right")
    return [=](const Vec2& a, const Vec2& b) {
      return std::abs(a[0] - xmax) < tol && std::abs(b[0] - xmax) < tol;
    };
  if (c.clamp_side == "bottom")
    return [=](const Vec2& a, const Vec2& b) {
      return std::abs(a[1] - ymin) < tol && std::abs(b[1] - ymin) < tol;
    };
  if (c.clamp_side == "top")
    return [=](const Vec2& a, const Vec2& b) {
      return std::abs(a[1] - ymax) < tol && std::abs(b[1] - ymax) < tol;
    };
  if (c.clamp_side == "all") return [](const Vec2&, const Vec2&) { return true; };
  throw std::invalid_argument("unknown clamp_side '" + c.clamp_side + "'");
}

inline ScenarioSetup build_scenario(const ScenarioConfig& c) {
  ScenarioSetup s;
  const bool clamped = c.bc == "clamped";
  if (c.scenario == "climate") {
    const std::array<Vec2, 3> tri = {Vec2(0, 0), Vec2(1, 0), Vec2(0.5, std::sqrt(3.0) / 2.0)};
    ScenarioConfig cc = c;
    cc.xmin = 0, cc.xmax = 1, cc.ymin = 0, cc.ymax = 1;
    s.mesh = std::make_unique<Mesh>(
        build_tri_quad_mesh(tri, c.subdiv, clamped ? clamp_predicate(cc) : EdgePredicate{}));
  } else if (c.has_crease) {
    s.mesh = std::make_unique<Mesh>(
        build_crease_mesh(c.xmin, c.xmax, c.ymin, c.ymax, c.crease_pts, c.nx, c.ny));
  } else {
    s.mesh = std::make_unique<Mesh>(build_rect_mesh(c.xmin, c.xmax, c.ymin, c.ymax, c.nx, c.ny,
                                                    clamped ? clamp_predicate(c) : EdgePredicate{}));
  }
  s.space = std::make_unique<DGSpace>(*s.mesh, c.degree);
  if (c.scenario == "climate") {
    Mat2 z = Mat2::Zero();
    z(1, 1) = c.alpha;
    s.Z = SpontaneousCurvature::constant(*s.mesh, z);
  } else if (c.z_by_region) {
    s.Z = SpontaneousCurvature::by_region(*s.mesh, {c.z_region0, c.z_region1});
  } else {
    s.Z = SpontaneousCurvature::constant(*s.mesh, c.z_constant);
  }
  s.flow = c.flow;
  if (c.has_crease) s.flow.lifting.mode = LiftingConfig::Mode::crease;
  if (!clamped && s.flow.l2_weight == 0.0) s.flow.l2_weight = 1.0;  // kernel fix
  if (clamped) {
    s.initial = std::make_unique<DGField>(flat_plate_field(*s.space));
  } else {
    s.initial = std::make_unique<DGField>(
        interpolate(*s.space, [](const Vec2& x) { return Vec3(x[0], x[1], 0.0); }));
  }
  return s;
}

/// Legacy-VTK export of the deformed surface. Every element is written as an
/// independent quadratic quad (no node merging: the fields are broken), with
/// the barycentric isometry defect and the material region as cell data.
inline void export_surface(const DGField& y, const std::string& path) {
  const DGSpace& sp = y.space();
  const Mesh& mesh = sp.mesh();
  std::ofstream os(path);
  if (!os) throw std::runtime_error("export_surface: cannot open " + path);
  static const std::array<Vec2, 8> ref = {Vec2(0, 0), Vec2(1, 0),   Vec2(1, 1),  Vec2(0, 1),
                                          Vec2(0.5, 0), Vec2(1, 0.5), Vec2(0.5, 1), Vec2(0, 0.5)};
  const DefectReport defect = isometry_defect(y);
  os << "# vtk DataFile Version 3.0\ndeformed surface\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  os << "POINTS " << 8 * mesh.n_elements() << " double\n";
  char buf[128];
  for (int e = 0; e < mesh.n_elements(); ++e)
    for (const Vec2& r : ref) {
      const Vec3 p = y.value(e, r);
      std::snprintf(buf, sizeof buf, "%.12g %.12g %.12g\n", p[0], p[1], p[2]);
      os << buf;
    }
  os << "CELLS " << mesh.n_elements() << " " << 9 * mesh.n_elements() << "\n";
  for (int e = 0; e < mesh.n_elements(); ++e) {
    os << 8;
    for (int i = 0; i < 8; ++i) os << " " << 8 * e + i;
    os << "\n";
  }
  os << "CELL_TYPES " << mesh.n_elements() << "\n";
  for (int e = 0; e < mesh.n_elements(); ++e) os << "23\n";
  os << "CELL_DATA " << mesh.n_elements() << "\nSCALARS defect double 1\nLOOKUP_TABLE default\n";
  for (int e = 0; e < mesh.n_elements(); ++e) {
    std::snprintf(buf, sizeof buf, "%.12g\n", defect.per_element[e]);
    os << buf;
  }
  os << "SCALARS region int 1\nLOOKUP_TABLE default\n";
  for (int e = 0; e < mesh.n_elements(); ++e) os << mesh.region[e] << "\n";
}

// Binary state file: magic + version header, then the mesh and coefficients.
namespace detail {
constexpr char kStateMagic[8] = {'B', 'L', 'Y', 'R', 'S', 'T', '0', '1'};

template <class T>
void write_pod(std::ostream& os, const T& v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T read_pod(std::istream& is) {
  static_assert(std::is_trivially_copyable_v<T>);
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("state file truncated");
  return v;
}
}  // namespace detail

inline void save_state(const DGField& y, const std::string& path) {
  using detail::write_pod;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_state: cannot open " + path);
  os.write(detail::kStateMagic, sizeof detail::kStateMagic);
  const Mesh& m = y.space().mesh();
  write_pod(os, static_cast<uint32_t>(1));  // version
  write_pod(os, static_cast<uint8_t>(m.curved));
  write_pod(os, m.domain_area);
  write_pod(os, static_cast<uint64_t>(m.n_vertices()));
  for (const Vec2& v : m.vertices) { write_pod(os, v[0]); write_pod(os, v[1]); }
  write_pod(os, static_cast<uint64_t>(m.n_elements()));
  for (int e = 0; e < m.n_elements(); ++e) {
    for (int c : m.elements[e]) write_pod(os, static_cast<int32_t>(c));
    write_pod(os, static_cast<int32_t>(m.region[e]));
    write_pod(os, static_cast<int32_t>(m.maps[e].order));
    for (const Vec2& n : m.maps[e].nodes) { write_pod(os, n[0]); write_pod(os, n[1]); }
    for (int l = 0; l < 4; ++l) write_pod(os, static_cast<int32_t>(m.element_edges[e][l]));
  }
  write_pod(os, static_cast<uint64_t>(m.n_edges()));
  for (const Edge& ed : m.edges) {
    for (int v : ed.v) write_pod(os, static_cast<int32_t>(v));
    for (int e : ed.elem) write_pod(os, static_cast<int32_t>(e));
    for (int l : ed.local) write_pod(os, static_cast<int32_t>(l));
    write_pod(os, static_cast<uint8_t>(ed.flip[0]));
    write_pod(os, static_cast<uint8_t>(ed.flip[1]));
    write_pod(os, static_cast<uint8_t>(static_cast<int>(ed.cls)));
    write_pod(os, static_cast<uint8_t>(ed.crease));
    write_pod(os, static_cast<uint8_t>(ed.curved));
    for (const Vec2& g : ed.geom) { write_pod(os, g[0]); write_pod(os, g[1]); }
    write_pod(os, ed.normal[0]);
    write_pod(os, ed.normal[1]);
    write_pod(os, ed.normal_sign);
    write_pod(os, ed.diameter);
  }
  write_pod(os, static_cast<uint32_t>(y.space().degree()));
  write_pod(os, static_cast<uint64_t>(y.coeffs().size()));
  os.write(reinterpret_cast<const char*>(y.coeffs().data()),
           static_cast<std::streamsize>(sizeof(double) * y.coeffs().size()));
}

struct LoadedState {
  std::unique_ptr<Mesh> mesh;
  std::unique_ptr<DGSpace> space;
  std::unique_ptr<DGField> y;
};

inline LoadedState load_state(const std::string& path) {
  using detail::read_pod;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_state: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, detail::kStateMagic, 8) != 0)
    throw std::runtime_error("load_state: not a state file");
  const auto version = read_pod<uint32_t>(is);
  if (version != 1) throw std::runtime_error("load_state: unsupported version");
  LoadedState out;
  out.mesh = std::make_unique<Mesh>();
  Mesh& m = *out.mesh;
  m.curved = read_pod<uint8_t>(is) != 0;
  m.domain_area = read_pod<double>(is);
  const auto nv = read_pod<uint64_t>(is);
  m.vertices.resize(nv);
  for (auto& v : m.vertices) { v[0] = read_pod<double>(is); v[1] = read_pod<double>(is); }
  const auto ne = read_pod<uint64_t>(is);
  m.elements.resize(ne);
  m.region.resize(ne);
  m.maps.resize(ne);
  m.element_edges.resize(ne);
  for (uint64_t e = 0; e < ne; ++e) {
    for (int c = 0; c < 4; ++c) m.elements[e][c] = read_pod<int32_t>(is);
    m.region[e] = read_pod<int32_t>(is);
    m.maps[e].order = read_pod<int32_t>(is);
    for (auto& n : m.maps[e].nodes) { n[0] = read_pod<double>(is); n[1] = read_pod<double>(is); }
    for (int l = 0; l < 4; ++l) m.element_edges[e][l] = read_pod<int32_t>(is);
  }
  const auto ned = read_pod<uint64_t>(is);
  m.edges.resize(ned);
  for (auto& ed : m.edges) {
    for (auto& v : ed.v) v = read_pod<int32_t>(is);
    for (auto& e : ed.elem) e = read_pod<int32_t>(is);
    for (auto& l : ed.local) l = read_pod<int32_t>(is);
    ed.flip[0] = read_pod<uint8_t>(is) != 0;
    ed.flip[1] = read_pod<uint8_t>(is) != 0;
    ed.cls = static_cast<EdgeClass>(read_pod<uint8_t>(is));
    ed.crease = read_pod<uint8_t>(is) != 0;
    ed.curved = read_pod<uint8_t>(is) != 0;
    for (auto& g : ed.geom) { g[0] = read_pod<double>(is); g[1] = read_pod<double>(is); }
    ed.normal[0] = read_pod<double>(is);
    ed.normal[1] = read_pod<double>(is);
    ed.normal_sign = read_pod<double>(is);
    ed.diameter = read_pod<double>(is);
  }
  m.rebuild_after_load();
  const auto degree = read_pod<uint32_t>(is);
  out.space = std::make_unique<DGSpace>(m, static_cast<int>(degree));
  out.y = std::make_unique<DGField>(*out.space);
  const auto ncoef = read_pod<uint64_t>(is);
  if (static_cast<int64_t>(ncoef) != out.y->coeffs().size())
    throw std::runtime_error("load_state: coefficient count mismatch");
  is.read(reinterpret_cast<char*>(out.y->coeffs().data()),
          static_cast<std::streamsize>(sizeof(double) * ncoef));
  if (!is) throw std::runtime_error("load_state: truncated coefficients");
  return out;
}

struct ScenarioReport {
  int steps = 0;
  double final_energy = 0.0;   // bending - cubic, as streamed to energies.csv
  double final_bending = 0.0;
  double final_cubic = 0.0;
  double mismatch_energy = 0.0;  // final_energy + half the squared-curvature integral
  double max_defect = 0.0;
  bool stopped_by_tolerance = false;
  std::string out_dir;
};

/// Runs a configured scenario and writes energies.csv, VTK snapshots, and the
/// final state into the output directory.
inline ScenarioReport run_scenario(const ScenarioConfig& cfg) {
  namespace fs = std::filesystem;
  ScenarioSetup setup = build_scenario(cfg);
  fs::create_directories(cfg.out_dir);
  const fs::path dir(cfg.out_dir);

  std::ofstream csv(dir / "energies.csv");
  if (!csv) throw std::runtime_error("run_scenario: cannot write to " + cfg.out_dir);
  csv << "step,E_h,B_h,C_h,max_defect,increment_norm,cg_iters,wall_ms\n";
  char buf[256];
  const auto log_record = [&](const StepRecord& r) {
    std::snprintf(buf, sizeof buf, "%d,%.12g,%.12g,%.12g,%.12g,%.12g,%d,%.6g\n", r.step,
                  r.energy, r.bending, r.cubic, r.max_defect, r.increment_norm, r.cg_iters,
                  r.wall_ms);
    csv << buf;
    csv.flush();
  };
  const auto snapshot_name = [&](int step) {
    std::snprintf(buf, sizeof buf, "snapshot_%06d.vtk", step);
    return dir / buf;
  };

  FlowDriver driver(*setup.space, setup.Z, setup.flow);
  bool logged_initial = false;
  const FlowDriver::Callback cb = [&](const FlowState& st, const StepRecord& r) {
    if (!logged_initial) {
      log_record(st.history.front());
      if (cfg.cadence > 0) export_surface(st.y, snapshot_name(0).string());
      logged_initial = true;
    }
    log_record(r);
    if (cfg.cadence > 0 && r.step % cfg.cadence == 0)
      export_surface(st.y, snapshot_name(r.step).string());
  };
  FlowState st = driver.run(*setup.initial, cb);
  if (!logged_initial) log_record(st.history.front());  // zero-step run

  export_surface(st.y, (dir / "final_surface.vtk").string());
  save_state(st.y, (dir / "final_state.bin").string());
  setup.mesh->write_vtk((dir / "mesh.vtk").string());

  ScenarioReport rep;
  rep.steps = st.step;
  const StepRecord& last = st.history.back();
  rep.final_energy = last.energy;
  rep.final_bending = last.bending;
  rep.final_cubic = last.cubic;
  rep.mismatch_energy = last.energy + curvature_energy_offset(*setup.mesh, setup.Z);
  rep.max_defect = last.max_defect;
  rep.stopped_by_tolerance = st.stopped_by_tolerance;
  rep.out_dir = cfg.out_dir;
  return rep;
}

struct StudyRow {
  int level = 0;
  int elements = 0;
  double h = 0.0;
  double value = 0.0;
  double ratio = 0.0;  // previous level's value / this one (when meaningful)
  double extra = 0.0;
};

/// Refinement and solver-scaling studies used by the verification suite.
/// kinds: hessian_convergence | interpolation | cg_scaling
inline std::vector<StudyRow> manufactured_study(const std::string& kind, int levels,
                                                const std::string& out_csv = "") {
  if (levels < 2) throw std::invalid_argument("manufactured_study: need levels >= 2");
  std::vector<StudyRow> rows;

  const auto f = [](const Vec2& x) { return Vec3(std::sin(x[0]), x[0] * x[1], std::cos(x[1])); };
  const auto grad_f = [](const Vec2& x) {
    Mat32 g;
    g << std::cos(x[0]), 0.0, x[1], x[0], 0.0, -std::sin(x[1]);
    return g;
  };
  const auto hess_f = [](const Vec2& x) {
    std::array<Mat2, 3> H{Mat2::Zero(), Mat2::Zero(), Mat2::Zero()};
    H[0](0, 0) = -std::sin(x[0]);
    H[1](0, 1) = H[1](1, 0) = 1.0;
    H[2](1, 1) = -std::cos(x[1]);
    return H;
  };

  if (kind == "hessian_convergence" || kind == "interpolation") {
    for (int l = 0; l < levels; ++l) {
      const int n = 8 << l;
      const Mesh mesh = build_rect_mesh(0, 1, 0, 1, n, n,
                                        [](const Vec2&, const Vec2&) { return true; });
      const DGSpace space(mesh, 2);
      BoundaryData data{f, grad_f};
      const DGField v = interpolate(space, f, data);
      StudyRow row;
      row.level = l;
      row.elements = mesh.n_elements();
      row.h = mesh.h_max();
      double err2 = 0.0;
      if (kind == "hessian_convergence") {
        const HessianOperator op(space);
        const DiscreteHessian H = op(v);
        const int nq = space.cell_rule().size();
        for (int e = 0; e < mesh.n_elements(); ++e) {
          const auto& c = space.cell(e);
          for (int q = 0; q < nq; ++q) {
            const auto Hex = hess_f(c.xphys[q]);
            for (int comp = 0; comp < 3; ++comp)
              err2 += c.wdet[q] * (H.at_qpts[e * nq + q][comp] - Hex[comp]).squaredNorm();
          }
        }
      } else {
        const int nq = space.cell_rule().size();
        const int npe = space.npe();
        for (int e = 0; e < mesh.n_elements(); ++e) {
          const auto& c = space.cell(e);
          for (int q = 0; q < nq; ++q) {
            const Vec3 diff = v.value_from(e, &c.at.value[q * npe]) - f(c.xphys[q]);
            err2 += c.wdet[q] * diff.squaredNorm();
          }
        }
      }
      row.value = std::sqrt(err2);
      row.ratio = rows.empty() ? 0.0 : rows.back().value / row.value;
      rows.push_back(row);
    }
  } else if (kind == "cg_scaling") {
    for (int l = 0; l < levels; ++l) {
      const int nx = 16 << l, ny = 4 << l;
      ScenarioConfig c = scenario_preset("cylinder");
      c.nx = nx;
      c.ny = ny;
      ScenarioSetup setup = build_scenario(c);
      FlowDriver driver(*setup.space, setup.Z, setup.flow);
      FlowState st = driver.make_state(*setup.initial);
      const SaddleSystem sys = driver.assemble_step(st);
      const StepSolution sol = driver.solve_step(sys);
      const auto spec = oracle::lanczos_extremal(
          [&](const Eigen::VectorXd& mu) { return sys.apply_schur(mu); },
          sys.multiplier_dim());
      StudyRow row;
      row.level = l;
      row.elements = setup.mesh->n_elements();
      row.h = setup.mesh->h_min();
      row.value = sol.cg_iters;
      row.ratio = rows.empty() ? 0.0 : row.value / rows.back().value;
      row.extra = spec.condition;
      rows.push_back(row);
    }
  } else {
    throw std::invalid_argument("manufactured_study: unknown kind '" + kind + "'");
  }

  if (!out_csv.empty()) {
    std::ofstream os(out_csv);
    os << "level,elements,h,value,ratio,extra\n";
    char buf[192];
    for (const StudyRow& r : rows) {
      std::snprintf(buf, sizeof buf, "%d,%d,%.12g,%.12g,%.12g,%.12g\n", r.level, r.elements,
                    r.h, r.value, r.ratio, r.extra);
      os << buf;
    }
  }
  return rows;
}

}  // namespace bilayer
