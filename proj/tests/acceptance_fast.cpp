// Fast verification suite: one pass/fail line per criterion, nonzero exit on
// any failure. Every tolerance is pinned here, in code.

#include <cstdarg>
#include <cstdio>
#include <memory>
#include <optional>
#include <random>
#include <string>

#include "bilayer/flow.hpp"
#include "bilayer/oracle.hpp"
#include "bilayer/scenarios.hpp"

using namespace bilayer;

namespace {

int g_failed = 0;

void report(int num, const std::string& name, bool ok, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s (%s)\n", ok ? "PASS" : "FAIL", num, name.c_str(),
              detail.c_str());
  if (!ok) ++g_failed;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

const EdgePredicate left_of = [](const Vec2& a, const Vec2& b) {
  return std::abs(a[0] + 5) < 1e-9 && std::abs(b[0] + 5) < 1e-9;
};
const EdgePredicate everywhere = [](const Vec2&, const Vec2&) { return true; };

DGField random_field(const DGSpace& sp, unsigned seed, double scale = 1.0) {
  DGField f(sp);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> unif(-scale, scale);
  for (int i = 0; i < sp.total_dofs(); ++i) f.coeffs()[i] = unif(rng);
  return f;
}

// A 32-element clamped plate with isotropic curvature, run for a fixed number
// of steps; the bundle keeps the mesh and space alive with the state.
struct CylinderRun {
  std::unique_ptr<Mesh> mesh;
  std::unique_ptr<DGSpace> space;
  std::optional<FlowState> state;
};

CylinderRun cylinder_run(int steps, double tau) {
  CylinderRun r;
  r.mesh = std::make_unique<Mesh>(build_rect_mesh(-5, 5, -2, 2, 8, 4, left_of));
  r.space = std::make_unique<DGSpace>(*r.mesh, 2);
  FlowConfig cfg;
  cfg.tau = tau;
  cfg.tol = 0.0;
  cfg.max_steps = steps;
  FlowDriver driver(*r.space, SpontaneousCurvature::constant(*r.mesh, Mat2::Identity()), cfg);
  r.state.emplace(driver.run(flat_plate_field(*r.space)));
  return r;
}

void criterion1_flat_neutrality() {
  const Mesh m = build_rect_mesh(-5, 5, -2, 2, 8, 4, left_of);
  const DGSpace sp(m, 2);
  FlowConfig cfg;
  cfg.tau = 5e-3;
  cfg.tol = 1e-4;
  FlowDriver driver(sp, SpontaneousCurvature::zero(m), cfg);
  const FlowState st = driver.run(flat_plate_field(sp));
  const double E = energy_report(st.y, SpontaneousCurvature::zero(m), driver.hessian_op()).total;
  const double dy = st.history.back().increment_norm;
  const bool ok = std::abs(E) <= 1e-12 && st.step == 1 && dy <= 1e-9;
  report(1, "flat-state neutrality", ok,
         fmt("E_h = %.3e, steps = %d, |dy| = %.3e", E, st.step, dy));
}

void criterion2_hessian_consistency() {
  const Mesh m = build_rect_mesh(0, 1, 0, 1, 4, 4, everywhere);
  const DGSpace sp(m, 2);
  const HessianOperator op(sp);
  const auto g = [](const Vec2& x) {
    return Vec3(x[0] * x[0], x[0] * x[1], x[1] * x[1] - x[0]);
  };
  const auto gg = [](const Vec2& x) {
    Mat32 G;
    G << 2 * x[0], 0, x[1], x[0], -1, 2 * x[1];
    return G;
  };
  const DGField v = interpolate(sp, g, BoundaryData{g, gg});
  const DiscreteHessian H = op(v);
  const int nq = sp.cell_rule().size();
  const int npe = sp.npe();
  double worst = 0.0;
  for (int e = 0; e < m.n_elements(); ++e) {
    const auto& c = sp.cell(e);
    for (int q = 0; q < nq; ++q)
      for (int comp = 0; comp < 3; ++comp) {
        Mat2 broken = Mat2::Zero();
        for (int mm = 0; mm < npe; ++mm)
          broken += v.coeff(comp, e, mm) * c.at.hess[q * npe + mm];
        worst = std::max(worst, (H.at_qpts[e * nq + q][comp] - broken).norm());
      }
  }
  const Mesh mc = build_rect_mesh(-5, 5, -2, 2, 8, 4, left_of);
  const DGSpace spc(mc, 2);
  const HessianOperator opc(spc);
  const DiscreteHessian Hflat = opc(flat_plate_field(spc));
  double flat_sup = 0.0;
  for (const auto& hv : Hflat.at_qpts)
    for (int comp = 0; comp < 3; ++comp) flat_sup = std::max(flat_sup, hv[comp].norm());
  const bool ok = worst < 1e-11 && flat_sup < 1e-12;
  report(2, "discrete-Hessian consistency", ok,
         fmt("max |H - D2| = %.3e, flat sup = %.3e", worst, flat_sup));
}

void criterion3_hessian_convergence() {
  const auto rows = manufactured_study("hessian_convergence", 3);
  const bool ok = rows[1].ratio >= 1.7 && rows[2].ratio >= 1.7;
  report(3, "Hessian convergence under refinement", ok,
         fmt("ratios = %.3f, %.3f (need >= 1.7)", rows[1].ratio, rows[2].ratio));
}

void criterion4_variation_oracles() {
  const Mesh m = build_rect_mesh(0, 1, 0, 1, 3, 3, everywhere);
  const DGSpace sp(m, 2);
  const HessianOperator op(sp);
  const SpontaneousCurvature Z =
      SpontaneousCurvature::constant(m, (Mat2() << 1, -0.5, -0.5, 2).finished());
  double worst_ell = 0.0, worst_a = 0.0;
  for (unsigned seed = 0; seed < 10; ++seed) {
    const DGField y = random_field(sp, 100 + seed), v = random_field(sp, 200 + seed);
    const double ell = ell_form(y, v, Z, op);
    const double fd_c = oracle::fd_variation(
        [&](const DGField& f) { return cubic_energy(f, op, Z); }, y, v, 1e-5);
    worst_ell = std::max(worst_ell, std::abs(ell - fd_c) / (1.0 + std::abs(ell)));
    const double a = a_form(y, v, op);
    const double fd_b = oracle::fd_variation(
        [&](const DGField& f) { return bending_energy(f, op); }, y, v, 1e-5);
    worst_a = std::max(worst_a, std::abs(a - fd_b) / (1.0 + std::abs(a)));
  }
  const bool ok = worst_ell < 1e-6 && worst_a < 1e-6;
  report(4, "assembled variations match finite differences", ok,
         fmt("rel err: cubic %.3e, bending %.3e over 20 pairs", worst_ell, worst_a));
}

void criterion5_matrix_lemma() {
  std::mt19937 rng(5150);
  std::uniform_real_distribution<double> unif(-2, 2);
  double worst_res = 0.0;
  bool bounds = true;
  int tested = 0;
  while (tested < 1000) {
    Mat32 B;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 2; ++j) B(i, j) = unif(rng);
    const Mat2 G = B.transpose() * B;
    const double tr = G.trace();
    const double disc = std::sqrt(std::max(0.0, tr * tr - 4 * G.determinant()));
    if (std::sqrt(std::max(0.0, 0.5 * (tr - disc))) < 0.1) continue;
    Mat2 C;
    const double a = unif(rng), b = unif(rng), c = unif(rng);
    C << a, c, c, b;
    const auto r = oracle::solve_matrix_equation(B, C);
    worst_res = std::max(worst_res, r.residual);
    bounds = bounds && r.bound_holds;
    ++tested;
  }
  const bool ok = worst_res < 1e-12 && bounds;
  report(5, "matrix-equation lemma", ok,
         fmt("max residual = %.3e over 1000 draws, bounds %s", worst_res,
             bounds ? "hold" : "violated"));
}

void criterion6_midpoint_exactness() {
  const Mesh m = build_rect_mesh(-5, 5, -2, 2, 8, 4);
  const DGSpace sp(m, 2);
  std::mt19937 rng(66);
  std::uniform_real_distribution<double> unif(-2, 2);
  double mid = 0.0, ref = 0.0;
  for (int e = 0; e < m.n_elements(); ++e) {
    const double a = unif(rng);
    const Vec2 b(unif(rng), unif(rng));
    mid += m.area(e) * (a + b.dot(m.barycenter(e)));
    const auto& c = sp.cell(e);
    for (std::size_t q = 0; q < c.wdet.size(); ++q) ref += c.wdet[q] * (a + b.dot(c.xphys[q]));
  }
  const double err = std::abs(mid - ref) / (1.0 + std::abs(ref));
  report(6, "midpoint quadrature exactness on affine integrands", err < 1e-13,
         fmt("relative error = %.3e", err));
}

void criterion7_monotonicity(const FlowState& st) {
  bool mono = true, tang = true;
  double worst_tangency = 0.0;
  for (std::size_t i = 1; i < st.history.size(); ++i) {
    const double before = st.history[i - 1].energy;
    if (st.history[i].energy > before + 1e-8 * (1.0 + std::abs(before))) mono = false;
    worst_tangency = std::max(worst_tangency, st.history[i].tangency);
    if (st.history[i].tangency > 10 * 1e-8) tang = false;
  }
  report(7, "per-step energy monotonicity and tangency", mono && tang,
         fmt("500 steps, monotone %s, max tangency %.3e", mono ? "yes" : "no", worst_tangency));
}

void criterion8_defect_scaling() {
  const double taus[3] = {1e-2, 5e-3, 2.5e-3};
  double defect[3];
  for (int i = 0; i < 3; ++i) {
    const CylinderRun run = cylinder_run(static_cast<int>(std::lround(1.0 / taus[i])), taus[i]);
    defect[i] = run.state->history.back().max_defect;
  }
  const double r1 = defect[0] / defect[1], r2 = defect[1] / defect[2];
  const bool ok = defect[0] > defect[1] && defect[1] > defect[2] && r1 >= 1.5 && r1 <= 2.7 &&
                  r2 >= 1.5 && r2 <= 2.7;
  report(8, "defect decreases linearly in the step size", ok,
         fmt("defects %.3e / %.3e / %.3e, halving ratios %.2f, %.2f", defect[0], defect[1],
             defect[2], r1, r2));
}

void criterion9_pointwise_bounds(const FlowState& st) {
  report(9, "pointwise constraint bounds on every iterate",
         st.pointwise_bound_violations == 0,
         fmt("%d violations over %d steps", st.pointwise_bound_violations, st.step));
}

void criterion10_crease_mode() {
  const std::array<Vec2, 3> crease = {Vec2(0, 2), Vec2(9.6, 2), Vec2(4.8, 6)};
  const Mesh m = build_crease_mesh(0, 9.6, 0, 15, crease, 6, 9);
  const DGSpace sp(m, 2);
  Eigen::Matrix3d V;
  Eigen::Vector3d rhs;
  for (int i = 0; i < 3; ++i) {
    V(i, 0) = crease[i][0] * crease[i][0];
    V(i, 1) = crease[i][0];
    V(i, 2) = 1.0;
    rhs[i] = crease[i][1];
  }
  const Eigen::Vector3d cc = V.fullPivLu().solve(rhs);
  const auto s = [&](const Vec2& x) {
    return x[1] - (cc[0] * x[0] * x[0] + cc[1] * x[0] + cc[2]);
  };
  const DGField v =
      interpolate(sp, [&](const Vec2& x) { return Vec3(0, 0, std::max(s(x), 0.0)); });
  const HessianOperator op_std(sp);
  LiftingConfig ccfg;
  ccfg.mode = LiftingConfig::Mode::crease;
  const HessianOperator op_crease(sp, ccfg);
  const DiscreteHessian Ht = op_crease(v);
  const DiscreteHessian Hs = op_std(v);
  // crease-mode Hessian reassembled without ever reading crease gradient data
  const int nq = sp.cell_rule().size();
  const int npe = sp.npe();
  std::vector<std::array<Mat2, 3>> manual(static_cast<std::size_t>(m.n_elements()) * nq,
                                          {Mat2::Zero(), Mat2::Zero(), Mat2::Zero()});
  for (int e = 0; e < m.n_elements(); ++e) {
    const auto& c = sp.cell(e);
    for (int q = 0; q < nq; ++q)
      for (int comp = 0; comp < 3; ++comp)
        for (int mm = 0; mm < npe; ++mm)
          manual[e * nq + q][comp] += v.coeff(comp, e, mm) * c.at.hess[q * npe + mm];
  }
  for (int ei : m.active_edges()) {
    if (!m.edges[ei].crease)
      op_std.accumulate(op_std.lift_gradient_jump(ei, v), op_std.lift1_space(),
                        op_std.lift1_at_main(), manual, -1.0);
    op_std.accumulate(op_std.lift_value_jump(ei, v), op_std.lift2_space(),
                      op_std.lift2_at_main(), manual, +1.0);
  }
  double same = 0.0, differ = 0.0;
  for (std::size_t i = 0; i < Ht.at_qpts.size(); ++i)
    for (int comp = 0; comp < 3; ++comp) {
      same = std::max(same, (Ht.at_qpts[i][comp] - manual[i][comp]).norm());
      differ = std::max(differ, (Ht.at_qpts[i][comp] - Hs.at_qpts[i][comp]).norm());
    }
  const bool ok = same < 1e-12 && differ > 1e-3;
  report(10, "crease mode ignores crease gradient data", ok,
         fmt("reassembly gap = %.3e, standard-mode gap = %.3e", same, differ));
}

}  // namespace

int main() {
  std::printf("fast acceptance suite\n");
  try {
    criterion1_flat_neutrality();
    criterion2_hessian_consistency();
    criterion3_hessian_convergence();
    criterion4_variation_oracles();
    criterion5_matrix_lemma();
    criterion6_midpoint_exactness();
    const CylinderRun run7 = cylinder_run(500, 5e-3);
    criterion7_monotonicity(*run7.state);
    criterion8_defect_scaling();
    criterion9_pointwise_bounds(*run7.state);
    criterion10_crease_mode();
  } catch (const std::exception& e) {
    std::printf("[FAIL] suite aborted: %s\n", e.what());
    return 2;
  }
  std::printf("%s\n", g_failed == 0 ? "all criteria passed" : "criteria FAILED");
  return g_failed == 0 ? 0 : 1;
}
