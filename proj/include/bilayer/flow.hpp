#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "bilayer/energy.hpp"
#include "bilayer/hessian.hpp"

namespace bilayer {

struct FlowConfig {
  double tau = 5e-3;
  double tol = 1e-4;  // stopping threshold on |dE| / tau
  int max_steps = 1000000;
  double gamma0 = 1.0;
  double gamma1 = 1.0;
  double l2_weight = 0.0;  // metric L^2 term; removes the kernel when unclamped
  double cg_rel_tol = 1e-8;
  int cg_max_iters = 200000;
  std::optional<double> defect_budget;  // monitor-only threshold
  LiftingConfig lifting{};

  void validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("FlowConfig: tau must be positive");
    if (!(tol >= 0.0)) throw std::invalid_argument("FlowConfig: tol must be nonnegative");
    if (!(gamma0 > 0.0 && gamma1 > 0.0))
      throw std::invalid_argument("FlowConfig: stabilization parameters must be positive");
  }
};

struct StepRecord {
  int step = 0;
  double energy = 0.0;
  double bending = 0.0;
  double cubic = 0.0;
  double max_defect = 0.0;
  double increment_norm = 0.0;  // metric norm of the update
  int cg_iters = 0;
  double wall_ms = 0.0;
  double tangency = 0.0;  // |B dy| / (|B|_F |dy|_2)
};

struct FlowState {
  DGField y;
  MultiplierField lambda;
  int step = 0;
  double initial_energy = 0.0;
  std::vector<StepRecord> history;
  bool stopped_by_tolerance = false;
  bool stability_ledger_ok = true;   // telescoped energy inequality
  int defect_growth_violations = 0;  // pointwise growth bound (algebraic, expect 0)
  int pointwise_bound_violations = 0;
  int budget_exceeded_steps = 0;  // steps whose max defect exceeded the configured budget
  double fitted_defect_rate = 0.0;  // D_max / (tau |log h_min| (E0 + 1))

  explicit FlowState(DGField initial) : y(std::move(initial)) {}
};

class FlowError : public std::runtime_error {
 public:
  explicit FlowError(const std::string& what) : std::runtime_error(what) {}
};

class FlowDriver;

/// One saddle-point step: the constant operator A = tau^-1 M + A_a (owned by
/// the driver, factorized once) plus the step-dependent constraint rows and
/// load vector.
struct SaddleSystem {
  const FlowDriver* driver = nullptr;
  std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> B_blocks;  // per element
  double B_frob = 0.0;
  Eigen::VectorXd f;        // load
  Eigen::VectorXd a_c;      // (I_3 x A_a) applied to the current coefficients
  double load_scale = 0.0;  // assembly magnitude, for the roundoff floor
  double energy = 0.0, bending = 0.0, cubic = 0.0;

  Eigen::VectorXd apply_B(const Eigen::VectorXd& x) const;
  Eigen::VectorXd apply_Bt(const Eigen::VectorXd& m) const;
  Eigen::VectorXd apply_A_inv(const Eigen::VectorXd& x) const;
  Eigen::VectorXd apply_schur(const Eigen::VectorXd& m) const {
    return apply_B(apply_A_inv(apply_Bt(m)));
  }
  int multiplier_dim() const { return static_cast<int>(B_blocks.size()) * 3; }
};

struct StepSolution {
  Eigen::VectorXd delta;
  Eigen::VectorXd lambda;  // (l11, l22, l12) per element
  int cg_iters = 0;
  double tangency = 0.0;
};

/// Semi-implicit gradient flow in the mesh-dependent H^2 metric with the
/// linearized isometry constraint enforced at barycenters by piecewise
/// constant symmetric multipliers. The bending part is treated implicitly,
/// the cubic part explicitly, so each step is a single linear saddle solve.
class FlowDriver {
 public:
  FlowDriver(const DGSpace& space, SpontaneousCurvature Z, FlowConfig cfg)
      : space_(&space), Z_(std::move(Z)), cfg_(cfg), op_(space, cfg.lifting), table_(op_) {
    cfg_.validate();
    if (static_cast<int>(Z_.Z.size()) != space.n_elements())
      throw std::invalid_argument("FlowDriver: curvature field does not match the mesh");
    assemble_matrices();
  }

  const DGSpace& space() const { return *space_; }
  const HessianOperator& hessian_op() const { return op_; }
  const BasisHessianTable& table() const { return table_; }
  const FlowConfig& config() const { return cfg_; }
  const Eigen::SparseMatrix<double>& metric_matrix() const { return M_; }
  const Eigen::SparseMatrix<double>& a_matrix() const { return Aa_; }

  /// Validates the initial iterate (must satisfy the barycentric isometry
  /// constraint to within 1e-10) and assembles the data-dependent offsets.
  FlowState make_state(const DGField& initial) {
    if (&initial.space() != space_)
      throw std::invalid_argument("FlowDriver: initial field on a different space");
    const DefectReport d0 = isometry_defect(initial);
    if (d0.max > 1e-10)
      throw std::invalid_argument("FlowDriver: initial iterate violates the isometry "
                                  "constraint at barycenters (defect " +
                                  std::to_string(d0.max) + ")");
    if (initial.has_boundary_data()) {
      offset_ = assemble_data_offset(op_, initial.boundary_data());
      assemble_offset_vector(initial.boundary_data());
    } else {
      offset_ = HessianOffset{};
      const int nq = space_->cell_rule().size();
      offset_.at_qpts.assign(static_cast<std::size_t>(space_->n_elements()) * nq,
                             {Mat2::Zero(), Mat2::Zero(), Mat2::Zero()});
      offset_.avg.assign(space_->n_elements(), {Mat2::Zero(), Mat2::Zero(), Mat2::Zero()});
      offset_vec_ = Eigen::VectorXd::Zero(space_->total_dofs());
      const_B_ = 0.0;
    }
    FlowState st(initial);
    st.lambda = MultiplierField::zero(space_->mesh());
    const SaddleSystem sys = assemble_step(st);
    st.initial_energy = sys.energy;
    StepRecord r;
    r.step = 0;
    r.energy = sys.energy;
    r.bending = sys.bending;
    r.cubic = sys.cubic;
    r.max_defect = d0.max;
    st.history.push_back(r);
    return st;
  }

  /// Constraint rows, load vector and current energies at the state's iterate.
  SaddleSystem assemble_step(const FlowState& st) const {
    const int ne = space_->n_elements();
    const int npe = space_->npe();
    const int ns = space_->scalar_dofs();
    const Eigen::VectorXd& c = st.y.coeffs();

    SaddleSystem sys;
    sys.driver = this;
    sys.B_blocks.resize(ne);
    Eigen::VectorXd ell = Eigen::VectorXd::Zero(space_->total_dofs());

    // Per-element data at the barycenters: reduced Hessian, deformation
    // gradient, unnormalized normal and the curvature pairing w_c = H_c : Z.
    std::vector<Mat32> gys(ne);
    std::vector<Vec3> nus(ne), ws(ne);
    sys.cubic = 0.0;
    for (int e = 0; e < ne; ++e) {
      std::array<Mat2, 3> red = offset_.avg[e];
      for (const auto& inc : table_.incoming(e))
        for (int comp = 0; comp < 3; ++comp)
          red[comp] += c[comp * ns + inc.sdof] * inc.block->avg;
      gys[e] = st.y.gradient_from(e, space_->barycenter(e).grad.data());
      nus[e] = gys[e].col(0).cross(gys[e].col(1));
      for (int comp = 0; comp < 3; ++comp) ws[e][comp] = ddot(red[comp], Z_.Z[e]);
      sys.cubic += space_->mesh().area(e) * nus[e].dot(ws[e]);
    }

    double frob2 = 0.0;
    for (int e = 0; e < ne; ++e) {
      const auto& bary = space_->barycenter(e);
      const Mat32& gy = gys[e];
      const Vec3 g1 = gy.col(0), g2 = gy.col(1);
      const Vec3 cross_w_g1 = ws[e].cross(g1);  // pairs with d2 v
      const Vec3 cross_g2_w = g2.cross(ws[e]);  // pairs with d1 v
      const double area = space_->mesh().area(e);

      auto& B = sys.B_blocks[e];
      B.resize(3, 3 * npe);
      for (int comp = 0; comp < 3; ++comp)
        for (int m = 0; m < npe; ++m) {
          const Vec2 d = bary.grad[m];
          const int col = comp * npe + m;
          B(0, col) = area * 2.0 * d[0] * gy(comp, 0);
          B(1, col) = area * 2.0 * d[1] * gy(comp, 1);
          B(2, col) = area * 2.0 * (d[0] * gy(comp, 1) + d[1] * gy(comp, 0));
          // cubic-energy variation, gradient part (explicit treatment)
          ell[space_->dof_index(comp, e, m)] +=
              area * (d[0] * cross_g2_w[comp] + d[1] * cross_w_g1[comp]);
        }
      frob2 += B.squaredNorm();

      // cubic-energy variation, Hessian part (scattered over the basis support)
      for (int m = 0; m < npe; ++m) {
        const int sdof = space_->scalar_index(e, m);
        for (const auto& blk : table_.blocks(sdof)) {
          const double k = ddot(blk.avg, Z_.Z[blk.elem]) * space_->mesh().area(blk.elem);
          for (int comp = 0; comp < 3; ++comp)
            ell[space_->dof_index(comp, e, m)] += k * nus[blk.elem][comp];
        }
      }
    }
    sys.B_frob = std::sqrt(frob2);

    sys.a_c.resize(space_->total_dofs());
    for (int comp = 0; comp < 3; ++comp)
      sys.a_c.segment(comp * ns, ns) = Aa_ * c.segment(comp * ns, ns);
    sys.f = ell - sys.a_c - offset_vec_;
    sys.load_scale = ell.norm() + sys.a_c.norm() + offset_vec_.norm();

    sys.bending = 0.5 * c.dot(sys.a_c) + offset_vec_.dot(c) + const_B_;
    sys.energy = sys.bending - sys.cubic;
    return sys;
  }

  /// Schur-complement solve: CG on B A^-1 B^T lambda = B A^-1 f, then the
  /// displacement update from the first block row.
  StepSolution solve_step(const SaddleSystem& sys, const Eigen::VectorXd* warm_lambda = nullptr,
                          double rel_tol_override = 0.0) const {
    const double rel_tol = rel_tol_override > 0.0 ? rel_tol_override : cfg_.cg_rel_tol;
    StepSolution sol;
    if (sys.f.norm() <= 1e-14 * (1.0 + sys.load_scale)) {
      // load at assembly roundoff level: the step is stationary
      sol.delta = Eigen::VectorXd::Zero(space_->total_dofs());
      sol.lambda = Eigen::VectorXd::Zero(sys.multiplier_dim());
      return sol;
    }
    const Eigen::VectorXd z0 = sys.apply_A_inv(sys.f);
    const Eigen::VectorXd g = sys.apply_B(z0);
    const int m = sys.multiplier_dim();
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(m);
    const double gnorm = g.norm();
    int iters = 0;
    if (gnorm > 0.0) {
      if (warm_lambda && warm_lambda->size() == m) lambda = *warm_lambda;
      Eigen::VectorXd r = g - sys.apply_schur(lambda);
      Eigen::VectorXd p = r;
      double rr = r.squaredNorm();
      const double stop = rel_tol * gnorm;
      while (std::sqrt(rr) > stop) {
        if (iters >= cfg_.cg_max_iters)
          throw FlowError("solve_step: CG did not converge within " +
                          std::to_string(cfg_.cg_max_iters) +
                          " iterations; consider a smaller tau or looser cg_rel_tol");
        const Eigen::VectorXd Sp = sys.apply_schur(p);
        const double pSp = p.dot(Sp);
        if (!(pSp > 0.0))
          throw FlowError("solve_step: indefinite Schur complement (assembly bug?)");
        const double alpha = rr / pSp;
        lambda += alpha * p;
        r -= alpha * Sp;
        const double rr_new = r.squaredNorm();
        p = r + (rr_new / rr) * p;
        rr = rr_new;
        ++iters;
      }
    }
    sol.cg_iters = iters;
    sol.lambda = lambda;
    sol.delta = z0 - sys.apply_A_inv(sys.apply_Bt(lambda));
    const double dn = sol.delta.norm();
    sol.tangency = sys.apply_B(sol.delta).norm() /
                   (sys.B_frob * dn + std::numeric_limits<double>::min());
    return sol;
  }

  using Callback = std::function<void(const FlowState&, const StepRecord&)>;

  /// Runs the flow until tau^-1 |dE| <= tol or max_steps is reached.
  FlowState run(const DGField& initial, const Callback& callback = nullptr) {
    FlowState st = make_state(initial);
    Eigen::VectorXd warm = Eigen::VectorXd::Zero(3 * space_->n_elements());
    double sum_increments = 0.0;  // sum of squared metric norms
    DefectReport defect_prev = isometry_defect(st.y);
    SaddleSystem sys = assemble_step(st);

    while (st.step < cfg_.max_steps) {
      const auto t0 = std::chrono::steady_clock::now();
      const double energy_before = sys.energy;

      StepSolution sol = solve_step(sys, &warm);
      // The tangency residual is the solver's accuracy contract; retry with a
      // tighter CG tolerance if it is not met.
      for (int retry = 0; retry < 2 && sol.tangency > 10.0 * cfg_.cg_rel_tol; ++retry) {
        StepSolution again = solve_step(sys, &sol.lambda, cfg_.cg_rel_tol * std::pow(0.1, retry + 1));
        again.cg_iters += sol.cg_iters;
        sol = again;
      }
      warm = sol.lambda;

      // Pointwise defect growth bound, checked before accepting the update.
      std::vector<double> growth_bound(space_->n_elements());
      for (int e = 0; e < space_->n_elements(); ++e) {
        const auto& bary = space_->barycenter(e);
        Mat32 gd = Mat32::Zero();
        for (int comp = 0; comp < 3; ++comp)
          for (int m2 = 0; m2 < space_->npe(); ++m2)
            gd.row(comp) += sol.delta[space_->dof_index(comp, e, m2)] *
                            bary.grad[m2].transpose();
        const Mat32 gy = st.y.gradient_from(e, bary.grad.data());
        const Mat2 L = gd.transpose() * gy + gy.transpose() * gd;
        const Mat2 I_inc = gd.transpose() * gd;
        growth_bound[e] = defect_prev.per_element[e] + I_inc.norm() + L.norm();
      }

      st.y.coeffs() += sol.delta;
      st.step += 1;
      for (int e = 0; e < space_->n_elements(); ++e) st.lambda.mu[e] = unpack_lambda(sol.lambda, e);

      SaddleSystem after = assemble_step(st);
      if (!std::isfinite(after.energy))
        throw FlowError("run: energy is not finite at step " + std::to_string(st.step));
      const double slack = 1e-8 * (1.0 + std::abs(energy_before));
      if (after.energy > energy_before + slack)
        throw FlowError("run: energy increased at step " + std::to_string(st.step) + " (" +
                        std::to_string(energy_before) + " -> " + std::to_string(after.energy) +
                        "); the time step may be too large");

      Eigen::VectorXd Md(space_->total_dofs());
      const int ns = space_->scalar_dofs();
      for (int comp = 0; comp < 3; ++comp)
        Md.segment(comp * ns, ns) = M_ * sol.delta.segment(comp * ns, ns);
      const double inc2 = sol.delta.dot(Md);
      sum_increments += inc2;

      const DefectReport defect_now = isometry_defect(st.y);
      for (int e = 0; e < space_->n_elements(); ++e)
        if (defect_now.per_element[e] > growth_bound[e] + 1e-10 * (1.0 + growth_bound[e]))
          ++st.defect_growth_violations;
      // Pointwise stretch/shear control implied by the defect bound.
      for (int e = 0; e < space_->n_elements(); ++e) {
        const Mat32 g = st.y.gradient_at_barycenter(e);
        const double d = defect_now.max;
        for (int i = 0; i < 2; ++i) {
          const double n2 = g.col(i).squaredNorm();
          if (n2 < 1.0 - d - 1e-12 || n2 > 1.0 + d + 1e-12) ++st.pointwise_bound_violations;
        }
        if (std::abs(g.col(0).dot(g.col(1))) > d + 1e-12) ++st.pointwise_bound_violations;
      }
      defect_prev = defect_now;

      // Telescoped energy ledger with solver slack.
      if (after.energy + sum_increments / (2.0 * cfg_.tau) >
          st.initial_energy + 1e-6 * std::abs(st.initial_energy) + 1e-10)
        st.stability_ledger_ok = false;
      // The defect budget is monitor-only; the flow never projects back onto
      // the constraint set.
      if (cfg_.defect_budget && defect_now.max > *cfg_.defect_budget)
        ++st.budget_exceeded_steps;

      StepRecord rec;
      rec.step = st.step;
      rec.energy = after.energy;
      rec.bending = after.bending;
      rec.cubic = after.cubic;
      rec.max_defect = defect_now.max;
      rec.increment_norm = std::sqrt(std::max(0.0, inc2));
      rec.cg_iters = sol.cg_iters;
      rec.tangency = sol.tangency;
      rec.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
      st.history.push_back(rec);
      if (callback) callback(st, rec);

      const double h_min = space_->mesh().h_min();
      st.fitted_defect_rate = defect_now.max / (cfg_.tau * std::abs(std::log(h_min)) *
                                                (std::abs(st.initial_energy) + 1.0));

      const bool stop = std::abs(after.energy - energy_before) / cfg_.tau <= cfg_.tol;
      sys = std::move(after);
      if (stop) {
        st.stopped_by_tolerance = true;
        break;
      }
    }
    return st;
  }

  static Mat2 unpack_lambda(const Eigen::VectorXd& lambda, int elem) {
    Mat2 m;
    m << lambda[3 * elem + 0], lambda[3 * elem + 2], lambda[3 * elem + 2], lambda[3 * elem + 1];
    return m;
  }

 private:
  friend struct SaddleSystem;

  void assemble_matrices() {
    const DGSpace& sp = *space_;
    const Mesh& mesh = sp.mesh();
    const int ns = sp.scalar_dofs();
    const int npe = sp.npe();
    const int nq = sp.cell_rule().size();
    std::vector<Eigen::Triplet<double>> ta, tm;
    ta.reserve(static_cast<std::size_t>(mesh.n_elements()) * 2100);
    tm.reserve(static_cast<std::size_t>(mesh.n_elements()) * 900);

    // Volume parts: reconstructed-Hessian pairings for the bending form,
    // broken-Hessian (plus optional L^2) pairings for the metric.
    for (int e = 0; e < mesh.n_elements(); ++e) {
      const auto& c = sp.cell(e);
      const auto& inc = table_.incoming(e);
      for (std::size_t i = 0; i < inc.size(); ++i)
        for (std::size_t j = i; j < inc.size(); ++j) {
          double acc = 0.0;
          for (int q = 0; q < nq; ++q)
            acc += c.wdet[q] * ddot(inc[i].block->vals[q], inc[j].block->vals[q]);
          ta.emplace_back(inc[i].sdof, inc[j].sdof, acc);
          if (j > i) ta.emplace_back(inc[j].sdof, inc[i].sdof, acc);
        }
      for (int m = 0; m < npe; ++m)
        for (int n = m; n < npe; ++n) {
          double acc = 0.0, accm = 0.0;
          for (int q = 0; q < nq; ++q) {
            acc += c.wdet[q] * ddot(c.at.hess[q * npe + m], c.at.hess[q * npe + n]);
            if (cfg_.l2_weight != 0.0)
              accm += c.wdet[q] * c.at.value[q * npe + m] * c.at.value[q * npe + n];
          }
          const double v = acc + cfg_.l2_weight * accm;
          tm.emplace_back(sp.scalar_index(e, m), sp.scalar_index(e, n), v);
          if (n > m) tm.emplace_back(sp.scalar_index(e, n), sp.scalar_index(e, m), v);
        }
    }

    // Edge jump pairings. The bending form carries twice the stabilization
    // (it is the energy derivative); the metric carries unit weights.
    for (int ei : mesh.active_edges()) {
      const Edge& ed = mesh.edges[ei];
      const auto& ec = sp.edge(ei);
      const double w1 = 1.0 / ed.diameter;
      const double w0 = w1 * w1 * w1;
      const bool skip_grad = cfg_.lifting.skip_gradient_terms(ed);
      for (int s1 = 0; s1 < 2; ++s1) {
        if (ed.elem[s1] < 0) continue;
        const double sign1 = (s1 == 0) ? 1.0 : -1.0;
        for (int s2 = 0; s2 < 2; ++s2) {
          if (ed.elem[s2] < 0) continue;
          const double sign2 = (s2 == 0) ? 1.0 : -1.0;
          for (int m = 0; m < npe; ++m)
            for (int n = 0; n < npe; ++n) {
              double gj = 0.0, vj = 0.0;
              for (std::size_t q = 0; q < ec.ds.size(); ++q) {
                gj += ec.ds[q] * ec.side[s1].grad[q * npe + m].dot(ec.side[s2].grad[q * npe + n]);
                vj += ec.ds[q] * ec.side[s1].value[q * npe + m] * ec.side[s2].value[q * npe + n];
              }
              const double sgn = sign1 * sign2;
              const double stab = (skip_grad ? 0.0 : 2.0 * cfg_.gamma1 * w1 * gj) +
                                  2.0 * cfg_.gamma0 * w0 * vj;
              const double metric = (skip_grad ? 0.0 : w1 * gj) + w0 * vj;
              const int gi = sp.scalar_index(ed.elem[s1], m);
              const int gjx = sp.scalar_index(ed.elem[s2], n);
              ta.emplace_back(gi, gjx, sgn * stab);
              tm.emplace_back(gi, gjx, sgn * metric);
            }
        }
      }
    }

    Aa_.resize(ns, ns);
    Aa_.setFromTriplets(ta.begin(), ta.end());
    M_.resize(ns, ns);
    M_.setFromTriplets(tm.begin(), tm.end());
    Eigen::SparseMatrix<double> A = (1.0 / cfg_.tau) * M_ + Aa_;
    Eigen::SparseMatrix<double> D = Eigen::SparseMatrix<double>(A.transpose()) - A;
    if (D.coeffs().abs().maxCoeff() > 1e-12 * A.coeffs().abs().maxCoeff())
      throw std::runtime_error("FlowDriver: step operator lost symmetry");
    llt_.compute(A);
    if (llt_.info() != Eigen::Success)
      throw std::runtime_error(
          "FlowDriver: step operator is not positive definite (unclamped without an L^2 term?)");
  }

  void assemble_offset_vector(const BoundaryData& data) {
    const DGSpace& sp = *space_;
    const int nq = sp.cell_rule().size();
    const int npe = sp.npe();
    offset_vec_ = Eigen::VectorXd::Zero(sp.total_dofs());
    const_B_ = 0.0;
    // Hessian part: pair the data offset with every basis Hessian.
    for (int e = 0; e < sp.n_elements(); ++e) {
      const auto& c = sp.cell(e);
      for (const auto& inc : table_.incoming(e))
        for (int comp = 0; comp < 3; ++comp) {
          double acc = 0.0;
          for (int q = 0; q < nq; ++q)
            acc += c.wdet[q] * ddot(offset_.at_qpts[e * nq + q][comp], inc.block->vals[q]);
          offset_vec_[comp * sp.scalar_dofs() + inc.sdof] += acc;
        }
      for (int q = 0; q < nq; ++q)
        for (int comp = 0; comp < 3; ++comp)
          const_B_ += 0.5 * c.wdet[q] * offset_.at_qpts[e * nq + q][comp].squaredNorm();
    }
    // Stabilization data terms on the Dirichlet skeleton.
    for (int ei : sp.mesh().active_edges()) {
      const Edge& ed = sp.mesh().edges[ei];
      if (ed.cls != EdgeClass::dirichlet) continue;
      const auto& ec = sp.edge(ei);
      const double w1 = 1.0 / ed.diameter;
      const double w0 = w1 * w1 * w1;
      const bool skip_grad = cfg_.lifting.skip_gradient_terms(ed);
      for (std::size_t q = 0; q < ec.ds.size(); ++q) {
        const Mat32 Phi = data.gradient(ec.xphys[q]);
        const Vec3 phi = data.value(ec.xphys[q]);
        for (int comp = 0; comp < 3; ++comp) {
          for (int m = 0; m < npe; ++m) {
            const int dof = sp.dof_index(comp, ed.elem[0], m);
            if (!skip_grad)
              offset_vec_[dof] -= 2.0 * cfg_.gamma1 * w1 * ec.ds[q] *
                                  Phi.row(comp).dot(ec.side[0].grad[q * npe + m]);
            offset_vec_[dof] -=
                2.0 * cfg_.gamma0 * w0 * ec.ds[q] * phi[comp] * ec.side[0].value[q * npe + m];
          }
          if (!skip_grad)
            const_B_ += cfg_.gamma1 * w1 * ec.ds[q] * Phi.row(comp).squaredNorm();
          const_B_ += cfg_.gamma0 * w0 * ec.ds[q] * phi[comp] * phi[comp];
        }
      }
    }
  }

  const DGSpace* space_;
  SpontaneousCurvature Z_;
  FlowConfig cfg_;
  HessianOperator op_;
  BasisHessianTable table_;
  Eigen::SparseMatrix<double> Aa_, M_;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt_;
  HessianOffset offset_;
  Eigen::VectorXd offset_vec_;
  double const_B_ = 0.0;
};

inline Eigen::VectorXd SaddleSystem::apply_B(const Eigen::VectorXd& x) const {
  const DGSpace& sp = driver->space();
  const int npe = sp.npe();
  const int ns = sp.scalar_dofs();
  Eigen::VectorXd out(multiplier_dim());
  Eigen::VectorXd local(3 * npe);
  for (int e = 0; e < sp.n_elements(); ++e) {
    for (int comp = 0; comp < 3; ++comp)
      local.segment(comp * npe, npe) = x.segment(comp * ns + e * npe, npe);
    out.segment(3 * e, 3) = B_blocks[e] * local;
  }
  return out;
}

inline Eigen::VectorXd SaddleSystem::apply_Bt(const Eigen::VectorXd& m) const {
  const DGSpace& sp = driver->space();
  const int npe = sp.npe();
  const int ns = sp.scalar_dofs();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(sp.total_dofs());
  for (int e = 0; e < sp.n_elements(); ++e) {
    const Eigen::VectorXd local = B_blocks[e].transpose() * m.segment(3 * e, 3);
    for (int comp = 0; comp < 3; ++comp)
      out.segment(comp * ns + e * npe, npe) += local.segment(comp * npe, npe);
  }
  return out;
}

inline Eigen::VectorXd SaddleSystem::apply_A_inv(const Eigen::VectorXd& x) const {
  const DGSpace& sp = driver->space();
  const int ns = sp.scalar_dofs();
  Eigen::VectorXd out(sp.total_dofs());
  for (int comp = 0; comp < 3; ++comp)
    out.segment(comp * ns, ns) = driver->llt_.solve(x.segment(comp * ns, ns));
  return out;
}

/// Convenience wrapper: build the driver and run the flow.
inline FlowState run_flow(const DGField& initial, const SpontaneousCurvature& Z,
                          const FlowConfig& cfg, const FlowDriver::Callback& callback = nullptr) {
  FlowDriver driver(initial.space(), Z, cfg);
  return driver.run(initial, callback);
}

}  // namespace bilayer
