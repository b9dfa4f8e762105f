#pragma once

#include <array>
#include <new>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "bilayer/dg_space.hpp"

namespace bilayer {

/// Configuration of the jump liftings entering the reconstructed Hessian.
/// Crease mode drops the gradient-jump lifting (and penalty) on crease edges,
/// which is what lets the plate fold freely across the crease.
struct LiftingConfig {
  int l1 = 2;  // degree of the gradient-jump lifting
  int l2 = 2;  // degree of the value-jump lifting
  enum class Mode { standard, crease };
  Mode mode = Mode::standard;

  bool skip_gradient_terms(const Edge& e) const {
    return mode == Mode::crease && e.crease;
  }
};

inline double ddot(const Mat2& a, const Mat2& b) { return a.cwiseProduct(b).sum(); }

/// Lifting of one edge's jump data: tensor-valued polynomials supported on
/// the one or two elements sharing the edge. Coefficients are stored in the
/// lifting space basis, indexed comp * npe_lift + m.
struct EdgeLift {
  std::array<int, 2> elems{-1, -1};
  std::array<std::vector<Mat2>, 2> coeff;
  int npe_lift = 0;

  /// Integral over the edge patch of lift : tau for a caller-supplied tensor
  /// test field sampled at the lifting space's own quadrature points.
  template <class TauAt>  // TauAt(elem, qpt_index) -> Mat2 per component c
  double patch_integral(const DGSpace& lift_space, int comp, TauAt&& tau) const {
    double acc = 0.0;
    for (int s = 0; s < 2; ++s) {
      if (elems[s] < 0) continue;
      const auto& c = lift_space.cell(elems[s]);
      const int npe = lift_space.npe();
      for (std::size_t q = 0; q < c.wdet.size(); ++q) {
        Mat2 lift = Mat2::Zero();
        for (int m = 0; m < npe; ++m)
          lift += c.at.value[q * npe + m] * coeff[s][comp * npe + m];
        acc += c.wdet[q] * ddot(lift, tau(elems[s], static_cast<int>(q)));
      }
    }
    return acc;
  }
};

/// Reconstructed Hessian of a broken field, sampled at the cell quadrature
/// points, together with its piecewise-constant reduction and the part
/// contributed by Dirichlet boundary data alone.
struct DiscreteHessian {
  const DGSpace* space = nullptr;
  std::vector<std::array<Mat2, 3>> at_qpts;      // element-major, e*nq + q
  std::vector<std::array<Mat2, 3>> reduced;      // element averages
  std::vector<std::array<Mat2, 3>> data_offset;  // same layout as at_qpts

  double l2_norm() const {
    double acc = 0.0;
    const int nq = space->cell_rule().size();
    for (int e = 0; e < space->n_elements(); ++e) {
      const auto& c = space->cell(e);
      for (int q = 0; q < nq; ++q)
        for (int comp = 0; comp < 3; ++comp)
          acc += c.wdet[q] * at_qpts[e * nq + q][comp].squaredNorm();
    }
    return std::sqrt(acc);
  }
};

/// Assembles liftings and reconstructed Hessians on a fixed deformation
/// space. Holds the lifting spaces and the trace/value tables sampled at the
/// deformation space's quadrature points.
class HessianOperator {
 public:
  HessianOperator(const DGSpace& space, LiftingConfig cfg = {})
      : space_(&space),
        cfg_(cfg),
        lift1_(space.mesh(), cfg.l1),
        lift2_(space.mesh(), cfg.l2) {
    if (space.degree() < 2)
      throw std::invalid_argument("HessianOperator: deformation space needs degree >= 2");
    if (cfg.l1 < 0 || cfg.l2 < 0)
      throw std::invalid_argument("HessianOperator: lifting degrees must be >= 0");
    if (cfg.mode == LiftingConfig::Mode::crease && space.mesh().n_crease_edges() == 0)
      throw std::invalid_argument("HessianOperator: crease mode requires a crease-fitted mesh");
    build_tables();
  }

  const DGSpace& space() const { return *space_; }
  const DGSpace& lift1_space() const { return lift1_; }
  const DGSpace& lift2_space() const { return lift2_; }
  const LiftingConfig& config() const { return cfg_; }

  /// Gradient-jump lifting r_e of a field's jump [grad v] (with boundary data
  /// on Dirichlet edges). Rejected on crease edges in crease mode.
  EdgeLift lift_gradient_jump(int edge_id, const DGField& f) const {
    const Edge& ed = space_->mesh().edges[edge_id];
    require_active(ed);
    if (cfg_.skip_gradient_terms(ed))
      throw std::invalid_argument("lift_gradient_jump: crease edges are not lifted in crease mode");
    const EdgeJumps J = edge_jumps(f, edge_id);
    std::array<std::vector<Vec2>, 3> g;
    for (int comp = 0; comp < 3; ++comp) {
      g[comp].resize(J.grad.size());
      for (std::size_t q = 0; q < J.grad.size(); ++q)
        g[comp][q] = J.grad[q].row(comp).transpose();
    }
    return lift_r(edge_id, g);
  }

  /// Value-jump lifting b_e of a field's jump [v].
  EdgeLift lift_value_jump(int edge_id, const DGField& f) const {
    const Edge& ed = space_->mesh().edges[edge_id];
    require_active(ed);
    const EdgeJumps J = edge_jumps(f, edge_id);
    std::array<std::vector<double>, 3> g;
    for (int comp = 0; comp < 3; ++comp) {
      g[comp].resize(J.value.size());
      for (std::size_t q = 0; q < J.value.size(); ++q) g[comp][q] = J.value[q][comp];
    }
    return lift_b(edge_id, g);
  }

  /// Raw liftings of caller-supplied edge data (one entry per component and
  /// edge quadrature point of the deformation space).
  EdgeLift lift_r(int edge_id, const std::array<std::vector<Vec2>, 3>& data) const {
    return lift_generic(edge_id, lift1_, lift1_trace_, data);
  }
  EdgeLift lift_b(int edge_id, const std::array<std::vector<double>, 3>& data) const {
    return lift_generic_b(edge_id, lift2_, lift2_trace_grad_, data);
  }

  /// Values of an edge lift at the cell quadrature points of the deformation
  /// space, accumulated into a Hessian-layout array with the given sign.
  void accumulate(const EdgeLift& lift, const DGSpace& lspace,
                  const std::vector<double>& table_at_main,
                  std::vector<std::array<Mat2, 3>>& target, double sign) const {
    const int nq = space_->cell_rule().size();
    const int npe = lspace.npe();
    for (int s = 0; s < 2; ++s) {
      if (lift.elems[s] < 0) continue;
      const int e = lift.elems[s];
      const double* tab = &table_at_main[static_cast<std::size_t>(e) * nq * npe];
      for (int q = 0; q < nq; ++q)
        for (int comp = 0; comp < 3; ++comp) {
          Mat2 val = Mat2::Zero();
          for (int m = 0; m < npe; ++m)
            val += tab[q * npe + m] * lift.coeff[s][comp * npe + m];
          target[e * nq + q][comp] += sign * val;
        }
    }
  }

  /// H_h[v] = broken Hessian - lifted gradient jumps + lifted value jumps,
  /// with Dirichlet data entering through the boundary jumps.
  DiscreteHessian operator()(const DGField& f) const {
    DiscreteHessian H;
    H.space = space_;
    const int nq = space_->cell_rule().size();
    const int ne = space_->n_elements();
    const int npe = space_->npe();
    H.at_qpts.assign(static_cast<std::size_t>(ne) * nq, {Mat2::Zero(), Mat2::Zero(), Mat2::Zero()});
    H.data_offset.assign(H.at_qpts.size(), {Mat2::Zero(), Mat2::Zero(), Mat2::Zero()});
    for (int e = 0; e < ne; ++e) {
      const auto& c = space_->cell(e);
      for (int q = 0; q < nq; ++q)
        for (int comp = 0; comp < 3; ++comp) {
          Mat2 val = Mat2::Zero();
          for (int m = 0; m < npe; ++m) val += f.coeff(comp, e, m) * c.at.hess[q * npe + m];
          H.at_qpts[e * nq + q][comp] = val;
        }
    }
    for (int ei : space_->mesh().active_edges()) {
      const Edge& ed = space_->mesh().edges[ei];
      if (!cfg_.skip_gradient_terms(ed))
        accumulate(lift_gradient_jump(ei, f), lift1_, lift1_at_main_, H.at_qpts, -1.0);
      accumulate(lift_value_jump(ei, f), lift2_, lift2_at_main_, H.at_qpts, +1.0);
      if (ed.cls == EdgeClass::dirichlet && f.has_boundary_data()) {
        // Contribution of the data alone: +r_e(Phi) - b_e(phi).
        const auto& ec = space_->edge(ei);
        std::array<std::vector<Vec2>, 3> gPhi;
        std::array<std::vector<double>, 3> gphi;
        for (int comp = 0; comp < 3; ++comp) {
          gPhi[comp].resize(ec.xphys.size());
          gphi[comp].resize(ec.xphys.size());
        }
        for (std::size_t q = 0; q < ec.xphys.size(); ++q) {
          const Mat32 Phi = f.boundary_data().gradient(ec.xphys[q]);
          const Vec3 phi = f.boundary_data().value(ec.xphys[q]);
          for (int comp = 0; comp < 3; ++comp) {
            gPhi[comp][q] = Phi.row(comp).transpose();
            gphi[comp][q] = phi[comp];
          }
        }
        if (!cfg_.skip_gradient_terms(ed))
          accumulate(lift_r(ei, gPhi), lift1_, lift1_at_main_, H.data_offset, +1.0);
        accumulate(lift_b(ei, gphi), lift2_, lift2_at_main_, H.data_offset, -1.0);
      }
    }
    H.reduced = reduce(H.at_qpts);
    return H;
  }

  /// Elementwise averages (the piecewise-constant reduction).
  std::vector<std::array<Mat2, 3>> reduce(
      const std::vector<std::array<Mat2, 3>>& at_qpts) const {
    const int nq = space_->cell_rule().size();
    std::vector<std::array<Mat2, 3>> red(space_->n_elements());
    for (int e = 0; e < space_->n_elements(); ++e) {
      const auto& c = space_->cell(e);
      std::array<Mat2, 3> acc{Mat2::Zero(), Mat2::Zero(), Mat2::Zero()};
      for (int q = 0; q < nq; ++q)
        for (int comp = 0; comp < 3; ++comp) acc[comp] += c.wdet[q] * at_qpts[e * nq + q][comp];
      for (int comp = 0; comp < 3; ++comp) acc[comp] /= space_->mesh().area(e);
      red[e] = acc;
    }
    return red;
  }

  // Tables of lifting-space basis values at the deformation space's cell
  // quadrature points (element-major, e*nq*npe + q*npe + m).
  const std::vector<double>& lift1_at_main() const { return lift1_at_main_; }
  const std::vector<double>& lift2_at_main() const { return lift2_at_main_; }

 private:
  void require_active(const Edge& ed) const {
    if (ed.cls == EdgeClass::free_boundary)
      throw std::invalid_argument("lifting: free edges are not active");
  }

  void build_tables() {
    const Mesh& mesh = space_->mesh();
    const int nq = space_->cell_rule().size();
    const auto build_cell_table = [&](const DGSpace& ls, std::vector<double>& out) {
      const int npe = ls.npe();
      out.resize(static_cast<std::size_t>(mesh.n_elements()) * nq * npe);
      for (int e = 0; e < mesh.n_elements(); ++e)
        for (int q = 0; q < nq; ++q) {
          const auto se = ls.eval_shape(e, space_->cell_rule().points[q], false);
          for (int m = 0; m < npe; ++m)
            out[(static_cast<std::size_t>(e) * nq + q) * npe + m] = se.value[m];
        }
    };
    build_cell_table(lift1_, lift1_at_main_);
    build_cell_table(lift2_, lift2_at_main_);

    const int nk = space_->edge_rule().size();
    const auto build_trace = [&](const DGSpace& ls, bool grads, std::vector<double>& vals,
                                 std::vector<Vec2>& gvals) {
      const int npe = ls.npe();
      if (!grads)
        vals.resize(static_cast<std::size_t>(mesh.n_edges()) * 2 * nk * npe);
      else
        gvals.resize(static_cast<std::size_t>(mesh.n_edges()) * 2 * nk * npe);
      for (int ei = 0; ei < mesh.n_edges(); ++ei) {
        const Edge& ed = mesh.edges[ei];
        for (int s = 0; s < 2; ++s) {
          if (ed.elem[s] < 0) continue;
          for (int q = 0; q < nk; ++q) {
            const Vec2 xh = mesh.edge_ref_point(ed, s, space_->edge_rule().points[q]);
            const auto se = ls.eval_shape(ed.elem[s], xh, false);
            const std::size_t base =
                ((static_cast<std::size_t>(ei) * 2 + s) * nk + q) * npe;
            for (int m = 0; m < npe; ++m) {
              if (!grads)
                vals[base + m] = se.value[m];
              else
                gvals[base + m] = se.grad[m];
            }
          }
        }
      }
    };
    std::vector<Vec2> unused_g;
    std::vector<double> unused_v;
    build_trace(lift1_, false, lift1_trace_, unused_g);
    build_trace(lift2_, true, unused_v, lift2_trace_grad_);
  }

  template <class T>
  const T* trace_at(const std::vector<T>& table, int ei, int side, int npe) const {
    const int nk = space_->edge_rule().size();
    return &table[((static_cast<std::size_t>(ei) * 2 + side) * nk) * npe];
  }

  EdgeLift lift_generic(int edge_id, const DGSpace& ls, const std::vector<double>& traces,
                        const std::array<std::vector<Vec2>, 3>& data) const {
    const Edge& ed = space_->mesh().edges[edge_id];
    const auto& ec = space_->edge(edge_id);
    const int nk = space_->edge_rule().size();
    const int npe = ls.npe();
    const double w = ed.is_boundary() ? 1.0 : 0.5;
    EdgeLift out;
    out.npe_lift = npe;
    for (int s = 0; s < 2; ++s) {
      if (ed.elem[s] < 0) continue;
      out.elems[s] = ed.elem[s];
      out.coeff[s].assign(3 * npe, Mat2::Zero());
      const double* tr = trace_at(traces, edge_id, s, npe);
      Eigen::MatrixXd rhs(npe, 4);
      for (int comp = 0; comp < 3; ++comp) {
        rhs.setZero();
        for (int q = 0; q < nk; ++q) {
          const Mat2 gn = data[comp][q] * ec.normal[q].transpose();  // g (x) n
          const double wq = w * ec.ds[q];
          for (int m = 0; m < npe; ++m) {
            const double f = wq * tr[q * npe + m];
            rhs(m, 0) += f * gn(0, 0);
            rhs(m, 1) += f * gn(0, 1);
            rhs(m, 2) += f * gn(1, 0);
            rhs(m, 3) += f * gn(1, 1);
          }
        }
        const Eigen::MatrixXd sol = ls.mass_llt(ed.elem[s]).solve(rhs);
        for (int m = 0; m < npe; ++m) {
          Mat2 cm;
          cm << sol(m, 0), sol(m, 1), sol(m, 2), sol(m, 3);
          out.coeff[s][comp * npe + m] = cm;
        }
      }
    }
    return out;
  }

  EdgeLift lift_generic_b(int edge_id, const DGSpace& ls, const std::vector<Vec2>& tgrads,
                          const std::array<std::vector<double>, 3>& data) const {
    const Edge& ed = space_->mesh().edges[edge_id];
    const auto& ec = space_->edge(edge_id);
    const int nk = space_->edge_rule().size();
    const int npe = ls.npe();
    const double w = ed.is_boundary() ? 1.0 : 0.5;
    EdgeLift out;
    out.npe_lift = npe;
    for (int s = 0; s < 2; ++s) {
      if (ed.elem[s] < 0) continue;
      out.elems[s] = ed.elem[s];
      out.coeff[s].assign(3 * npe, Mat2::Zero());
      const Vec2* tg = trace_at(tgrads, edge_id, s, npe);
      Eigen::MatrixXd rhs(npe, 4);
      for (int comp = 0; comp < 3; ++comp) {
        rhs.setZero();
        for (int q = 0; q < nk; ++q) {
          const double wq = w * ec.ds[q] * data[comp][q];
          for (int m = 0; m < npe; ++m) {
            const Vec2 n = ec.normal[q];
            const Vec2 gm = tg[q * npe + m];
            // test tensor with a single (a,b) entry: <div tau> . n = d_b tau n_a
            rhs(m, 0) += wq * n[0] * gm[0];
            rhs(m, 1) += wq * n[0] * gm[1];
            rhs(m, 2) += wq * n[1] * gm[0];
            rhs(m, 3) += wq * n[1] * gm[1];
          }
        }
        const Eigen::MatrixXd sol = ls.mass_llt(ed.elem[s]).solve(rhs);
        for (int m = 0; m < npe; ++m) {
          Mat2 cm;
          cm << sol(m, 0), sol(m, 1), sol(m, 2), sol(m, 3);
          out.coeff[s][comp * npe + m] = cm;
        }
      }
    }
    return out;
  }

  const DGSpace* space_;
  LiftingConfig cfg_;
  DGSpace lift1_, lift2_;
  std::vector<double> lift1_at_main_, lift2_at_main_;
  std::vector<double> lift1_trace_;       // values of lift1 basis traces
  std::vector<Vec2> lift2_trace_grad_;    // gradients of lift2 basis traces
};

inline DiscreteHessian discrete_hessian(const DGField& f, const HessianOperator& op) {
  return op(f);
}

inline std::vector<std::array<Mat2, 3>> reduced_hessian(const DiscreteHessian& H) {
  // Recomputed from the sampled values; matches H.reduced.
  const DGSpace& sp = *H.space;
  const int nq = sp.cell_rule().size();
  std::vector<std::array<Mat2, 3>> red(sp.n_elements());
  for (int e = 0; e < sp.n_elements(); ++e) {
    const auto& c = sp.cell(e);
    std::array<Mat2, 3> acc{Mat2::Zero(), Mat2::Zero(), Mat2::Zero()};
    for (int q = 0; q < nq; ++q)
      for (int comp = 0; comp < 3; ++comp) acc[comp] += c.wdet[q] * H.at_qpts[e * nq + q][comp];
    for (int comp = 0; comp < 3; ++comp) acc[comp] /= sp.mesh().area(e);
    red[e] = acc;
  }
  return red;
}

/// Discrete Hessians of all scalar basis functions, with support on the home
/// element and its edge neighbours. Stored once and reused by every assembly
/// that is linear in the deformation.
class BasisHessianTable {
 public:
  struct Block {
    int elem = -1;
    std::vector<Mat2> vals;  // at the support element's cell quadrature points
    Mat2 avg = Mat2::Zero(); // elementwise average of this contribution
  };
  struct Incoming {
    int sdof;  // contributing scalar dof
    const Block* block;
  };

  explicit BasisHessianTable(const HessianOperator& op) : op_(&op) {
    try {
      build();
    } catch (const std::bad_alloc&) {
      throw std::runtime_error(
          "BasisHessianTable: out of memory while caching basis Hessians (" +
          std::to_string(op.space().scalar_dofs()) + " scalar dofs)");
    }
  }
  // The incoming index holds pointers into blocks_; pin the storage.
  BasisHessianTable(const BasisHessianTable&) = delete;
  BasisHessianTable& operator=(const BasisHessianTable&) = delete;

  const HessianOperator& op() const { return *op_; }
  const std::vector<Block>& blocks(int sdof) const { return blocks_[sdof]; }
  const std::vector<Incoming>& incoming(int elem) const { return incoming_[elem]; }

  /// Reconstructed Hessian of a homogeneous-data field via the cached table.
  DiscreteHessian apply(const DGField& f) const {
    const DGSpace& sp = op_->space();
    const int nq = sp.cell_rule().size();
    DiscreteHessian H;
    H.space = &sp;
    H.at_qpts.assign(static_cast<std::size_t>(sp.n_elements()) * nq,
                     {Mat2::Zero(), Mat2::Zero(), Mat2::Zero()});
    H.data_offset.assign(H.at_qpts.size(), {Mat2::Zero(), Mat2::Zero(), Mat2::Zero()});
    for (int e = 0; e < sp.n_elements(); ++e)
      for (const Incoming& inc : incoming_[e])
        for (int comp = 0; comp < 3; ++comp) {
          const double c = f.coeffs()[comp * sp.scalar_dofs() + inc.sdof];
          if (c == 0.0) continue;
          for (int q = 0; q < nq; ++q) H.at_qpts[e * nq + q][comp] += c * inc.block->vals[q];
        }
    H.reduced = op_->reduce(H.at_qpts);
    return H;
  }

 private:
  Block& block_for(int sdof, int elem) {
    for (Block& b : blocks_[sdof])
      if (b.elem == elem) return b;
    Block b;
    b.elem = elem;
    b.vals.assign(op_->space().cell_rule().size(), Mat2::Zero());
    blocks_[sdof].push_back(std::move(b));
    return blocks_[sdof].back();
  }

  void build() {
    const DGSpace& sp = op_->space();
    const Mesh& mesh = sp.mesh();
    const int nq = sp.cell_rule().size();
    const int npe = sp.npe();
    blocks_.assign(sp.scalar_dofs(), {});
    // Broken Hessian on the home element.
    for (int e = 0; e < sp.n_elements(); ++e) {
      const auto& c = sp.cell(e);
      for (int m = 0; m < npe; ++m) {
        Block& b = block_for(sp.scalar_index(e, m), e);
        for (int q = 0; q < nq; ++q) b.vals[q] = c.at.hess[q * npe + m];
      }
    }
    // Edge liftings, scattered onto the edge patch.
    const int nk = sp.edge_rule().size();
    for (int ei : mesh.active_edges()) {
      const Edge& ed = mesh.edges[ei];
      const auto& ec = sp.edge(ei);
      for (int s = 0; s < 2; ++s) {
        if (ed.elem[s] < 0) continue;
        const double sign = (s == 0) ? 1.0 : -1.0;  // jump = minus trace - plus trace
        for (int m = 0; m < npe; ++m) {
          std::array<std::vector<Vec2>, 3> gdata;
          std::array<std::vector<double>, 3> vdata;
          gdata[0].assign(nk, Vec2::Zero());
          vdata[0].assign(nk, 0.0);
          for (int q = 0; q < nk; ++q) {
            gdata[0][q] = sign * ec.side[s].grad[q * npe + m];
            vdata[0][q] = sign * ec.side[s].value[q * npe + m];
          }
          for (int comp = 1; comp < 3; ++comp) {
            gdata[comp].assign(nk, Vec2::Zero());
            vdata[comp].assign(nk, 0.0);
          }
          const int sdof = sp.scalar_index(ed.elem[s], m);
          if (!op_->config().skip_gradient_terms(ed)) {
            const EdgeLift r = op_->lift_r(ei, gdata);
            scatter(r, op_->lift1_at_main(), op_->lift1_space().npe(), sdof, -1.0);
          }
          const EdgeLift b = op_->lift_b(ei, vdata);
          scatter(b, op_->lift2_at_main(), op_->lift2_space().npe(), sdof, +1.0);
        }
      }
    }
    // Reduced contributions and the incoming (transpose) index.
    incoming_.assign(sp.n_elements(), {});
    for (int sdof = 0; sdof < sp.scalar_dofs(); ++sdof)
      for (Block& b : blocks_[sdof]) {
        const auto& c = sp.cell(b.elem);
        Mat2 acc = Mat2::Zero();
        for (int q = 0; q < nq; ++q) acc += c.wdet[q] * b.vals[q];
        b.avg = acc / mesh.area(b.elem);
        incoming_[b.elem].push_back({sdof, &b});
      }
  }

  void scatter(const EdgeLift& lift, const std::vector<double>& table, int npe_l, int sdof,
               double sign) {
    const int nq = op_->space().cell_rule().size();
    for (int s = 0; s < 2; ++s) {
      if (lift.elems[s] < 0) continue;
      Block& b = block_for(sdof, lift.elems[s]);
      const double* tab = &table[static_cast<std::size_t>(lift.elems[s]) * nq * npe_l];
      for (int q = 0; q < nq; ++q) {
        Mat2 val = Mat2::Zero();
        for (int m = 0; m < npe_l; ++m) val += tab[q * npe_l + m] * lift.coeff[s][0 * npe_l + m];
        b.vals[q] += sign * val;
      }
    }
  }

  const HessianOperator* op_;
  std::vector<std::vector<Block>> blocks_;
  std::vector<std::vector<Incoming>> incoming_;
};

/// Hessian contribution of the Dirichlet data (phi, Phi) alone; constant over
/// a gradient-flow run and assembled once per scenario.
struct HessianOffset {
  std::vector<std::array<Mat2, 3>> at_qpts;  // e*nq + q
  std::vector<std::array<Mat2, 3>> avg;      // per element
  bool any = false;
};

inline HessianOffset assemble_data_offset(const HessianOperator& op, const BoundaryData& data) {
  const DGSpace& sp = op.space();
  const int nq = sp.cell_rule().size();
  HessianOffset off;
  off.at_qpts.assign(static_cast<std::size_t>(sp.n_elements()) * nq,
                     {Mat2::Zero(), Mat2::Zero(), Mat2::Zero()});
  for (int ei : sp.mesh().active_edges()) {
    const Edge& ed = sp.mesh().edges[ei];
    if (ed.cls != EdgeClass::dirichlet) continue;
    off.any = true;
    const auto& ec = sp.edge(ei);
    std::array<std::vector<Vec2>, 3> gPhi;
    std::array<std::vector<double>, 3> gphi;
    for (int comp = 0; comp < 3; ++comp) {
      gPhi[comp].resize(ec.xphys.size());
      gphi[comp].resize(ec.xphys.size());
    }
    for (std::size_t q = 0; q < ec.xphys.size(); ++q) {
      const Mat32 Phi = data.gradient(ec.xphys[q]);
      const Vec3 phi = data.value(ec.xphys[q]);
      for (int comp = 0; comp < 3; ++comp) {
        gPhi[comp][q] = Phi.row(comp).transpose();
        gphi[comp][q] = phi[comp];
      }
    }
    if (!op.config().skip_gradient_terms(ed))
      op.accumulate(op.lift_r(ei, gPhi), op.lift1_space(), op.lift1_at_main(), off.at_qpts, +1.0);
    op.accumulate(op.lift_b(ei, gphi), op.lift2_space(), op.lift2_at_main(), off.at_qpts, -1.0);
  }
  off.avg = op.reduce(off.at_qpts);
  return off;
}

}  // namespace bilayer
