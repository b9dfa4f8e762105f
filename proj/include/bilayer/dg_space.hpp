#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "bilayer/mesh.hpp"
#include "bilayer/quadrature.hpp"

namespace bilayer {

/// Scalar Lagrange basis on [0,1] with Gauss-Lobatto interpolation nodes,
/// stored in monomial form for fast evaluation of values and derivatives.
class Lagrange1D {
 public:
  explicit Lagrange1D(int degree)
      : degree_(degree),
        nodes_(degree == 0 ? std::vector<double>{0.5} : gauss_lobatto_nodes(degree + 1)) {
    const int n = degree + 1;
    Eigen::MatrixXd V(n, n);
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < n; ++p) V(j, p) = std::pow(nodes_[j], p);
    coef_ = V.fullPivLu().solve(Eigen::MatrixXd::Identity(n, n));
  }

  int degree() const { return degree_; }
  const std::vector<double>& nodes() const { return nodes_; }

  double value(int i, double t) const { return horner(coef_.col(i), 0, t); }
  double deriv(int i, double t) const { return horner(coef_.col(i), 1, t); }
  double deriv2(int i, double t) const { return horner(coef_.col(i), 2, t); }

 private:
  double horner(const Eigen::VectorXd& c, int d, double t) const {
    double acc = 0.0;
    for (int p = static_cast<int>(c.size()) - 1; p >= d; --p) {
      double f = 1.0;
      for (int q = 0; q < d; ++q) f *= (p - q);
      acc = acc * t + f * c[p];
    }
    return acc;
  }
  int degree_;
  std::vector<double> nodes_;
  Eigen::MatrixXd coef_;  // column i = monomial coefficients of L_i
};

/// Broken tensor-product space Q_k on a quadrilateral mesh, fully
/// discontinuous, together with the cell and edge quadrature caches used
/// throughout assembly. Scalar dofs are blocked per element; vector fields
/// use three stacked scalar blocks (component-major global layout).
class DGSpace {
 public:
  DGSpace(const Mesh& mesh, int degree = 2)
      : mesh_(&mesh),
        degree_(degree),
        basis_(degree),
        cell_rule_(tensor_rule(gauss_legendre(degree + 2))),
        edge_rule_(gauss_legendre(degree + 2)),
        npe_((degree + 1) * (degree + 1)) {
    if (degree < 0) throw std::invalid_argument("DGSpace: polynomial degree must be >= 0");
    build_caches();
  }

  const Mesh& mesh() const { return *mesh_; }
  int degree() const { return degree_; }
  int npe() const { return npe_; }
  int n_elements() const { return mesh_->n_elements(); }
  int scalar_dofs() const { return npe_ * mesh_->n_elements(); }
  int total_dofs() const { return 3 * scalar_dofs(); }
  int scalar_index(int elem, int node) const { return elem * npe_ + node; }
  int dof_index(int comp, int elem, int node) const {
    return comp * scalar_dofs() + elem * npe_ + node;
  }

  const QuadRule2D& cell_rule() const { return cell_rule_; }
  const QuadRule1D& edge_rule() const { return edge_rule_; }

  struct ShapeEval {
    std::vector<double> value;
    std::vector<Vec2> grad;  // physical gradients
    std::vector<Mat2> hess;  // physical Hessians (empty if not requested)
  };

  /// Basis values and physical derivatives at a reference point. The Hessian
  /// pushforward includes the curvature contribution of non-affine maps.
  ShapeEval eval_shape(int elem, const Vec2& xhat, bool need_hess = true) const {
    ShapeEval out;
    out.value.resize(npe_);
    out.grad.resize(npe_);
    if (need_hess) out.hess.resize(npe_);
    const GeometricMap& map = mesh_->maps[elem];
    const Mat2 J = map.jacobian(xhat);
    const double det = J.determinant();
    if (!(det > 0.0)) throw std::runtime_error("DGSpace: singular geometric map");
    const Mat2 Jinv = J.inverse();
    const auto Fss = need_hess ? map.second_derivatives(xhat) : std::array<Mat2, 2>{};
    const int n1 = degree_ + 1;
    std::vector<double> la(n1), lb(n1), da(n1), db(n1), d2a(n1), d2b(n1);
    for (int i = 0; i < n1; ++i) {
      la[i] = basis_.value(i, xhat[0]);
      lb[i] = basis_.value(i, xhat[1]);
      da[i] = basis_.deriv(i, xhat[0]);
      db[i] = basis_.deriv(i, xhat[1]);
      if (need_hess) {
        d2a[i] = basis_.deriv2(i, xhat[0]);
        d2b[i] = basis_.deriv2(i, xhat[1]);
      }
    }
    for (int ib = 0; ib < n1; ++ib)
      for (int ia = 0; ia < n1; ++ia) {
        const int m = ib * n1 + ia;
        out.value[m] = la[ia] * lb[ib];
        const Vec2 gref(da[ia] * lb[ib], la[ia] * db[ib]);
        const Vec2 g = Jinv.transpose() * gref;
        out.grad[m] = g;
        if (need_hess) {
          Mat2 Href;
          Href(0, 0) = d2a[ia] * lb[ib];
          Href(1, 1) = la[ia] * d2b[ib];
          Href(0, 1) = Href(1, 0) = da[ia] * db[ib];
          const Mat2 corr = Href - g[0] * Fss[0] - g[1] * Fss[1];
          out.hess[m] = Jinv.transpose() * corr * Jinv;
        }
      }
    return out;
  }

  struct CellCache {
    std::vector<double> wdet;  // quadrature weight * |det J|
    std::vector<Vec2> xphys;
    ShapeEval at;  // flattened q*npe + m
  };
  struct EdgeSideCache {
    std::vector<double> value;  // q*npe + m
    std::vector<Vec2> grad;
  };
  struct EdgeCache {
    std::vector<double> ds;  // quadrature weight * arc length factor
    std::vector<Vec2> xphys;
    std::vector<Vec2> normal;
    std::array<EdgeSideCache, 2> side;
  };

  const CellCache& cell(int e) const { return cells_[e]; }
  const EdgeCache& edge(int ei) const { return edge_caches_[ei]; }
  const ShapeEval& barycenter(int e) const { return bary_[e]; }
  const Eigen::LLT<Eigen::MatrixXd>& mass_llt(int e) const { return mass_[e]; }

 private:
  void build_caches() {
    const int ne = mesh_->n_elements();
    cells_.resize(ne);
    bary_.resize(ne);
    mass_.resize(ne);
    const int nq = cell_rule_.size();
    for (int e = 0; e < ne; ++e) {
      CellCache& c = cells_[e];
      c.wdet.resize(nq);
      c.xphys.resize(nq);
      c.at.value.resize(nq * npe_);
      c.at.grad.resize(nq * npe_);
      c.at.hess.resize(nq * npe_);
      for (int q = 0; q < nq; ++q) {
        const Vec2& xh = cell_rule_.points[q];
        c.wdet[q] = cell_rule_.weights[q] * mesh_->maps[e].jacobian(xh).determinant();
        c.xphys[q] = mesh_->maps[e].point(xh);
        const ShapeEval se = eval_shape(e, xh);
        for (int m = 0; m < npe_; ++m) {
          c.at.value[q * npe_ + m] = se.value[m];
          c.at.grad[q * npe_ + m] = se.grad[m];
          c.at.hess[q * npe_ + m] = se.hess[m];
        }
      }
      bary_[e] = eval_shape(e, Vec2(0.5, 0.5));
      Eigen::MatrixXd M = Eigen::MatrixXd::Zero(npe_, npe_);
      for (int q = 0; q < nq; ++q)
        for (int m = 0; m < npe_; ++m)
          for (int n = 0; n <= m; ++n)
            M(m, n) += c.wdet[q] * c.at.value[q * npe_ + m] * c.at.value[q * npe_ + n];
      M = M.selfadjointView<Eigen::Lower>();
      mass_[e].compute(M);
      if (mass_[e].info() != Eigen::Success)
        throw std::runtime_error("DGSpace: singular element mass matrix");
    }
    const int nk = edge_rule_.size();
    edge_caches_.resize(mesh_->n_edges());
    for (int ei = 0; ei < mesh_->n_edges(); ++ei) {
      const Edge& ed = mesh_->edges[ei];
      EdgeCache& ec = edge_caches_[ei];
      ec.ds.resize(nk);
      ec.xphys.resize(nk);
      ec.normal.resize(nk);
      for (int q = 0; q < nk; ++q) {
        const double t = edge_rule_.points[q];
        ec.ds[q] = edge_rule_.weights[q] * ed.tangent(t).norm();
        ec.xphys[q] = ed.point(t);
        ec.normal[q] = ed.unit_normal(t);
      }
      for (int s = 0; s < 2; ++s) {
        if (ed.elem[s] < 0) continue;
        EdgeSideCache& sc = ec.side[s];
        sc.value.resize(nk * npe_);
        sc.grad.resize(nk * npe_);
        for (int q = 0; q < nk; ++q) {
          const Vec2 xh = mesh_->edge_ref_point(ed, s, edge_rule_.points[q]);
          const ShapeEval se = eval_shape(ed.elem[s], xh, false);
          for (int m = 0; m < npe_; ++m) {
            sc.value[q * npe_ + m] = se.value[m];
            sc.grad[q * npe_ + m] = se.grad[m];
          }
        }
      }
    }
  }

  const Mesh* mesh_;
  int degree_;
  Lagrange1D basis_;
  QuadRule2D cell_rule_;
  QuadRule1D edge_rule_;
  int npe_;
  std::vector<CellCache> cells_;
  std::vector<ShapeEval> bary_;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> mass_;
  std::vector<EdgeCache> edge_caches_;
};

/// Dirichlet data pair: the deformation trace and its full gradient.
struct BoundaryData {
  std::function<Vec3(const Vec2&)> value;
  std::function<Mat32(const Vec2&)> gradient;
};

enum class DataCompatibility { none, compatible, incompatible };

/// Vector-valued broken polynomial field with optional boundary data.
/// Fields without data behave as members of the homogeneous space (zero data).
class DGField {
 public:
  explicit DGField(const DGSpace& space)
      : space_(&space), coeffs_(Eigen::VectorXd::Zero(space.total_dofs())) {}

  const DGSpace& space() const { return *space_; }
  Eigen::VectorXd& coeffs() { return coeffs_; }
  const Eigen::VectorXd& coeffs() const { return coeffs_; }

  void set_boundary_data(BoundaryData data) { data_ = std::move(data); }
  bool has_boundary_data() const { return data_.has_value(); }
  const BoundaryData& boundary_data() const { return *data_; }

  double coeff(int comp, int elem, int node) const {
    return coeffs_[space_->dof_index(comp, elem, node)];
  }
  double& coeff(int comp, int elem, int node) {
    return coeffs_[space_->dof_index(comp, elem, node)];
  }

  Vec3 value(int elem, const Vec2& xhat) const {
    const auto se = space_->eval_shape(elem, xhat, false);
    return value_from(elem, se.value.data());
  }
  Mat32 gradient(int elem, const Vec2& xhat) const {
    const auto se = space_->eval_shape(elem, xhat, false);
    return gradient_from(elem, se.grad.data());
  }
  std::array<Mat2, 3> hessian(int elem, const Vec2& xhat) const {
    const auto se = space_->eval_shape(elem, xhat);
    std::array<Mat2, 3> H{Mat2::Zero(), Mat2::Zero(), Mat2::Zero()};
    for (int c = 0; c < 3; ++c)
      for (int m = 0; m < space_->npe(); ++m) H[c] += coeff(c, elem, m) * se.hess[m];
    return H;
  }

  // Fast paths against precomputed shape tables (cell/edge/barycenter caches).
  Vec3 value_from(int elem, const double* basis_values) const {
    Vec3 v = Vec3::Zero();
    for (int c = 0; c < 3; ++c)
      for (int m = 0; m < space_->npe(); ++m) v[c] += coeff(c, elem, m) * basis_values[m];
    return v;
  }
  Mat32 gradient_from(int elem, const Vec2* basis_grads) const {
    Mat32 g = Mat32::Zero();
    for (int c = 0; c < 3; ++c)
      for (int m = 0; m < space_->npe(); ++m)
        g.row(c) += coeff(c, elem, m) * basis_grads[m].transpose();
    return g;
  }
  Mat32 gradient_at_barycenter(int elem) const {
    return gradient_from(elem, space_->barycenter(elem).grad.data());
  }

  /// Whether the attached data satisfies the clamped-isometry compatibility
  /// conditions (gradient consistency and orthonormal frame) on the Dirichlet
  /// skeleton. Fields without data report `none`.
  DataCompatibility data_compatibility(double tol_iso = 1e-10) const {
    if (!data_) return DataCompatibility::none;
    const double fd_eps = 1e-6;
    for (int ei : space_->mesh().active_edges()) {
      const Edge& ed = space_->mesh().edges[ei];
      if (ed.cls != EdgeClass::dirichlet) continue;
      const auto& ec = space_->edge(ei);
      for (std::size_t q = 0; q < ec.xphys.size(); ++q) {
        const Vec2& x = ec.xphys[q];
        const Mat32 Phi = data_->gradient(x);
        if ((Phi.transpose() * Phi - Mat2::Identity()).norm() > tol_iso)
          return DataCompatibility::incompatible;
        Mat32 fd;
        for (int d = 0; d < 2; ++d) {
          Vec2 xp = x, xm = x;
          xp[d] += fd_eps;
          xm[d] -= fd_eps;
          fd.col(d) = (data_->value(xp) - data_->value(xm)) / (2.0 * fd_eps);
        }
        if ((fd - Phi).norm() > 1e-7 * (1.0 + Phi.norm()))
          return DataCompatibility::incompatible;
      }
    }
    return DataCompatibility::compatible;
  }

 private:
  const DGSpace* space_;
  Eigen::VectorXd coeffs_;
  std::optional<BoundaryData> data_;
};

/// Value and gradient jumps of a field at the quadrature points of an active
/// edge. Interior edges take minus-trace minus plus-trace; Dirichlet edges
/// subtract the boundary data (zero if the field carries none).
struct EdgeJumps {
  std::vector<Vec3> value;
  std::vector<Mat32> grad;
};

inline EdgeJumps edge_jumps(const DGField& f, int edge_id) {
  const DGSpace& sp = f.space();
  const Edge& ed = sp.mesh().edges[edge_id];
  if (ed.cls == EdgeClass::free_boundary)
    throw std::invalid_argument("edge_jumps: free edges carry no jumps");
  const auto& ec = sp.edge(edge_id);
  const int nq = static_cast<int>(ec.ds.size());
  const int npe = sp.npe();
  EdgeJumps J;
  J.value.resize(nq);
  J.grad.resize(nq);
  for (int q = 0; q < nq; ++q) {
    const Vec3 vm = f.value_from(ed.elem[0], &ec.side[0].value[q * npe]);
    const Mat32 gm = f.gradient_from(ed.elem[0], &ec.side[0].grad[q * npe]);
    if (ed.cls == EdgeClass::interior) {
      J.value[q] = vm - f.value_from(ed.elem[1], &ec.side[1].value[q * npe]);
      J.grad[q] = gm - f.gradient_from(ed.elem[1], &ec.side[1].grad[q * npe]);
    } else {
      Vec3 phi = Vec3::Zero();
      Mat32 Phi = Mat32::Zero();
      if (f.has_boundary_data()) {
        phi = f.boundary_data().value(ec.xphys[q]);
        Phi = f.boundary_data().gradient(ec.xphys[q]);
      }
      J.value[q] = vm - phi;
      J.grad[q] = gm - Phi;
    }
  }
  return J;
}

/// Scalar broken field over an arbitrary DGSpace degree, used for trace
/// averages of test tensors (e.g. lifting-space fields) in diagnostics.
struct ScalarBroken {
  const DGSpace* space;
  Eigen::VectorXd coeffs;  // length space->scalar_dofs()

  double eval_from(int elem, const double* basis_values) const {
    double v = 0.0;
    for (int m = 0; m < space->npe(); ++m)
      v += coeffs[space->scalar_index(elem, m)] * basis_values[m];
    return v;
  }
  Vec2 grad_from(int elem, const Vec2* basis_grads) const {
    Vec2 g = Vec2::Zero();
    for (int m = 0; m < space->npe(); ++m)
      g += coeffs[space->scalar_index(elem, m)] * basis_grads[m];
    return g;
  }
};

/// Trace average at edge quadrature points: mean of the two traces on
/// interior edges, the single trace on boundary edges.
inline std::vector<double> edge_average_values(const ScalarBroken& f, int edge_id) {
  const DGSpace& sp = *f.space;
  const Edge& ed = sp.mesh().edges[edge_id];
  const auto& ec = sp.edge(edge_id);
  const int nq = static_cast<int>(ec.ds.size());
  const int npe = sp.npe();
  std::vector<double> avg(nq);
  for (int q = 0; q < nq; ++q) {
    double v = f.eval_from(ed.elem[0], &ec.side[0].value[q * npe]);
    if (!ed.is_boundary())
      v = 0.5 * (v + f.eval_from(ed.elem[1], &ec.side[1].value[q * npe]));
    avg[q] = v;
  }
  return avg;
}

inline std::vector<Vec2> edge_average_gradients(const ScalarBroken& f, int edge_id) {
  const DGSpace& sp = *f.space;
  const Edge& ed = sp.mesh().edges[edge_id];
  const auto& ec = sp.edge(edge_id);
  const int nq = static_cast<int>(ec.ds.size());
  const int npe = sp.npe();
  std::vector<Vec2> avg(nq);
  for (int q = 0; q < nq; ++q) {
    Vec2 g = f.grad_from(ed.elem[0], &ec.side[0].grad[q * npe]);
    if (!ed.is_boundary())
      g = 0.5 * (g + f.grad_from(ed.elem[1], &ec.side[1].grad[q * npe]));
    avg[q] = g;
  }
  return avg;
}

/// Elementwise L^2 projection onto the broken space; exact for functions that
/// already lie in the mapped local space.
inline DGField interpolate(const DGSpace& space, const std::function<Vec3(const Vec2&)>& f,
                           std::optional<BoundaryData> data = {}) {
  DGField out(space);
  const int npe = space.npe();
  Eigen::MatrixXd rhs(npe, 3);
  for (int e = 0; e < space.n_elements(); ++e) {
    const auto& c = space.cell(e);
    rhs.setZero();
    for (std::size_t q = 0; q < c.wdet.size(); ++q) {
      const Vec3 fv = f(c.xphys[q]);
      for (int m = 0; m < npe; ++m)
        rhs.row(m) += c.wdet[q] * c.at.value[q * npe + m] * fv.transpose();
    }
    const Eigen::MatrixXd sol = space.mass_llt(e).solve(rhs);
    for (int comp = 0; comp < 3; ++comp)
      for (int m = 0; m < npe; ++m) out.coeff(comp, e, m) = sol(m, comp);
  }
  if (data) out.set_boundary_data(std::move(*data));
  return out;
}

/// The flat reference deformation x -> (x1, x2, 0) with matching clamped data.
inline DGField flat_plate_field(const DGSpace& space) {
  BoundaryData data;
  data.value = [](const Vec2& x) { return Vec3(x[0], x[1], 0.0); };
  data.gradient = [](const Vec2&) {
    Mat32 g = Mat32::Zero();
    g(0, 0) = 1.0;
    g(1, 1) = 1.0;
    return g;
  };
  return interpolate(
      space, [](const Vec2& x) { return Vec3(x[0], x[1], 0.0); }, data);
}

}  // namespace bilayer
