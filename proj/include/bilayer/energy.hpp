#pragma once

#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "bilayer/hessian.hpp"

namespace bilayer {

/// Piecewise-constant symmetric spontaneous-curvature field. Encodes the
/// layer mismatch driving the bending.
struct SpontaneousCurvature {
  std::vector<Mat2> Z;  // per element

  static SpontaneousCurvature constant(const Mesh& mesh, const Mat2& z) {
    check_symmetric(z);
    SpontaneousCurvature s;
    s.Z.assign(mesh.n_elements(), z);
    return s;
  }
  static SpontaneousCurvature zero(const Mesh& mesh) {
    return constant(mesh, Mat2::Zero());
  }
  /// One matrix per material region (crease sides, rotated device sectors).
  static SpontaneousCurvature by_region(const Mesh& mesh, const std::vector<Mat2>& per_region) {
    SpontaneousCurvature s;
    s.Z.resize(mesh.n_elements());
    for (int e = 0; e < mesh.n_elements(); ++e) {
      const int r = mesh.region[e];
      if (r < 0 || r >= static_cast<int>(per_region.size()))
        throw std::invalid_argument("SpontaneousCurvature: region without a curvature matrix");
      check_symmetric(per_region[r]);
      s.Z[e] = per_region[r];
    }
    return s;
  }
  /// R(angle)^T D R(angle), for sectors of a rotated device.
  static Mat2 rotated(double angle, const Mat2& d) {
    Mat2 R;
    R << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
    return R.transpose() * d * R;
  }

  double max_norm() const {
    double m = 0.0;
    for (const Mat2& z : Z) m = std::max(m, z.norm());
    return m;
  }

 private:
  static void check_symmetric(const Mat2& z) {
    if (z(0, 1) != z(1, 0))
      throw std::invalid_argument("SpontaneousCurvature: matrix must be symmetric");
  }
};

/// Piecewise-constant symmetric Lagrange multiplier (3 scalars per element).
struct MultiplierField {
  std::vector<Mat2> mu;

  static MultiplierField zero(const Mesh& mesh) {
    MultiplierField m;
    m.mu.assign(mesh.n_elements(), Mat2::Zero());
    return m;
  }
  double l2_norm(const Mesh& mesh) const {
    double acc = 0.0;
    for (int e = 0; e < mesh.n_elements(); ++e) acc += mesh.area(e) * mu[e].squaredNorm();
    return std::sqrt(acc);
  }
};

/// Linearized isometry residual L[v; y] = grad(v)^T grad(y) + grad(y)^T grad(v)
/// evaluated at the element barycenter.
inline Mat2 linearized_constraint(const DGField& y, const DGField& v, int elem) {
  const Mat32 gy = y.gradient_at_barycenter(elem);
  const Mat32 gv = v.gradient_at_barycenter(elem);
  return gv.transpose() * gy + gy.transpose() * gv;
}

struct DefectReport {
  std::vector<double> per_element;
  double max = 0.0;
};

/// Frobenius deviation of the first fundamental form from the identity at
/// element barycenters.
inline DefectReport isometry_defect(const DGField& y) {
  const DGSpace& sp = y.space();
  DefectReport r;
  r.per_element.resize(sp.n_elements());
  for (int e = 0; e < sp.n_elements(); ++e) {
    const Mat32 g = y.gradient_at_barycenter(e);
    r.per_element[e] = (g.transpose() * g - Mat2::Identity()).norm();
    r.max = std::max(r.max, r.per_element[e]);
  }
  return r;
}

namespace detail {

/// Edge-jump pairings over the active skeleton, weighted by h_e^{-1} for the
/// gradient term and h_e^{-3} for the value term. Crease mode drops the
/// gradient term on crease edges.
struct JumpPairings {
  double grad = 0.0;   // sum h^-1 [grad u] : [grad v]
  double value = 0.0;  // sum h^-3 [u] . [v]
};

inline JumpPairings jump_pairings(const DGField& u, const DGField& v,
                                  const LiftingConfig& cfg) {
  const DGSpace& sp = u.space();
  if (&sp != &v.space()) throw std::invalid_argument("jump_pairings: fields on different spaces");
  JumpPairings out;
  for (int ei : sp.mesh().active_edges()) {
    const Edge& ed = sp.mesh().edges[ei];
    const auto& ec = sp.edge(ei);
    const EdgeJumps Ju = edge_jumps(u, ei);
    const EdgeJumps Jv = (&u == &v) ? Ju : edge_jumps(v, ei);
    const double w1 = 1.0 / ed.diameter;
    const double w0 = w1 * w1 * w1;
    double g = 0.0, val = 0.0;
    for (std::size_t q = 0; q < ec.ds.size(); ++q) {
      g += ec.ds[q] * Ju.grad[q].cwiseProduct(Jv.grad[q]).sum();
      val += ec.ds[q] * Ju.value[q].dot(Jv.value[q]);
    }
    if (!cfg.skip_gradient_terms(ed)) out.grad += w1 * g;
    out.value += w0 * val;
  }
  return out;
}

inline double broken_hessian_pairing(const DGField& u, const DGField& v) {
  const DGSpace& sp = u.space();
  const int nq = sp.cell_rule().size();
  const int npe = sp.npe();
  double acc = 0.0;
  for (int e = 0; e < sp.n_elements(); ++e) {
    const auto& c = sp.cell(e);
    for (int q = 0; q < nq; ++q)
      for (int comp = 0; comp < 3; ++comp) {
        Mat2 Hu = Mat2::Zero(), Hv = Mat2::Zero();
        for (int m = 0; m < npe; ++m) {
          Hu += u.coeff(comp, e, m) * c.at.hess[q * npe + m];
          Hv += v.coeff(comp, e, m) * c.at.hess[q * npe + m];
        }
        acc += c.wdet[q] * ddot(Hu, Hv);
      }
  }
  return acc;
}

inline double mass_pairing(const DGField& u, const DGField& v) {
  const DGSpace& sp = u.space();
  const int nq = sp.cell_rule().size();
  const int npe = sp.npe();
  double acc = 0.0;
  for (int e = 0; e < sp.n_elements(); ++e) {
    const auto& c = sp.cell(e);
    for (int q = 0; q < nq; ++q) {
      const Vec3 uv = u.value_from(e, &c.at.value[q * npe]);
      const Vec3 vv = v.value_from(e, &c.at.value[q * npe]);
      acc += c.wdet[q] * uv.dot(vv);
    }
  }
  return acc;
}

inline double hessian_pairing(const DiscreteHessian& Hu, const DiscreteHessian& Hv) {
  const DGSpace& sp = *Hu.space;
  const int nq = sp.cell_rule().size();
  double acc = 0.0;
  for (int e = 0; e < sp.n_elements(); ++e) {
    const auto& c = sp.cell(e);
    for (int q = 0; q < nq; ++q)
      for (int comp = 0; comp < 3; ++comp)
        acc += c.wdet[q] * ddot(Hu.at_qpts[e * nq + q][comp], Hv.at_qpts[e * nq + q][comp]);
  }
  return acc;
}

}  // namespace detail

/// Mesh-dependent H^2 form: broken Hessians plus weighted jump terms, with an
/// optional L^2 term that removes the kernel under free boundary conditions.
/// Boundary jumps use each field's own data.
inline double h2_product(const DGField& u, const DGField& v, double l2_weight = 0.0,
                         const LiftingConfig& cfg = {}) {
  if (&u.space() != &v.space())
    throw std::invalid_argument("h2_product: fields on different spaces");
  const auto jp = detail::jump_pairings(u, v, cfg);
  double acc = detail::broken_hessian_pairing(u, v) + jp.grad + jp.value;
  if (l2_weight != 0.0) acc += l2_weight * detail::mass_pairing(u, v);
  return acc;
}

inline double h2_norm(const DGField& v, double l2_weight = 0.0, const LiftingConfig& cfg = {}) {
  return std::sqrt(std::max(0.0, h2_product(v, v, l2_weight, cfg)));
}

/// Bending energy: half the squared reconstructed Hessian plus the jump
/// stabilization. Crease mode omits the gradient penalty across the crease.
inline double bending_energy(const DGField& y, const DiscreteHessian& H, double gamma0,
                             double gamma1, const LiftingConfig& cfg = {},
                             double* stabilization = nullptr) {
  if (gamma0 <= 0.0 || gamma1 <= 0.0)
    throw std::invalid_argument("bending_energy: stabilization parameters must be positive");
  const auto jp = detail::jump_pairings(y, y, cfg);
  const double S = gamma1 * jp.grad + gamma0 * jp.value;
  if (stabilization) *stabilization = S;
  return 0.5 * detail::hessian_pairing(H, H) + S;
}

inline double bending_energy(const DGField& y, const HessianOperator& op, double gamma0 = 1.0,
                             double gamma1 = 1.0, double* stabilization = nullptr) {
  const DiscreteHessian H = op(y);
  return bending_energy(y, H, gamma0, gamma1, op.config(), stabilization);
}

/// Cubic interaction energy by midpoint quadrature. The reduced Hessian is
/// elementwise constant and the unnormalized discrete normal
/// d1 y x d2 y is taken at the barycenter.
inline double cubic_energy(const DGField& y, const std::vector<std::array<Mat2, 3>>& reduced,
                           const SpontaneousCurvature& Z) {
  const DGSpace& sp = y.space();
  double acc = 0.0;
  for (int e = 0; e < sp.n_elements(); ++e) {
    const Mat32 g = y.gradient_at_barycenter(e);
    const Vec3 nu = g.col(0).cross(g.col(1));
    double s = 0.0;
    for (int comp = 0; comp < 3; ++comp) s += nu[comp] * ddot(reduced[e][comp], Z.Z[e]);
    acc += sp.mesh().area(e) * s;
  }
  return acc;
}

inline double cubic_energy(const DGField& y, const HessianOperator& op,
                           const SpontaneousCurvature& Z) {
  return cubic_energy(y, op(y).reduced, Z);
}

struct EnergyReport {
  double bending = 0.0;        // includes the stabilization
  double stabilization = 0.0;
  double cubic = 0.0;
  double total = 0.0;          // bending - cubic
  double max_defect = 0.0;
  std::vector<double> defect;  // per element
};

inline EnergyReport energy_report(const DGField& y, const SpontaneousCurvature& Z,
                                  const HessianOperator& op, double gamma0 = 1.0,
                                  double gamma1 = 1.0) {
  const DiscreteHessian H = op(y);
  EnergyReport r;
  r.bending = bending_energy(y, H, gamma0, gamma1, op.config(), &r.stabilization);
  r.cubic = cubic_energy(y, H.reduced, Z);
  r.total = r.bending - r.cubic;
  DefectReport d = isometry_defect(y);
  r.defect = std::move(d.per_element);
  r.max_defect = d.max;
  return r;
}

/// First variation of the bending energy. The stabilization enters with a
/// factor two since the energy is quadratic in the jumps; in particular
/// a_form(v, v) = 2 * bending_energy(v) for homogeneous fields.
inline double a_form(const DGField& u, const DGField& v, const HessianOperator& op,
                     double gamma0 = 1.0, double gamma1 = 1.0) {
  const auto jp = detail::jump_pairings(u, v, op.config());
  return detail::hessian_pairing(op(u), op(v)) + 2.0 * gamma1 * jp.grad + 2.0 * gamma0 * jp.value;
}

/// First variation of the cubic energy at y_prev in the direction of the
/// homogeneous test field v.
inline double ell_form(const DGField& y_prev, const DGField& v, const SpontaneousCurvature& Z,
                       const HessianOperator& op) {
  const DGSpace& sp = y_prev.space();
  const auto red_y = op(y_prev).reduced;
  const auto red_v = op(v).reduced;
  double acc = 0.0;
  for (int e = 0; e < sp.n_elements(); ++e) {
    const Mat32 gy = y_prev.gradient_at_barycenter(e);
    const Mat32 gv = v.gradient_at_barycenter(e);
    const Vec3 nu = gy.col(0).cross(gy.col(1));
    const Vec3 nu_var = gv.col(0).cross(gy.col(1)) + gy.col(0).cross(gv.col(1));
    double s = 0.0;
    for (int comp = 0; comp < 3; ++comp)
      s += nu[comp] * ddot(red_v[e][comp], Z.Z[e]) + nu_var[comp] * ddot(red_y[e][comp], Z.Z[e]);
    acc += sp.mesh().area(e) * s;
  }
  return acc;
}

/// Constant part of the full curvature-mismatch energy, half the squared
/// curvature integral. Adding it to (bending - cubic) gives the energy in the
/// reporting convention used for the reference equilibrium values.
inline double curvature_energy_offset(const Mesh& mesh, const SpontaneousCurvature& Z) {
  double acc = 0.0;
  for (int e = 0; e < mesh.n_elements(); ++e) acc += mesh.area(e) * Z.Z[e].squaredNorm();
  return 0.5 * acc;
}

/// Constraint pairing b(y; v, mu) = sum_T |T| L[v; y](x_T) : mu_T.
inline double b_form(const DGField& y_prev, const DGField& v, const MultiplierField& mu) {
  const DGSpace& sp = y_prev.space();
  double acc = 0.0;
  for (int e = 0; e < sp.n_elements(); ++e)
    acc += sp.mesh().area(e) * ddot(linearized_constraint(y_prev, v, e), mu.mu[e]);
  return acc;
}

}  // namespace bilayer
