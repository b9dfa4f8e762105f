#pragma once

#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "bilayer/dg_space.hpp"

namespace bilayer::oracle {

/// Closed-form solution of (A^T B + B^T A) : C = |C|^2 for full-rank 3x2 B and
/// symmetric 2x2 C, with the bound |A| <= |C| / (2 sigma_2(B)).
struct MatrixLemmaResult {
  Mat32 A = Mat32::Zero();
  double residual = 0.0;     // |(A^T B + B^T A) : C - |C|^2|
  double sigma2 = 0.0;       // smallest singular value of B
  bool bound_holds = false;  // |A| <= |C| / (2 sigma_2)
};

inline MatrixLemmaResult solve_matrix_equation(const Mat32& B, const Mat2& C) {
  if (std::abs(C(0, 1) - C(1, 0)) > 1e-13 * (1.0 + C.norm()))
    throw std::invalid_argument("solve_matrix_equation: C must be symmetric");
  // sigma_2 from the closed-form eigenvalues of the 2x2 Gram matrix.
  const Mat2 G = B.transpose() * B;
  const double tr = G.trace();
  const double disc = std::sqrt(std::max(0.0, tr * tr - 4.0 * G.determinant()));
  const double lmin = 0.5 * (tr - disc);
  const double sigma2 = std::sqrt(std::max(0.0, lmin));
  if (!(sigma2 > 1e-14 * (1.0 + B.norm())))
    throw std::invalid_argument("solve_matrix_equation: B is rank deficient");
  MatrixLemmaResult r;
  r.sigma2 = sigma2;
  const double c2 = C.squaredNorm();
  if (c2 == 0.0) {
    r.bound_holds = true;
    return r;  // A = 0 solves the degenerate case
  }
  const Mat32 BC = B * C;
  r.A = BC * (c2 / (2.0 * BC.squaredNorm()));
  const double lhs = ((r.A.transpose() * B + B.transpose() * r.A).cwiseProduct(C)).sum();
  r.residual = std::abs(lhs - c2);
  r.bound_holds = r.A.norm() <= std::sqrt(c2) / (2.0 * sigma2) + 1e-14;
  return r;
}

/// Central finite-difference derivative of a scalar functional of a field
/// along a direction, used to certify the assembled first variations.
template <class Functional>
double fd_variation(Functional&& functional, const DGField& y, const DGField& v, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw std::invalid_argument("fd_variation: eps out of the supported range");
  DGField yp = y, ym = y;
  yp.coeffs() += eps * v.coeffs();
  ym.coeffs() -= eps * v.coeffs();
  return (functional(yp) - functional(ym)) / (2.0 * eps);
}

/// Extremal eigenvalue estimates of a symmetric positive operator via Lanczos
/// with full reorthogonalization.
struct SpectrumEstimate {
  double lambda_max = 0.0;
  double lambda_min = 0.0;
  double condition = 0.0;
  int iterations = 0;
};

template <class Apply>
SpectrumEstimate lanczos_extremal(Apply&& apply, int dim, int max_iters = 80,
                                  unsigned seed = 20240817) {
  using Eigen::VectorXd;
  const int m = std::min(dim, max_iters);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = unif(rng);
  v.normalize();
  std::vector<VectorXd> basis;
  std::vector<double> alpha, beta;
  VectorXd w;
  for (int k = 0; k < m; ++k) {
    basis.push_back(v);
    w = apply(v);
    const double a = v.dot(w);
    alpha.push_back(a);
    w -= a * v;
    if (k > 0) w -= beta.back() * basis[k - 1];
    for (const VectorXd& b : basis) w -= b.dot(w) * b;  // reorthogonalize
    const double nb = w.norm();
    if (nb < 1e-13 * std::abs(alpha[0] + 1.0)) break;  // invariant subspace found
    beta.push_back(nb);
    v = w / nb;
  }
  const int n = static_cast<int>(alpha.size());
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    T(i, i) = alpha[i];
    if (i + 1 < n) T(i, i + 1) = T(i + 1, i) = beta[i];
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
  SpectrumEstimate out;
  out.lambda_min = es.eigenvalues().minCoeff();
  out.lambda_max = es.eigenvalues().maxCoeff();
  out.condition = out.lambda_max / out.lambda_min;
  out.iterations = n;
  return out;
}

}  // namespace bilayer::oracle
