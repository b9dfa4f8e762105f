#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace bilayer {

/// One-dimensional quadrature rule on the unit interval [0,1].
struct QuadRule1D {
  std::vector<double> points;
  std::vector<double> weights;
  int size() const { return static_cast<int>(points.size()); }
};

namespace detail {

// Legendre polynomial P_n and its derivative at x in [-1,1], by recurrence.
inline std::pair<double, double> legendre(int n, double x) {
  double p0 = 1.0, p1 = x;
  if (n == 0) return {1.0, 0.0};
  for (int j = 2; j <= n; ++j) {
    const double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
    p0 = p1;
    p1 = p2;
  }
  const double dp = n * (x * p1 - p0) / (x * x - 1.0);
  return {p1, dp};
}

}  // namespace detail

/// n-point Gauss-Legendre rule on [0,1]; exact for polynomials of degree 2n-1.
inline QuadRule1D gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: need n >= 1");
  QuadRule1D rule;
  rule.points.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    // Chebyshev initial guess, then Newton on P_n.
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      const auto [p, dp] = detail::legendre(n, x);
      const double dx = p / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    const auto [p, dp] = detail::legendre(n, x);
    (void)p;
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.points[n - 1 - i] = 0.5 * (x + 1.0);
    rule.weights[n - 1 - i] = 0.5 * w;
  }
  return rule;
}

/// Gauss-Lobatto nodes on [0,1] (endpoints included), n >= 2 nodes.
/// Used as interpolation nodes for the local Lagrange bases.
inline std::vector<double> gauss_lobatto_nodes(int n) {
  if (n < 2) throw std::invalid_argument("gauss_lobatto_nodes: need n >= 2");
  std::vector<double> nodes(n);
  nodes.front() = 0.0;
  nodes.back() = 1.0;
  // Interior nodes are the roots of P'_{n-1}; Newton from Chebyshev guesses.
  for (int i = 1; i < n - 1; ++i) {
    double x = std::cos(M_PI * i / (n - 1));
    for (int it = 0; it < 100; ++it) {
      const auto [p, dp] = detail::legendre(n - 1, x);
      // d/dx P'_{n-1} from the Legendre ODE: (1-x^2) P'' = 2x P' - m(m+1) P.
      const int m = n - 1;
      const double d2p = (2.0 * x * dp - m * (m + 1.0) * p) / (1.0 - x * x);
      const double dx = dp / d2p;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    nodes[n - 1 - i] = 0.5 * (x + 1.0);
  }
  return nodes;
}

/// Tensor-product rule on the reference square [0,1]^2.
struct QuadRule2D {
  std::vector<Eigen::Vector2d> points;
  std::vector<double> weights;
  int size() const { return static_cast<int>(points.size()); }
};

inline QuadRule2D tensor_rule(const QuadRule1D& r) {
  QuadRule2D rule;
  rule.points.reserve(r.size() * r.size());
  rule.weights.reserve(r.size() * r.size());
  for (int j = 0; j < r.size(); ++j)
    for (int i = 0; i < r.size(); ++i) {
      rule.points.emplace_back(r.points[i], r.points[j]);
      rule.weights.push_back(r.weights[i] * r.weights[j]);
    }
  return rule;
}

}  // namespace bilayer
