#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bilayer/quadrature.hpp"

namespace bilayer {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat32 = Eigen::Matrix<double, 3, 2>;

enum class EdgeClass { interior, dirichlet, free_boundary };

/// Maps the reference square [0,1]^2 to a physical quadrilateral.
/// order 1: bilinear, 4 corner nodes. order 2: biquadratic, 9 nodes placed
/// lexicographically on the {0, 1/2, 1}^2 grid of the reference square.
struct GeometricMap {
  int order = 1;
  std::array<Vec2, 9> nodes{};

  static double lag1d(int i, double t) {
    switch (i) {
      case 0: return 2.0 * t * t - 3.0 * t + 1.0;
      case 1: return 4.0 * t - 4.0 * t * t;
      default: return 2.0 * t * t - t;
    }
  }
  static double dlag1d(int i, double t) {
    switch (i) {
      case 0: return 4.0 * t - 3.0;
      case 1: return 4.0 - 8.0 * t;
      default: return 4.0 * t - 1.0;
    }
  }
  static double d2lag1d(int i) { return i == 1 ? -8.0 : 4.0; }

  Vec2 point(const Vec2& x) const {
    if (order == 1) {
      const double a = x[0], b = x[1];
      return (1 - a) * (1 - b) * nodes[0] + a * (1 - b) * nodes[1] +
             a * b * nodes[2] + (1 - a) * b * nodes[3];
    }
    Vec2 p = Vec2::Zero();
    for (int ib = 0; ib < 3; ++ib)
      for (int ia = 0; ia < 3; ++ia)
        p += lag1d(ia, x[0]) * lag1d(ib, x[1]) * nodes[3 * ib + ia];
    return p;
  }

  /// Columns are dF/da and dF/db.
  Mat2 jacobian(const Vec2& x) const {
    Mat2 J;
    if (order == 1) {
      const double a = x[0], b = x[1];
      const Vec2 da = -(1 - b) * nodes[0] + (1 - b) * nodes[1] + b * nodes[2] - b * nodes[3];
      const Vec2 db = -(1 - a) * nodes[0] - a * nodes[1] + a * nodes[2] + (1 - a) * nodes[3];
      J.col(0) = da;
      J.col(1) = db;
      return J;
    }
    Vec2 da = Vec2::Zero(), db = Vec2::Zero();
    for (int ib = 0; ib < 3; ++ib)
      for (int ia = 0; ia < 3; ++ia) {
        da += dlag1d(ia, x[0]) * lag1d(ib, x[1]) * nodes[3 * ib + ia];
        db += lag1d(ia, x[0]) * dlag1d(ib, x[1]) * nodes[3 * ib + ia];
      }
    J.col(0) = da;
    J.col(1) = db;
    return J;
  }

  /// Second derivatives of each physical component c: H[c](i,j) = d^2 F_c / dx_i dx_j
  /// in reference coordinates. Identically zero off-diagonal-free only for affine maps.
  std::array<Mat2, 2> second_derivatives(const Vec2& x) const {
    std::array<Mat2, 2> H{Mat2::Zero(), Mat2::Zero()};
    if (order == 1) {
      const Vec2 mixed = nodes[0] - nodes[1] + nodes[2] - nodes[3];
      for (int c = 0; c < 2; ++c) {
        H[c](0, 1) = mixed[c];
        H[c](1, 0) = mixed[c];
      }
      return H;
    }
    for (int ib = 0; ib < 3; ++ib)
      for (int ia = 0; ia < 3; ++ia) {
        const Vec2& n = nodes[3 * ib + ia];
        const double daa = d2lag1d(ia) * lag1d(ib, x[1]);
        const double dbb = lag1d(ia, x[0]) * d2lag1d(ib);
        const double dab = dlag1d(ia, x[0]) * dlag1d(ib, x[1]);
        for (int c = 0; c < 2; ++c) {
          H[c](0, 0) += daa * n[c];
          H[c](1, 1) += dbb * n[c];
          H[c](0, 1) += dab * n[c];
          H[c](1, 0) += dab * n[c];
        }
      }
    return H;
  }
};

/// Mesh edge with a fixed orientation. Side 0 ("minus") is the element the
/// normal points out of; side 1 ("plus") is the element it points into
/// (-1 on boundary edges, where the normal is outward).
struct Edge {
  std::array<int, 2> v{-1, -1};       // endpoint vertex ids, v[0] < v[1]
  std::array<int, 2> elem{-1, -1};    // adjacent elements (minus, plus)
  std::array<int, 2> local{-1, -1};   // local edge index within each side
  std::array<bool, 2> flip{false, false};  // side traverses v[1] -> v[0]
  EdgeClass cls = EdgeClass::interior;
  bool crease = false;
  bool curved = false;
  std::array<Vec2, 3> geom{};  // points at t = 0, 1/2, 1 along v[0] -> v[1]
  Vec2 normal = Vec2::Zero();  // unit normal at t = 1/2
  double normal_sign = 1.0;
  double diameter = 0.0;

  bool is_boundary() const { return elem[1] < 0; }

  Vec2 point(double t) const {
    return GeometricMap::lag1d(0, t) * geom[0] + GeometricMap::lag1d(1, t) * geom[1] +
           GeometricMap::lag1d(2, t) * geom[2];
  }
  Vec2 tangent(double t) const {
    return GeometricMap::dlag1d(0, t) * geom[0] + GeometricMap::dlag1d(1, t) * geom[1] +
           GeometricMap::dlag1d(2, t) * geom[2];
  }
  Vec2 unit_normal(double t) const {
    const Vec2 tg = tangent(t);
    return normal_sign * Vec2(tg[1], -tg[0]).normalized();
  }
};

using EdgePredicate = std::function<bool(const Vec2&, const Vec2&)>;

/// Conforming all-quadrilateral partition of a polygonal domain.
/// Immutable after construction; all builders run the consistency checks below.
class Mesh {
 public:
  std::vector<Vec2> vertices;
  std::vector<std::array<int, 4>> elements;  // corner vertex ids, counter-clockwise
  std::vector<GeometricMap> maps;
  std::vector<Edge> edges;
  std::vector<std::array<int, 4>> element_edges;
  std::vector<int> region;  // material region per element (crease side / rotation id)
  bool curved = false;
  double domain_area = 0.0;

  int n_elements() const { return static_cast<int>(elements.size()); }
  int n_vertices() const { return static_cast<int>(vertices.size()); }
  int n_edges() const { return static_cast<int>(edges.size()); }

  const std::vector<int>& active_edges() const { return active_edges_; }
  int n_crease_edges() const { return n_crease_; }
  double area(int e) const { return area_[e]; }
  double diameter(int e) const { return diameter_[e]; }
  const Vec2& barycenter(int e) const { return barycenter_[e]; }
  double h_min() const { return h_min_; }
  double h_max() const { return h_max_; }
  double total_area() const { return total_area_; }

  /// Reference corners, counter-clockwise, matching the element corner order.
  static Vec2 ref_corner(int i) {
    static const std::array<Vec2, 4> c = {Vec2(0, 0), Vec2(1, 0), Vec2(1, 1), Vec2(0, 1)};
    return c[i];
  }
  static std::array<int, 2> local_edge_corners(int l) {
    static const std::array<std::array<int, 2>, 4> le = {{{0, 1}, {1, 2}, {2, 3}, {3, 0}}};
    return le[l];
  }

  /// Reference coordinates of the point at edge parameter t seen from a side.
  Vec2 edge_ref_point(const Edge& e, int side, double t) const {
    const double s = e.flip[side] ? 1.0 - t : t;
    const auto lc = local_edge_corners(e.local[side]);
    return (1.0 - s) * ref_corner(lc[0]) + s * ref_corner(lc[1]);
  }

  double max_aspect_ratio() const {
    double worst = 1.0;
    for (const auto& el : elements) {
      double lo = std::numeric_limits<double>::max(), hi = 0.0;
      for (int l = 0; l < 4; ++l) {
        const auto lc = local_edge_corners(l);
        const double len = (vertices[el[lc[1]]] - vertices[el[lc[0]]]).norm();
        lo = std::min(lo, len);
        hi = std::max(hi, len);
      }
      worst = std::max(worst, hi / lo);
    }
    return worst;
  }

  void dump_text(std::ostream& os) const {
    os << "mesh: " << n_vertices() << " vertices, " << n_elements() << " elements, "
       << n_edges() << " edges" << (curved ? " (curved)" : "") << "\n";
    for (int i = 0; i < n_vertices(); ++i)
      os << "v " << i << " " << vertices[i][0] << " " << vertices[i][1] << "\n";
    for (int i = 0; i < n_elements(); ++i) {
      os << "e " << i << " ";
      for (int c : elements[i]) os << c << " ";
      os << "region=" << region[i] << "\n";
    }
    for (int i = 0; i < n_edges(); ++i) {
      const Edge& e = edges[i];
      os << "edge " << i << " v=(" << e.v[0] << "," << e.v[1] << ") elems=(" << e.elem[0]
         << "," << e.elem[1] << ") class="
         << (e.cls == EdgeClass::interior ? "interior"
                                          : (e.cls == EdgeClass::dirichlet ? "dirichlet" : "free"))
         << (e.crease ? " crease" : "") << " n=(" << e.normal[0] << "," << e.normal[1]
         << ")\n";
    }
  }

  /// Legacy-VTK export of the (flat) mesh as quadratic quads.
  void write_vtk(const std::string& path) const;

  /// Structural consistency checks; throws on violation. Builders call this.
  void check_consistency() const {
    // Conformity and side bookkeeping.
    for (int ei = 0; ei < n_edges(); ++ei) {
      const Edge& e = edges[ei];
      if (e.elem[0] < 0) throw std::runtime_error("mesh: edge without minus element");
      if (!e.is_boundary() && e.elem[0] >= e.elem[1])
        throw std::runtime_error("mesh: interior edge sides not ordered by element index");
      if (e.is_boundary() && e.cls == EdgeClass::interior)
        throw std::runtime_error("mesh: boundary edge classified interior");
      if (!e.is_boundary() && e.cls != EdgeClass::interior)
        throw std::runtime_error("mesh: interior edge carries boundary class");
      if (std::abs(e.normal.norm() - 1.0) > 1e-14)
        throw std::runtime_error("mesh: edge normal not unit length");
      if (e.crease && e.is_boundary())
        throw std::runtime_error("mesh: crease edge on the boundary");
    }
    for (int el = 0; el < n_elements(); ++el)
      for (int l = 0; l < 4; ++l) {
        const Edge& e = edges[element_edges[el][l]];
        if (e.elem[0] != el && e.elem[1] != el)
          throw std::runtime_error("mesh: element-edge table inconsistent");
      }
    // Positive Jacobians at a sample grid.
    for (int el = 0; el < n_elements(); ++el)
      for (double a : {0.05, 0.5, 0.95})
        for (double b : {0.05, 0.5, 0.95})
          if (maps[el].jacobian(Vec2(a, b)).determinant() <= 0.0)
            throw std::runtime_error("mesh: non-positive Jacobian determinant");
    // Area closure.
    const double tol = curved ? 1e-8 : 1e-10;
    if (std::abs(total_area_ - domain_area) > tol * std::max(1.0, domain_area))
      throw std::runtime_error("mesh: element areas do not sum to the domain area");
    // Both sides of an interior edge trace the same curve (isoparametric match).
    for (const Edge& e : edges) {
      if (e.is_boundary()) continue;
      for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        const Vec2 pm = maps[e.elem[0]].point(edge_ref_point(e, 0, t));
        const Vec2 pp = maps[e.elem[1]].point(edge_ref_point(e, 1, t));
        if ((pm - pp).norm() > 1e-12) throw std::runtime_error("mesh: edge trace mismatch");
        if ((pm - e.point(t)).norm() > 1e-12)
          throw std::runtime_error("mesh: edge geometry mismatch");
      }
    }
  }

  // Builder-facing helpers -------------------------------------------------

  /// Creates the edge set from element connectivity. `midnode` may supply a
  /// curved midnode for an edge key (pair of sorted vertex ids).
  void connect(const EdgePredicate& dirichlet,
               const std::map<std::pair<int, int>, Vec2>* midnodes = nullptr,
               const std::map<std::pair<int, int>, bool>* crease_keys = nullptr) {
    std::map<std::pair<int, int>, int> index;
    edges.clear();
    element_edges.assign(elements.size(), {-1, -1, -1, -1});
    for (int el = 0; el < n_elements(); ++el) {
      for (int l = 0; l < 4; ++l) {
        const auto lc = local_edge_corners(l);
        const int a = elements[el][lc[0]], b = elements[el][lc[1]];
        const std::pair<int, int> key{std::min(a, b), std::max(a, b)};
        auto it = index.find(key);
        if (it == index.end()) {
          Edge e;
          e.v = {key.first, key.second};
          e.elem[0] = el;
          e.local[0] = l;
          e.flip[0] = (a != key.first);
          index.emplace(key, n_edges());
          edges.push_back(e);
          element_edges[el][l] = n_edges() - 1;
        } else {
          Edge& e = edges[it->second];
          if (e.elem[1] >= 0) throw std::runtime_error("mesh: edge shared by >2 elements");
          e.elem[1] = el;
          e.local[1] = l;
          e.flip[1] = (a != key.first);
          element_edges[el][l] = it->second;
        }
      }
    }
    n_crease_ = 0;
    active_edges_.clear();
    for (int ei = 0; ei < n_edges(); ++ei) {
      Edge& e = edges[ei];
      e.geom[0] = vertices[e.v[0]];
      e.geom[2] = vertices[e.v[1]];
      e.geom[1] = 0.5 * (e.geom[0] + e.geom[2]);
      const std::pair<int, int> key{e.v[0], e.v[1]};
      if (midnodes) {
        auto mit = midnodes->find(key);
        if (mit != midnodes->end()) {
          e.geom[1] = mit->second;
          e.curved = (e.geom[1] - 0.5 * (e.geom[0] + e.geom[2])).norm() > 1e-14;
        }
      }
      if (crease_keys && crease_keys->count(key)) {
        e.crease = true;
        ++n_crease_;
      }
      if (e.is_boundary())
        e.cls = (dirichlet && dirichlet(e.geom[0], e.geom[2])) ? EdgeClass::dirichlet
                                                               : EdgeClass::free_boundary;
      e.diameter = std::max({(e.geom[2] - e.geom[0]).norm(), (e.geom[1] - e.geom[0]).norm(),
                             (e.geom[2] - e.geom[1]).norm()});
      // Orient the normal from the minus toward the plus side (outward on boundary).
      const Vec2 tg = e.tangent(0.5);
      Vec2 n(tg[1], -tg[0]);
      n.normalize();
      Vec2 other;  // a point on the side the normal must point to (away from)
      if (e.is_boundary()) {
        other = corner_mean(e.elem[0]);
        e.normal_sign = (n.dot(other - e.point(0.5)) < 0.0) ? 1.0 : -1.0;
      } else {
        other = corner_mean(e.elem[1]);
        e.normal_sign = (n.dot(other - e.point(0.5)) > 0.0) ? 1.0 : -1.0;
      }
      e.normal = e.normal_sign * n;
      if (e.cls != EdgeClass::free_boundary) active_edges_.push_back(ei);
    }
  }

  /// Recomputes all derived data after deserialization.
  void rebuild_after_load() {
    n_crease_ = 0;
    active_edges_.clear();
    for (int ei = 0; ei < n_edges(); ++ei) {
      if (edges[ei].cls != EdgeClass::free_boundary) active_edges_.push_back(ei);
      if (edges[ei].crease) ++n_crease_;
    }
    finalize_geometry();
  }

  /// Fills areas, barycenters, diameters. Builders call this after connect().
  void finalize_geometry() {
    const QuadRule2D rule = tensor_rule(gauss_legendre(4));
    area_.resize(n_elements());
    diameter_.resize(n_elements());
    barycenter_.resize(n_elements());
    total_area_ = 0.0;
    h_min_ = std::numeric_limits<double>::max();
    h_max_ = 0.0;
    for (int el = 0; el < n_elements(); ++el) {
      double a = 0.0;
      for (int q = 0; q < rule.size(); ++q)
        a += rule.weights[q] * maps[el].jacobian(rule.points[q]).determinant();
      area_[el] = a;
      total_area_ += a;
      barycenter_[el] = maps[el].point(Vec2(0.5, 0.5));
      double d = 0.0;
      const int nn = maps[el].order == 1 ? 4 : 9;
      for (int i = 0; i < nn; ++i)
        for (int j = i + 1; j < nn; ++j)
          d = std::max(d, (maps[el].nodes[i] - maps[el].nodes[j]).norm());
      diameter_[el] = d;
      h_min_ = std::min(h_min_, d);
      h_max_ = std::max(h_max_, d);
    }
  }

 private:
  Vec2 corner_mean(int el) const {
    Vec2 m = Vec2::Zero();
    for (int c : elements[el]) m += vertices[c];
    return 0.25 * m;
  }

  std::vector<double> area_, diameter_;
  std::vector<Vec2> barycenter_;
  std::vector<int> active_edges_;
  double total_area_ = 0.0, h_min_ = 0.0, h_max_ = 0.0;
  int n_crease_ = 0;
};

inline void Mesh::write_vtk(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("mesh: cannot open " + path);
  static const std::array<Vec2, 8> ref = {Vec2(0, 0), Vec2(1, 0),   Vec2(1, 1),  Vec2(0, 1),
                                          Vec2(0.5, 0), Vec2(1, 0.5), Vec2(0.5, 1), Vec2(0, 0.5)};
  os << "# vtk DataFile Version 3.0\nmesh\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  os << "POINTS " << 8 * n_elements() << " double\n";
  char buf[96];
  for (int el = 0; el < n_elements(); ++el)
    for (const Vec2& r : ref) {
      const Vec2 p = maps[el].point(r);
      std::snprintf(buf, sizeof buf, "%.12g %.12g 0\n", p[0], p[1]);
      os << buf;
    }
  os << "CELLS " << n_elements() << " " << 9 * n_elements() << "\n";
  for (int el = 0; el < n_elements(); ++el) {
    os << 8;
    for (int i = 0; i < 8; ++i) os << " " << 8 * el + i;
    os << "\n";
  }
  os << "CELL_TYPES " << n_elements() << "\n";
  for (int el = 0; el < n_elements(); ++el) os << "23\n";  // quadratic quad
  os << "CELL_DATA " << n_elements() << "\nSCALARS region int 1\nLOOKUP_TABLE default\n";
  for (int el = 0; el < n_elements(); ++el) os << region[el] << "\n";
}

/// Uniform axis-aligned quadrilateral mesh of (xmin,xmax) x (ymin,ymax).
/// Boundary edges matching `dirichlet` are clamped; the rest are free.
inline Mesh build_rect_mesh(double xmin, double xmax, double ymin, double ymax, int nx,
                            int ny, const EdgePredicate& dirichlet = nullptr) {
  if (nx < 1 || ny < 1) throw std::invalid_argument("build_rect_mesh: need nx, ny >= 1");
  if (!(xmin < xmax) || !(ymin < ymax))
    throw std::invalid_argument("build_rect_mesh: degenerate domain");
  Mesh m;
  m.domain_area = (xmax - xmin) * (ymax - ymin);
  const double dx = (xmax - xmin) / nx, dy = (ymax - ymin) / ny;
  m.vertices.reserve((nx + 1) * (ny + 1));
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i)
      m.vertices.emplace_back(xmin + i * dx, ymin + j * dy);
  const auto vid = [nx](int i, int j) { return j * (nx + 1) + i; };
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      m.elements.push_back({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)});
      GeometricMap g;
      g.order = 1;
      for (int c = 0; c < 4; ++c) g.nodes[c] = m.vertices[m.elements.back()[c]];
      m.maps.push_back(g);
      m.region.push_back(0);
    }
  m.connect(dirichlet);
  m.finalize_geometry();
  m.check_consistency();
  return m;
}

/// Crease-fitted isoparametric mesh: a structured grid whose row `r` of grid
/// lines is pulled onto the quadratic curve through p0, p1 and the apex, with
/// the grid columns linearly stretched above and below. The crease edges are
/// exact quadratic arcs; all other edges stay straight. Elements below the
/// curve carry region 0, those above region 1.
inline Mesh build_crease_mesh(double xmin, double xmax, double ymin, double ymax,
                              const std::array<Vec2, 3>& crease, int nx, int ny) {
  if (nx < 1 || ny < 2) throw std::invalid_argument("build_crease_mesh: need nx >= 1, ny >= 2");
  if (!(xmin < xmax) || !(ymin < ymax))
    throw std::invalid_argument("build_crease_mesh: degenerate domain");
  const Vec2 p0 = crease[0], p1 = crease[1], apex = crease[2];
  const double side_tol = 1e-10 * (xmax - xmin);
  if (std::abs(p0[0] - xmin) > side_tol || std::abs(p1[0] - xmax) > side_tol)
    throw std::invalid_argument(
        "build_crease_mesh: crease endpoints must lie on the lateral boundaries");

  // Quadratic through the three points (Vandermonde solve).
  Eigen::Matrix3d V;
  Eigen::Vector3d rhs;
  const std::array<Vec2, 3> pts = {p0, p1, apex};
  for (int i = 0; i < 3; ++i) {
    V(i, 0) = pts[i][0] * pts[i][0];
    V(i, 1) = pts[i][0];
    V(i, 2) = 1.0;
    rhs[i] = pts[i][1];
  }
  const Eigen::Vector3d c = V.fullPivLu().solve(rhs);
  const auto curve = [&c](double x) { return c[0] * x * x + c[1] * x + c[2]; };
  for (int i = 0; i <= 1000; ++i) {
    const double x = xmin + (xmax - xmin) * i / 1000.0;
    const double y = curve(x);
    if (!(y > ymin && y < ymax))
      throw std::invalid_argument("build_crease_mesh: crease exits the domain");
  }

  // Grid row that carries the crease: nearest row to the curve's mean height.
  const double w = xmax - xmin;
  const double mean_y = c[0] * (xmax * xmax * xmax - xmin * xmin * xmin) / (3.0 * w) +
                        c[1] * (xmax * xmax - xmin * xmin) / (2.0 * w) + c[2];
  const int r = std::clamp(
      static_cast<int>(std::lround(ny * (mean_y - ymin) / (ymax - ymin))), 1, ny - 1);

  Mesh m;
  m.domain_area = (xmax - xmin) * (ymax - ymin);
  m.curved = true;
  const auto xi = [&](int i) { return xmin + (xmax - xmin) * i / nx; };
  const auto yj = [&](int i, int j) {
    const double cy = curve(xi(i));
    if (j <= r) return ymin + (cy - ymin) * j / r;
    return cy + (ymax - cy) * (j - r) / (ny - r);
  };
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) m.vertices.emplace_back(xi(i), yj(i, j));
  const auto vid = [nx](int i, int j) { return j * (nx + 1) + i; };

  std::map<std::pair<int, int>, Vec2> midnodes;
  std::map<std::pair<int, int>, bool> crease_keys;
  for (int i = 0; i < nx; ++i) {
    const int a = vid(i, r), b = vid(i + 1, r);
    const std::pair<int, int> key{std::min(a, b), std::max(a, b)};
    const double xm = 0.5 * (xi(i) + xi(i + 1));
    midnodes[key] = Vec2(xm, curve(xm));
    crease_keys[key] = true;
  }

  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      m.elements.push_back({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)});
      m.region.push_back(j < r ? 0 : 1);
    }
  m.connect(nullptr, &midnodes, &crease_keys);

  // Biquadratic maps everywhere: corners + edge midnodes + transfinite center.
  m.maps.resize(m.n_elements());
  for (int el = 0; el < m.n_elements(); ++el) {
    GeometricMap g;
    g.order = 2;
    const std::array<int, 9> corner_slot = {0, 2, 8, 6};  // lexicographic positions
    for (int cnr = 0; cnr < 4; ++cnr)
      g.nodes[corner_slot[cnr]] = m.vertices[m.elements[el][cnr]];
    const std::array<int, 4> mid_slot = {1, 5, 7, 3};  // bottom, right, top, left
    for (int l = 0; l < 4; ++l)
      g.nodes[mid_slot[l]] = m.edges[m.element_edges[el][l]].geom[1];
    Vec2 center = Vec2::Zero();
    for (int l = 0; l < 4; ++l) center += 0.5 * g.nodes[mid_slot[l]];
    for (int cnr = 0; cnr < 4; ++cnr) center -= 0.25 * g.nodes[corner_slot[cnr]];
    g.nodes[4] = center;
    m.maps[el] = g;
  }
  m.finalize_geometry();
  m.check_consistency();
  return m;
}

/// All-quad partition of a triangle: split at the centroid into three
/// quadrilaterals, each refined into subdiv x subdiv bilinear cells.
/// Boundary edges matching `dirichlet` are clamped.
inline Mesh build_tri_quad_mesh(const std::array<Vec2, 3>& tri, int subdiv,
                                const EdgePredicate& dirichlet = nullptr) {
  if (subdiv < 1) throw std::invalid_argument("build_tri_quad_mesh: need subdiv >= 1");
  const Vec2 A = tri[0], B = tri[1], C = tri[2];
  const double area2 = (B - A)[0] * (C - A)[1] - (B - A)[1] * (C - A)[0];
  if (area2 <= 0.0)
    throw std::invalid_argument("build_tri_quad_mesh: corners must be counter-clockwise");
  const Vec2 G = (A + B + C) / 3.0;
  const Vec2 Mab = 0.5 * (A + B), Mbc = 0.5 * (B + C), Mca = 0.5 * (C + A);
  const std::array<std::array<Vec2, 4>, 3> quads = {
      {{A, Mab, G, Mca}, {B, Mbc, G, Mab}, {C, Mca, G, Mbc}}};

  Mesh m;
  m.domain_area = 0.5 * area2;
  const double scale = std::max({(B - A).norm(), (C - B).norm(), (A - C).norm()});
  const double quantum = 1e-10 * scale;
  std::map<std::pair<int64_t, int64_t>, int> pool;
  const auto add_vertex = [&](const Vec2& p) {
    const std::pair<int64_t, int64_t> key{static_cast<int64_t>(std::llround(p[0] / quantum)),
                                          static_cast<int64_t>(std::llround(p[1] / quantum))};
    auto it = pool.find(key);
    if (it != pool.end()) return it->second;
    pool.emplace(key, m.n_vertices());
    m.vertices.push_back(p);
    return m.n_vertices() - 1;
  };

  for (int q = 0; q < 3; ++q) {
    const auto& Q = quads[q];
    std::vector<int> grid((subdiv + 1) * (subdiv + 1));
    for (int j = 0; j <= subdiv; ++j)
      for (int i = 0; i <= subdiv; ++i) {
        const double a = static_cast<double>(i) / subdiv, b = static_cast<double>(j) / subdiv;
        const Vec2 p = (1 - a) * (1 - b) * Q[0] + a * (1 - b) * Q[1] + a * b * Q[2] +
                       (1 - a) * b * Q[3];
        grid[j * (subdiv + 1) + i] = add_vertex(p);
      }
    for (int j = 0; j < subdiv; ++j)
      for (int i = 0; i < subdiv; ++i) {
        m.elements.push_back({grid[j * (subdiv + 1) + i], grid[j * (subdiv + 1) + i + 1],
                              grid[(j + 1) * (subdiv + 1) + i + 1],
                              grid[(j + 1) * (subdiv + 1) + i]});
        GeometricMap g;
        g.order = 1;
        for (int cnr = 0; cnr < 4; ++cnr) g.nodes[cnr] = m.vertices[m.elements.back()[cnr]];
        m.maps.push_back(g);
        m.region.push_back(q);
      }
  }
  m.connect(dirichlet);
  m.finalize_geometry();
  m.check_consistency();
  return m;
}

}  // namespace bilayer
