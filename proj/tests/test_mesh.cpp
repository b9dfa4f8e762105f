#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "bilayer/mesh.hpp"

using namespace bilayer;

namespace {
const EdgePredicate left_edge = [](const Vec2& a, const Vec2& b) {
  return std::abs(a[0] + 5.0) < 1e-12 && std::abs(b[0] + 5.0) < 1e-12;
};

// Independent fit of the quadratic through three points (Vandermonde solve).
std::array<double, 3> fit_parabola(const std::array<Vec2, 3>& pts) {
  Eigen::Matrix3d V;
  Eigen::Vector3d rhs;
  for (int i = 0; i < 3; ++i) {
    V(i, 0) = pts[i][0] * pts[i][0];
    V(i, 1) = pts[i][0];
    V(i, 2) = 1.0;
    rhs[i] = pts[i][1];
  }
  const Eigen::Vector3d c = V.fullPivLu().solve(rhs);
  return {c[0], c[1], c[2]};
}
}  // namespace

TEST_CASE("uniform rectangle meshes") {
  SECTION("reference clamped plate") {
    const Mesh m = build_rect_mesh(-5, 5, -2, 2, 32, 8, left_edge);
    REQUIRE(m.n_elements() == 256);
    int dirichlet = 0, freeb = 0, interior = 0;
    for (const Edge& e : m.edges) {
      if (e.cls == EdgeClass::dirichlet) ++dirichlet;
      if (e.cls == EdgeClass::free_boundary) ++freeb;
      if (e.cls == EdgeClass::interior) ++interior;
    }
    CHECK(dirichlet == 8);
    CHECK(freeb == 2 * 32 + 8);
    CHECK(interior == 31 * 8 + 32 * 7);
    CHECK(m.total_area() == Catch::Approx(40.0).margin(1e-10));
  }

  SECTION("single cell") {
    const Mesh m = build_rect_mesh(0, 1, 0, 1, 1, 1);
    REQUIRE(m.n_elements() == 1);
    REQUIRE(m.n_edges() == 4);
    for (const Edge& e : m.edges) CHECK(e.cls == EdgeClass::free_boundary);
    CHECK(m.active_edges().empty());
    CHECK(m.barycenter(0) == Vec2(0.5, 0.5));
    CHECK(m.area(0) == Catch::Approx(1.0).margin(1e-14));
    CHECK(m.diameter(0) == Catch::Approx(std::sqrt(2.0)).margin(1e-14));
  }

  SECTION("two cells share one interior edge with a fixed normal") {
    const Mesh m = build_rect_mesh(0, 2, 0, 1, 2, 1);
    REQUIRE(m.n_elements() == 2);
    int interior = -1;
    for (int ei = 0; ei < m.n_edges(); ++ei)
      if (m.edges[ei].cls == EdgeClass::interior) interior = ei;
    REQUIRE(interior >= 0);
    const Edge& e = m.edges[interior];
    CHECK(e.elem[0] == 0);
    CHECK(e.elem[1] == 1);
    // minus side is element 0; the normal points into element 1
    CHECK(e.normal[0] == Catch::Approx(1.0).margin(1e-14));
    CHECK(std::abs(e.normal[1]) < 1e-14);
  }

  SECTION("derived spacing for the 256-cell square partition of a 10x4 box") {
    const Mesh m = build_rect_mesh(0, 10, 0, 4, 16, 16);
    REQUIRE(m.n_elements() == 256);
    const double dx = 10.0 / 16, dy = 4.0 / 16;
    const double h_expected = std::hypot(dx, dy);
    for (int e = 0; e < m.n_elements(); ++e)
      CHECK(m.diameter(e) == Catch::Approx(h_expected).margin(1e-13));
    CHECK(m.h_min() == Catch::Approx(h_expected).margin(1e-13));
  }

  SECTION("refinement halves the mesh size") {
    const Mesh coarse = build_rect_mesh(-5, 5, -2, 2, 8, 4);
    const Mesh fine = build_rect_mesh(-5, 5, -2, 2, 16, 8);
    const double ratio = coarse.h_min() / fine.h_min();
    CHECK(ratio > 1.99);
    CHECK(ratio < 2.01);
  }

  SECTION("edge normals are unit and agree with an adjacent outward normal") {
    const Mesh m = build_rect_mesh(0, 3, 0, 2, 3, 2);
    for (const Edge& e : m.edges) {
      CHECK(std::abs(e.normal.norm() - 1.0) <= 1e-14);
      CHECK(e.diameter <= m.h_max() + 1e-14);
      if (e.is_boundary()) continue;
      // normal points from the minus element toward the plus element
      Vec2 cm = Vec2::Zero(), cp = Vec2::Zero();
      for (int c : m.elements[e.elem[0]]) cm += 0.25 * m.vertices[c];
      for (int c : m.elements[e.elem[1]]) cp += 0.25 * m.vertices[c];
      CHECK(e.normal.dot(cp - cm) > 0.0);
    }
  }

  SECTION("degenerate domains are rejected") {
    CHECK_THROWS_AS(build_rect_mesh(0, 0, 0, 1, 2, 2), std::invalid_argument);
    CHECK_THROWS_AS(build_rect_mesh(0, 1, 1, 1, 2, 2), std::invalid_argument);
    CHECK_THROWS_AS(build_rect_mesh(0, 1, 0, 1, 0, 2), std::invalid_argument);
  }
}

TEST_CASE("crease-fitted meshes") {
  const std::array<Vec2, 3> crease = {Vec2(0, 2), Vec2(9.6, 2), Vec2(4.8, 6)};

  SECTION("crease edges trace the exact parabola") {
    const Mesh m = build_crease_mesh(0, 9.6, 0, 15, crease, 12, 18);
    REQUIRE(m.n_elements() == 12 * 18);
    const auto c = fit_parabola(crease);
    int count = 0;
    for (const Edge& e : m.edges) {
      if (!e.crease) continue;
      ++count;
      CHECK(e.cls == EdgeClass::interior);
      for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        const Vec2 p = e.point(t);
        const double exact = c[0] * p[0] * p[0] + c[1] * p[0] + c[2];
        CHECK(std::abs(p[1] - exact) < 1e-12);
      }
    }
    CHECK(count == 12);
    CHECK(m.n_crease_edges() == 12);
    CHECK(m.total_area() == Catch::Approx(9.6 * 15).margin(1e-8 * 9.6 * 15));
    // regions split along the crease
    for (int e = 0; e < m.n_elements(); ++e) {
      const double by = m.barycenter(e)[1];
      const double cy = c[0] * m.barycenter(e)[0] * m.barycenter(e)[0] +
                        c[1] * m.barycenter(e)[0] + c[2];
      CHECK(m.region[e] == (by < cy ? 0 : 1));
    }
  }

  SECTION("collinear apex degenerates to a straight crease and bilinear maps") {
    const std::array<Vec2, 3> straight = {Vec2(0, 2), Vec2(9.6, 2), Vec2(4.8, 2)};
    const Mesh m = build_crease_mesh(0, 9.6, 0, 15, straight, 6, 9);
    for (const Edge& e : m.edges)
      if (e.crease) CHECK_FALSE(e.curved);
    for (int el = 0; el < m.n_elements(); ++el)
      for (double a : {0.2, 0.7})
        for (double b : {0.3, 0.9}) {
          const auto ss = m.maps[el].second_derivatives(Vec2(a, b));
          for (int comp = 0; comp < 2; ++comp) {
            CHECK(std::abs(ss[comp](0, 0)) < 1e-12);  // no curvature along the rows
            CHECK(std::abs(ss[comp](1, 1)) < 1e-12);
          }
        }
  }

  SECTION("smallest crease mesh has exactly nx interior crease edges") {
    const Mesh m = build_crease_mesh(0, 9.6, 0, 15, crease, 2, 2);
    int count = 0;
    for (const Edge& e : m.edges)
      if (e.crease) {
        ++count;
        CHECK_FALSE(e.is_boundary());
      }
    CHECK(count == 2);
  }

  SECTION("curved element area matches a Monte Carlo estimate") {
    const Mesh m = build_crease_mesh(0, 9.6, 0, 15, crease, 12, 18);
    // pick a strongly curved element: below the crease near the apex
    int target = -1;
    for (int el = 0; el < m.n_elements(); ++el)
      for (int l = 0; l < 4; ++l)
        if (m.edges[m.element_edges[el][l]].crease && m.region[el] == 0 &&
            std::abs(m.barycenter(el)[0] - 4.8) < 0.5)
          target = el;
    REQUIRE(target >= 0);
    const GeometricMap& g = m.maps[target];
    // The element is a graph region between its straight bottom edge and the
    // parabola on top, over a vertical strip.
    const auto c = fit_parabola(crease);
    const Vec2 bl = g.nodes[0], br = g.nodes[2];  // bottom corners
    const auto ylo = [&](double x) {
      return bl[1] + (br[1] - bl[1]) * (x - bl[0]) / (br[0] - bl[0]);
    };
    const auto yhi = [&](double x) { return c[0] * x * x + c[1] * x + c[2]; };
    std::mt19937 rng(12345);
    double ymin = 1e300, ymax = -1e300;
    for (int i = 0; i <= 100; ++i) {
      const double x = bl[0] + (br[0] - bl[0]) * i / 100.0;
      ymin = std::min(ymin, ylo(x));
      ymax = std::max(ymax, yhi(x));
    }
    std::uniform_real_distribution<double> ux(bl[0], br[0]), uy(ymin, ymax);
    const int n = 1000000;
    int hits = 0;
    for (int i = 0; i < n; ++i) {
      const double x = ux(rng), yy = uy(rng);
      if (yy >= ylo(x) && yy <= yhi(x)) ++hits;
    }
    const double mc = (br[0] - bl[0]) * (ymax - ymin) * hits / n;
    CHECK(std::abs(m.area(target) - mc) / mc < 0.005);
  }

  SECTION("a crease exiting the domain is rejected") {
    const std::array<Vec2, 3> bad = {Vec2(0, 2), Vec2(9.6, 2), Vec2(4.8, 20)};
    CHECK_THROWS_AS(build_crease_mesh(0, 9.6, 0, 15, bad, 12, 18), std::invalid_argument);
  }
}

TEST_CASE("triangle split into quadrilaterals") {
  const std::array<Vec2, 3> tri = {Vec2(0, 0), Vec2(1, 0), Vec2(0.5, std::sqrt(3.0) / 2)};
  const EdgePredicate bottom = [](const Vec2& a, const Vec2& b) {
    return std::abs(a[1]) < 1e-12 && std::abs(b[1]) < 1e-12;
  };
  const int subdiv = 4;
  const Mesh m = build_tri_quad_mesh(tri, subdiv, bottom);
  CHECK(m.n_elements() == 3 * subdiv * subdiv);
  CHECK(m.total_area() == Catch::Approx(std::sqrt(3.0) / 4).margin(1e-10));
  int dirichlet = 0;
  for (const Edge& e : m.edges)
    if (e.cls == EdgeClass::dirichlet) ++dirichlet;
  CHECK(dirichlet == 2 * subdiv);
  CHECK(m.max_aspect_ratio() < 3.0);
}

TEST_CASE("mesh dump and VTK export") {
  const Mesh m = build_rect_mesh(0, 1, 0, 1, 2, 2);
  std::ostringstream os;
  m.dump_text(os);
  CHECK(os.str().find("4 elements") != std::string::npos);
  const std::string path = "test_mesh_dump.vtk";
  m.write_vtk(path);
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  CHECK(line.rfind("# vtk", 0) == 0);
}
