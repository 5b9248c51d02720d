#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "crgeo/conformal.hpp"
#include "crgeo/models.hpp"
#include "crgeo/webster.hpp"

using namespace crgeo;

namespace {

template <int n>
WebsterData<n> webster_at(const ManifoldBase<n>& m, int chart,
                          const typename ManifoldBase<n>::Pt& x, PointStructure<n>* ps_out = nullptr) {
  auto ps = solve_structure(m.structure(chart, x));
  auto wd = solve_webster(ps);
  if (ps_out) *ps_out = ps;
  return wd;
}

double max_R(const WebsterData<1>& wd) {
  return lead_abs(wd.R[0][0][0][0]);
}

// theta scaled by a constant with the frame kept, so the Levi form scales
struct ScaledHeisenberg : ManifoldBase<1> {
  Heisenberg<1> base;
  std::string name() const override { return "h1_scaled"; }
  bool in_domain(int, const Pt&) const override { return true; }
  StructureJets<1> structure(int chart, const Pt& x) const override {
    auto s = base.structure(chart, x);
    for (int i = 0; i < 3; ++i) s.theta[i] = s.theta[i] * 3.0;
    return s;
  }
};

}  // namespace

TEST_CASE("flat Heisenberg structures have vanishing connection, torsion, curvature") {
  Heisenberg<1> h1;
  PointStructure<1> ps;
  auto wd = webster_at<1>(h1, 0, {0.3, -0.2, 0.7}, &ps);
  CHECK(wd.connection_residual < 1e-10);
  CHECK(lead_abs(value_of(wd.p[0][0][0])) < 1e-10);
  CHECK(lead_abs(value_of(wd.q[0][0][0])) < 1e-10);
  CHECK(lead_abs(value_of(wd.r[0][0])) < 1e-10);
  CHECK(lead_abs(value_of(wd.A[0][0])) < 1e-10);
  CHECK(max_R(wd) < 1e-9);
  CHECK(std::fabs(wd.S) < 1e-9);
  CHECK(wd.discarded < 1e-9);

  Heisenberg<2> h2;
  PointStructure<2> ps2;
  auto wd2 = webster_at<2>(h2, 0, {0.4, -0.1, 0.2, 0.5, -0.3}, &ps2);
  CHECK(wd2.connection_residual < 1e-10);
  CHECK(std::fabs(wd2.S) < 1e-9);
  double mx = 0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      mx = std::max(mx, lead_abs(value_of(wd2.A[a][b])));
      for (int g = 0; g < 2; ++g)
        for (int s = 0; s < 2; ++s) mx = std::max(mx, lead_abs(wd2.R[a][b][g][s]));
    }
  CHECK(mx < 1e-9);
  CHECK(wd2.discarded < 1e-9);
}

TEST_CASE("constant rescale with kept frame stays flat") {
  ScaledHeisenberg m;
  PointStructure<1> ps;
  auto wd = webster_at<1>(m, 0, {0.1, 0.4, -0.6}, &ps);
  CHECK(std::fabs(value_of(ps.g(0, 0)).re - 3.0) < 1e-12);
  CHECK(wd.connection_residual < 1e-10);
  CHECK(lead_abs(value_of(wd.A[0][0])) < 1e-10);
  CHECK(max_R(wd) < 1e-9);
  CHECK(std::fabs(wd.S) < 1e-9);
}

TEST_CASE("sphere charts carry constant scalar curvature 8 and zero torsion") {
  SphereCharts sph;
  for (int chart = 0; chart < 2; ++chart) {
    for (auto& pt : {std::array<double, 3>{0.3, -0.2, 0.7}, std::array<double, 3>{0.05, 0.9, -0.4},
                     std::array<double, 3>{-0.6, 0.1, 0.2}}) {
      PointStructure<1> ps;
      auto wd = webster_at<1>(sph, chart, pt, &ps);
      CHECK(wd.connection_residual < 1e-9);
      CHECK(std::fabs(wd.S - 8.0) < 1e-7);
      CHECK(lead_abs(value_of(wd.A[0][0])) < 1e-8);
      CHECK(wd.discarded < 1e-7);
      auto tn = tensor_norms(ps, wd);
      CHECK(std::fabs(tn.Ric - 8.0) < 1e-7);
      CHECK(std::fabs(tn.R - 8.0) < 1e-7);
      CHECK(tn.A < 1e-8);
    }
  }
}

TEST_CASE("unit-volume sphere rescales the scalar curvature by the volume factor") {
  SphereCharts sph(true);
  // theta scaled by 1/pi multiplies S by pi
  PointStructure<1> ps;
  auto wd = webster_at<1>(sph, 0, {0.2, 0.1, -0.3}, &ps);
  CHECK(std::fabs(wd.S - 8.0 * M_PI) < 1e-6);
}

TEST_CASE("nilmanifold is flat") {
  Nilmanifold nm;
  PointStructure<1> ps;
  auto wd = webster_at<1>(nm, 0, {0.35, 0.15, 0.22}, &ps);
  CHECK(std::fabs(wd.S) < 1e-9);
  CHECK(lead_abs(value_of(wd.A[0][0])) < 1e-10);
  CHECK(max_R(wd) < 1e-9);
}

// ============================================================================
// Covariant derivatives
// ============================================================================

TEST_CASE("covariant derivatives of f = t on flat Heisenberg") {
  Heisenberg<1> h1;
  std::array<double, 3> p{0.3, -0.2, 0.7};
  PointStructure<1> ps;
  auto wd = webster_at<1>(h1, 0, p, &ps);
  using J3 = Jet<3, 3>;
  J3 f = J3::coordinate(2, p[2]);
  auto cj = covariant_jet<1>(ps, wd, f);

  // Zt = i zbar, so f_1 = i(x - i y) = y + i x
  CHECK(std::fabs(cj.fa[0].re - (-0.2)) < 1e-12);
  CHECK(std::fabs(cj.fa[0].im - 0.3) < 1e-12);
  CHECK(std::fabs(cj.f0.re - 1.0) < 1e-12);
  CHECK(lead_abs(cj.fab[0][0]) < 1e-12);
  CHECK(lead_abs(cj.fab_bar[0][0] - C(0.0, 1.0)) < 1e-12);
  CHECK(lead_abs(cj.fbar_a[0][0] - C(0.0, -1.0)) < 1e-12);
  CHECK(cj.commutation_defect < 1e-12);
  CHECK(std::fabs(sublaplacian_value<1>(ps, wd, f)) < 1e-12);
}

TEST_CASE("covariant derivatives of a generic cubic on flat Heisenberg") {
  Heisenberg<1> h1;
  std::array<double, 3> p{0.3, -0.2, 0.7};
  PointStructure<1> ps;
  auto wd = webster_at<1>(h1, 0, p, &ps);
  using J3 = Jet<3, 3>;
  J3 x = J3::coordinate(0, p[0]), y = J3::coordinate(1, p[1]), t = J3::coordinate(2, p[2]);
  J3 f = x * y * 0.5 + t * x / 3.0 - y * t / 5.0 + x * x * x / 7.0;
  auto cj = covariant_jet<1>(ps, wd, f);

  CHECK(lead_abs(cj.fa[0] - C(0.05795238095238095, 0.037)) < 1e-13);
  CHECK(lead_abs(cj.fab_bar[0][0] - C(0.05761904761904762, 0.14)) < 1e-13);
  CHECK(lead_abs(cj.fbar_a[0][0] - C(0.05761904761904762, -0.14)) < 1e-13);
  CHECK(lead_abs(cj.fab[0][0] - C(-0.06238095238095238, -0.19)) < 1e-13);
  CHECK(cj.commutation_defect < 1e-13);
  CHECK(std::fabs(sublaplacian_value<1>(ps, wd, f) - (-0.11523809523809524)) < 1e-13);
}

TEST_CASE("sublaplacian eigenfunction on the nilmanifold") {
  Nilmanifold nm;
  const double lam = 4.0 * std::sqrt(2.0) * M_PI * M_PI;
  for (auto& p : {std::array<double, 3>{0.1, 0.2, 0.3}, std::array<double, 3>{0.8, 0.05, 0.45}}) {
    PointStructure<1> ps;
    auto wd = webster_at<1>(nm, 0, p, &ps);
    using J3 = Jet<3, 3>;
    J3 u = cos(J3::coordinate(0, p[0]) * (2.0 * M_PI));
    double lhs = sublaplacian_value<1>(ps, wd, u);
    CHECK(std::fabs(lhs - lam * u.val()) < 1e-9 * std::max(1.0, std::fabs(lam * u.val())));
  }
}

TEST_CASE("homogeneous-norm power -2 is harmonic away from the origin") {
  Heisenberg<1> h1;
  for (auto& p : {std::array<double, 3>{0.5, 0.1, 0.2}, std::array<double, 3>{-0.3, 0.7, -1.1},
                  std::array<double, 3>{1.2, -0.4, 0.6}}) {
    PointStructure<1> ps;
    auto wd = webster_at<1>(h1, 0, p, &ps);
    using J3 = Jet<3, 3>;
    J3 x = J3::coordinate(0, p[0]), y = J3::coordinate(1, p[1]), t = J3::coordinate(2, p[2]);
    J3 r2 = x * x + y * y;
    J3 G = pow(r2 * r2 + t * t, -0.5);
    CHECK(std::fabs(sublaplacian_value<1>(ps, wd, G)) < 1e-9);
  }
}

TEST_CASE("extremal bubble solves the flat critical equation") {
  // u = ((1+|z|^2)^2 + t^2)^{-1/2} satisfies Delta u = 2 u^3
  Heisenberg<1> h1;
  for (auto& p : {std::array<double, 3>{0.0, 0.0, 0.0}, std::array<double, 3>{0.4, -0.3, 0.8},
                  std::array<double, 3>{-1.1, 0.6, -0.5}}) {
    PointStructure<1> ps;
    auto wd = webster_at<1>(h1, 0, p, &ps);
    using J3 = Jet<3, 3>;
    J3 x = J3::coordinate(0, p[0]), y = J3::coordinate(1, p[1]), t = J3::coordinate(2, p[2]);
    J3 w = 1.0 + x * x + y * y;
    J3 u = pow(w * w + t * t, -0.5);
    double lhs = sublaplacian_value<1>(ps, wd, u);
    double rhs = 2.0 * u.val() * u.val() * u.val();
    CHECK(std::fabs(lhs - rhs) < 1e-10);
  }
}

// ============================================================================
// Unitary-frame norms
// ============================================================================

namespace {

// curved CR dimension 2 example: rescaled flat structure with a rotated frame
struct RotatedRescaledH2 : ManifoldBase<2> {
  Heisenberg<2> base;
  Mat<C> U{2, 2};
  RotatedRescaledH2() {
    U = Mat<C>::identity(2);
  }
  std::string name() const override { return "h2_rot"; }
  bool in_domain(int, const Pt&) const override { return true; }
  StructureJets<2> structure(int chart, const Pt& x) const override {
    auto s = base.structure(chart, x);
    using J3 = Jet<5, 3>;
    using CJ3 = Cx<J3>;
    std::array<J3, 5> c;
    for (int d = 0; d < 5; ++d) c[d] = J3::coordinate(d, x[d]);
    // f = (x1 y2)/4 + t x2/6 - x1^2/9
    J3 f = c[0] * c[3] * 0.25 + c[4] * c[2] / 6.0 - c[0] * c[0] / 9.0;
    J3 e2f = exp(f * 2.0), emf = exp(-f);
    StructureJets<2> out;
    for (int i = 0; i < 5; ++i) out.theta[i] = e2f * s.theta[i];
    for (int a = 0; a < 2; ++a)
      for (int i = 0; i < 5; ++i) {
        CJ3 acc{};
        for (int b = 0; b < 2; ++b) {
          CJ3 ub{J3(U(a, b).re), J3(U(a, b).im)};
          acc += ub * s.W[b][i];
        }
        out.W[a][i] = CJ3(acc.re * emf, acc.im * emf);
      }
    return out;
  }
};

}  // namespace

TEST_CASE("tensor norms are invariant under unitary frame rotations") {
  RotatedRescaledH2 m;
  std::array<double, 5> p{0.2, -0.1, 0.3, 0.15, -0.25};

  PointStructure<2> ps;
  auto wd = webster_at<2>(m, 0, p, &ps);
  auto base_tn = tensor_norms(ps, wd);
  double base_S = wd.S;
  REQUIRE(base_tn.R > 1e-3);  // the example is genuinely curved

  std::mt19937 rng(914);
  std::uniform_real_distribution<double> ang(0.0, 2.0 * M_PI);
  for (int it = 0; it < 100; ++it) {
    double al = ang(rng), be = ang(rng), ga = ang(rng), ta = ang(rng);
    double cs = std::cos(ta), sn = std::sin(ta);
    m.U(0, 0) = C(cs * std::cos(al), cs * std::sin(al));
    m.U(0, 1) = C(sn * std::cos(be), sn * std::sin(be));
    m.U(1, 0) = C(-sn * std::cos(ga - be), -sn * std::sin(ga - be));
    m.U(1, 1) = C(cs * std::cos(ga - al), cs * std::sin(ga - al));

    PointStructure<2> ps2;
    auto wd2 = webster_at<2>(m, 0, p, &ps2);
    auto tn = tensor_norms(ps2, wd2);
    CHECK(std::fabs(wd2.S - base_S) < 1e-9);
    CHECK(std::fabs(tn.A - base_tn.A) < 1e-9);
    CHECK(std::fabs(tn.Ric - base_tn.Ric) < 1e-9);
    CHECK(std::fabs(tn.R - base_tn.R) < 1e-9);
  }
}

TEST_CASE("invariants bundle collects residuals") {
  SphereCharts sph;
  auto iv = compute_invariants<1>(sph, 0, {0.3, -0.2, 0.7});
  CHECK(std::fabs(iv.S - 8.0) < 1e-7);
  CHECK(iv.A_norm < 1e-8);
  CHECK(iv.reeb_residual < 1e-10);
  CHECK(iv.coframe_residual < 1e-10);
  CHECK(iv.connection_residual < 1e-9);
  CHECK(iv.discarded < 1e-7);
}
