#include <catch2/catch_amalgamated.hpp>

#include "crgeo/jets.hpp"

using namespace crgeo;

using J3 = Jet<3, 3>;

namespace {

J3 make_poly(double x, double y, double t) {
  // f = 2 + x^2 y - 3 t x + y^3 / 6
  J3 X = J3::coordinate(0, x), Y = J3::coordinate(1, y), T = J3::coordinate(2, t);
  return J3::constant(2.0) + X * X * Y - 3.0 * (T * X) + (Y * Y * Y) * (1.0 / 6.0);
}

double f_ref(double x, double y, double t) { return 2.0 + x * x * y - 3.0 * t * x + y * y * y / 6.0; }

}  // namespace

TEST_CASE("jet sizes and coordinate layout") {
  STATIC_REQUIRE(Jet<3, 3>::N == 20);
  STATIC_REQUIRE(Jet<3, 2>::N == 10);
  STATIC_REQUIRE(Jet<3, 1>::N == 4);
  STATIC_REQUIRE(Jet<5, 3>::N == 56);
  J3 x1 = J3::coordinate(1, 7.5);
  REQUIRE(x1.val() == 7.5);
  REQUIRE(x1.d1(1) == 1.0);
  REQUIRE(x1.d1(0) == 0.0);
}

TEST_CASE("polynomial jet reproduces exact Taylor coefficients") {
  double x = 0.3, y = -0.2, t = 0.7;
  J3 f = make_poly(x, y, t);
  REQUIRE_THAT(f.val(), Catch::Matchers::WithinAbs(f_ref(x, y, t), 1e-15));
  // exact partials of f = 2 + x^2 y - 3tx + y^3/6
  REQUIRE_THAT(f.d1(0), Catch::Matchers::WithinAbs(2 * x * y - 3 * t, 1e-15));
  REQUIRE_THAT(f.d1(1), Catch::Matchers::WithinAbs(x * x + y * y / 2, 1e-15));
  REQUIRE_THAT(f.d1(2), Catch::Matchers::WithinAbs(-3 * x, 1e-15));
  // second derivatives via derive()
  auto fx = derive(f, 0);
  auto fxy = derive(fx, 1);
  REQUIRE_THAT(fxy.val(), Catch::Matchers::WithinAbs(2 * x, 1e-15));
  auto fxx = derive(fx, 0);
  REQUIRE_THAT(fxx.val(), Catch::Matchers::WithinAbs(2 * y, 1e-15));
  // third derivative x,x,y = 2 exactly
  auto fxxy = derive(fxx, 1);
  REQUIRE_THAT(fxxy.val(), Catch::Matchers::WithinAbs(2.0, 1e-15));
  auto fy = derive(f, 1);
  auto fyyy = derive(derive(fy, 1), 1);
  REQUIRE_THAT(fyyy.val(), Catch::Matchers::WithinAbs(1.0, 1e-15));
}

TEST_CASE("jet truncation is a prefix copy") {
  J3 f = make_poly(0.1, 0.4, -0.9);
  auto f2 = truncate<2>(f);
  for (int i = 0; i < Jet<3, 2>::N; ++i) REQUIRE(f2.c[i] == f.c[i]);
}

TEST_CASE("transcendental compositions match analytic derivatives") {
  double x = 0.25, y = 0.5, t = -0.4;
  J3 X = J3::coordinate(0, x), Y = J3::coordinate(1, y), T = J3::coordinate(2, t);
  J3 u = X * Y + T * 0.5 + 1.5;  // affine-ish argument, exact jets

  SECTION("exp") {
    J3 g = exp(u);
    double e = std::exp(x * y + 0.5 * t + 1.5);
    REQUIRE_THAT(g.val(), Catch::Matchers::WithinRel(e, 1e-14));
    REQUIRE_THAT(g.d1(0), Catch::Matchers::WithinRel(e * y, 1e-14));
    auto gxy = derive(derive(g, 0), 1);
    REQUIRE_THAT(gxy.val(), Catch::Matchers::WithinRel(e * (1 + x * y), 1e-14));
    auto gxyt = derive(gxy, 2);
    REQUIRE_THAT(gxyt.val(), Catch::Matchers::WithinRel(e * 0.5 * (1 + x * y), 1e-13));
  }
  SECTION("log inverts exp") {
    J3 g = log(exp(u));
    for (int i = 0; i < J3::N; ++i) REQUIRE_THAT(g.c[i], Catch::Matchers::WithinAbs(u.c[i], 1e-13));
  }
  SECTION("sqrt squares back") {
    J3 s = sqrt(u);
    J3 ss = s * s;
    for (int i = 0; i < J3::N; ++i) REQUIRE_THAT(ss.c[i], Catch::Matchers::WithinAbs(u.c[i], 1e-13));
  }
  SECTION("inv multiplies back to one") {
    J3 w = inv(u) * u;
    REQUIRE_THAT(w.val(), Catch::Matchers::WithinAbs(1.0, 1e-14));
    for (int i = 1; i < J3::N; ++i) REQUIRE_THAT(w.c[i], Catch::Matchers::WithinAbs(0.0, 1e-13));
  }
  SECTION("sin/cos Pythagorean identity as jets") {
    J3 w = sin(u) * sin(u) + cos(u) * cos(u);
    REQUIRE_THAT(w.val(), Catch::Matchers::WithinAbs(1.0, 1e-14));
    for (int i = 1; i < J3::N; ++i) REQUIRE_THAT(w.c[i], Catch::Matchers::WithinAbs(0.0, 1e-13));
  }
  SECTION("pow general exponent") {
    J3 g = pow(u, 1.7);
    double v = x * y + 0.5 * t + 1.5;
    REQUIRE_THAT(g.val(), Catch::Matchers::WithinRel(std::pow(v, 1.7), 1e-14));
    REQUIRE_THAT(g.d1(1), Catch::Matchers::WithinRel(1.7 * std::pow(v, 0.7) * x, 1e-13));
  }
}

TEST_CASE("complex jets multiply like complex numbers") {
  using CJ = Cx<J3>;
  double x = 0.2, y = -0.1, t = 0.3;
  J3 X = J3::coordinate(0, x), Y = J3::coordinate(1, y), T = J3::coordinate(2, t);
  CJ z{X, Y};           // z = x + i y as a field
  CJ w{T, X * Y};       // w = t + i xy
  CJ p = z * w;
  // (x + iy)(t + ixy) = xt - x y^2 + i(yt + x^2 y)
  REQUIRE_THAT(p.re.val(), Catch::Matchers::WithinAbs(x * t - x * y * y, 1e-15));
  REQUIRE_THAT(p.im.val(), Catch::Matchers::WithinAbs(y * t + x * x * y, 1e-15));
  CJ q = p / w;
  REQUIRE_THAT(q.re.val(), Catch::Matchers::WithinAbs(z.re.val(), 1e-13));
  REQUIRE_THAT(q.im.val(), Catch::Matchers::WithinAbs(z.im.val(), 1e-13));
  for (int i = 0; i < J3::N; ++i) {
    REQUIRE_THAT(q.re.c[i], Catch::Matchers::WithinAbs(z.re.c[i], 1e-12));
    REQUIRE_THAT(q.im.c[i], Catch::Matchers::WithinAbs(z.im.c[i], 1e-12));
  }
}

TEST_CASE("five-variable jets: product rule spot check") {
  using J5 = Jet<5, 3>;
  std::array<double, 5> p{0.1, -0.2, 0.3, 0.05, -0.4};
  J5 a = J5::coordinate(0, p[0]) * J5::coordinate(3, p[3]) + J5::coordinate(4, p[4]);
  J5 b = J5::coordinate(1, p[1]) + J5::coordinate(2, p[2]) * J5::coordinate(4, p[4]);
  J5 ab = a * b;
  // d/dx4 (ab) = (d4 a) b + a (d4 b); d4 a = x0? no: a = x0 x3 + x4, d4 a = 1; d4 b = x2
  double aval = p[0] * p[3] + p[4], bval = p[1] + p[2] * p[4];
  REQUIRE_THAT(derive(ab, 4).val(), Catch::Matchers::WithinAbs(1.0 * bval + aval * p[2], 1e-15));
  // mixed third derivative d0 d3 d4 (ab): compute symbolically = d0d3(a)*d4(b)+...
  // ab = (x0 x3 + x4)(x1 + x2 x4); d0 d3 d4 [..] = d0 d3 [ b + (x0x3+x4) x2 ] = d0 [ x0 x2 ] = x2
  auto d = derive(derive(derive(ab, 0), 3), 4);
  REQUIRE_THAT(d.val(), Catch::Matchers::WithinAbs(p[2], 1e-15));
}
