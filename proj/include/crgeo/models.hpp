/// @file models.hpp
/// @brief Model manifolds: the Heisenberg group H^n, its compact nilmanifold
///        quotient, and the sphere S^3 presented by two antipodal Cayley
///        charts. Group operations, dilations, transitions, quadrature-node
///        builders, and normal-coordinate maps live here.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <queue>
#include <stdexcept>
#include <vector>

#include "crgeo/core_geometry.hpp"
#include "crgeo/geometry.hpp"

namespace crgeo {

// a point inside a sphere chart's excluded polar cap
struct CapExclusion : DomainError {
  explicit CapExclusion(const std::string& what) : DomainError(what) {}
};

// the requested construction is only available on the model manifolds
struct UnsupportedManifold : std::runtime_error {
  explicit UnsupportedManifold(const std::string& what) : std::runtime_error(what) {}
};

// horizontal-graph target not connected to the source (internal error: the
// contact distribution is bracket generating, so this must not occur)
struct Unreachable : std::runtime_error {
  explicit Unreachable(const std::string& what) : std::runtime_error(what) {}
};

// lattice parameters not compatible with the group law
struct IncompatibleLattice : std::runtime_error {
  explicit IncompatibleLattice(const std::string& what) : std::runtime_error(what) {}
};

// ============================================================================
// Heisenberg group operations
// Coordinates (x_1, y_1, ..., x_n, y_n, t), interleaved so the coordinate
// orientation matches theta ^ (dtheta)^n. Group law
//   (z,s)·(w,u) = (z+w, s+u-2 Im(conj(z)·w)),
// which makes the contact form dt + sum(2x dy - 2y dx) and the frame
// Z_a = d/dz_a + i conj(z_a) d/dt left-invariant.
// ============================================================================

template <int n>
using HPt = std::array<double, 2 * n + 1>;

template <int n>
HPt<n> h_mul(const HPt<n>& a, const HPt<n>& b) {
  HPt<n> r;
  double twist = 0.0;
  for (int k = 0; k < n; ++k) {
    r[2 * k] = a[2 * k] + b[2 * k];
    r[2 * k + 1] = a[2 * k + 1] + b[2 * k + 1];
    twist += a[2 * k] * b[2 * k + 1] - a[2 * k + 1] * b[2 * k];  // Im(conj(z_a) w)_k
  }
  r[2 * n] = a[2 * n] + b[2 * n] - 2.0 * twist;
  return r;
}

template <int n>
HPt<n> h_inv(const HPt<n>& a) {
  HPt<n> r;
  for (int k = 0; k < 2 * n + 1; ++k) r[k] = -a[k];
  return r;
}

template <int n>
double h_norm4(const HPt<n>& a) {
  double r2 = 0.0;
  for (int k = 0; k < 2 * n; ++k) r2 += a[k] * a[k];
  return r2 * r2 + a[2 * n] * a[2 * n];
}

template <int n>
double h_norm(const HPt<n>& a) {
  return std::pow(h_norm4<n>(a), 0.25);
}

template <int n>
HPt<n> h_dilate(double s, const HPt<n>& a) {
  HPt<n> r;
  for (int k = 0; k < 2 * n; ++k) r[k] = s * a[k];
  r[2 * n] = s * s * a[2 * n];
  return r;
}

// ============================================================================
// Heisenberg group H^n as a manifold (single global chart)
// ============================================================================

template <int n>
class Heisenberg : public ManifoldBase<n> {
 public:
  static constexpr int D = 2 * n + 1;
  using Pt = typename ManifoldBase<n>::Pt;
  using J3 = Jet<D, 3>;
  using CJ3 = Cx<J3>;

  std::string name() const override { return "heisenberg"; }
  bool in_domain(int, const Pt&) const override { return true; }

  StructureJets<n> structure(int, const Pt& p) const override {
    StructureJets<n> s;
    for (int a = 0; a < n; ++a) {
      J3 X = J3::coordinate(2 * a, p[2 * a]);
      J3 Y = J3::coordinate(2 * a + 1, p[2 * a + 1]);
      s.theta[2 * a] = -2.0 * Y;
      s.theta[2 * a + 1] = 2.0 * X;
      s.W[a][2 * a] = CJ3(J3(0.5));
      s.W[a][2 * a + 1] = CJ3(J3(0.0), J3(-0.5));
      s.W[a][2 * n] = CJ3(Y, X);  // i conj(z_a) = y_a + i x_a
    }
    s.theta[2 * n] = J3(1.0);
    return s;
  }

  Pt theta_map(int, const Pt& xi, int, const Pt& eta) const override {
    return h_mul<n>(h_inv<n>(xi), eta);
  }
};

// ============================================================================
// Nilmanifold: quotient of H^1 by the lattice generated by
// (L,0,0), (0,L,0), (0,0,Tper) with Tper a positive divisor of 2L^2 (the
// subgroup condition), contact form scaled by a constant c0 so the total
// volume is exactly 1. Fundamental domain [0,L)^2 x [0,Tper).
// ============================================================================

class Nilmanifold : public ManifoldBase<1> {
 public:
  static constexpr int D = 3;
  using Pt = ManifoldBase<1>::Pt;
  using J3 = Jet<3, 3>;
  using CJ3 = Cx<J3>;

  // default unit lattice: theta = c0 * theta_0 has volume density
  // 4 c0^2 = 1/2, so the fundamental domain (euclidean volume 2) has
  // theta-volume exactly 1.
  static constexpr double c0_sq = 0.125;
  static inline const double c0 = std::sqrt(c0_sq);

  // The planar generators (L,0,0), (0,L,0) pick up the central twist
  // -2 L^2 (a b' - a' b) under the group law, so the rectangular set
  // { (aL, bL, c Tper) } is a subgroup exactly when Tper divides 2 L^2;
  // admissible vertical periods are Tper = 2 L^2 / m with m a positive
  // integer (the twist index).
  explicit Nilmanifold(double lattice = 1.0, double t_period = 0.0)
      : L_(lattice), Tper_(t_period > 0.0 ? t_period : 2.0 * lattice * lattice) {
    if (!(L_ > 0.0)) throw IncompatibleLattice("nilmanifold: lattice scale must be positive");
    if (!(Tper_ > 0.0))
      throw IncompatibleLattice("nilmanifold: t-period must be positive");
    double m = 2.0 * L_ * L_ / Tper_;
    if (std::fabs(m - std::round(m)) > 1e-9 * m || std::round(m) < 1.0)
      throw IncompatibleLattice(
          "nilmanifold: t-period must divide 2 lattice^2, or the lattice does not "
          "close under the group law");
    twist_ = static_cast<int>(std::lround(m));
    c0_ = 1.0 / std::sqrt(4.0 * L_ * L_ * Tper_);
  }

  std::string name() const override { return "nilmanifold"; }
  bool in_domain(int, const Pt&) const override { return true; }
  double lattice() const { return L_; }
  double t_period() const { return Tper_; }
  int twist_index() const { return twist_; }  // 2 lattice^2 / t_period
  double scale() const { return c0_; }        // contact form is scale() * theta_0

  // canonical representative in the fundamental domain
  static Pt wrap(Pt p, double L = 1.0, double Tper = 2.0) {
    auto fl = [](double v, double period) { return std::floor(v / period) * period; };
    // translate by lattice elements acting on the left
    double k1 = fl(p[0], L);
    HPt<1> g1{-k1, 0.0, 0.0};
    p = h_mul<1>(g1, p);
    double k2 = fl(p[1], L);
    HPt<1> g2{0.0, -k2, 0.0};
    p = h_mul<1>(g2, p);
    p[2] -= fl(p[2], Tper);
    return p;
  }

  StructureJets<1> structure(int, const Pt& p) const override {
    StructureJets<1> s;
    J3 X = J3::coordinate(0, p[0]);
    J3 Y = J3::coordinate(1, p[1]);
    s.theta[0] = -2.0 * c0_ * Y;
    s.theta[1] = 2.0 * c0_ * X;
    s.theta[2] = J3(c0_);
    const double s0 = 1.0 / std::sqrt(c0_);  // unitary frame: W = Z / sqrt(c0)
    s.W[0][0] = CJ3(J3(0.5 * s0));
    s.W[0][1] = CJ3(J3(0.0), J3(-0.5 * s0));
    s.W[0][2] = CJ3(Y * s0, X * s0);
    return s;
  }

  // Theta(xi, eta) = xi^{-1} gamma eta minimized in homogeneous norm over
  // lattice elements gamma (ties broken lexicographically), so the map is
  // well defined on the quotient and exactly antisymmetric.
  Pt theta_map(int, const Pt& xi_in, int, const Pt& eta_in) const override {
    Pt xi = wrap(xi_in, L_, Tper_), eta = wrap(eta_in, L_, Tper_);
    Pt best{};
    double bestn = -1.0;
    // planar shifts contribute central offsets up to 4 L^2 = 2 m Tper, so the
    // vertical search range scales with the twist index
    const int kr = 2 * twist_ + 3;
    for (int k1 = -2; k1 <= 2; ++k1)
      for (int k2 = -2; k2 <= 2; ++k2)
        for (int k3 = -kr; k3 <= kr; ++k3) {
          HPt<1> gamma{k1 * L_, k2 * L_, k3 * Tper_};
          Pt cand = h_mul<1>(h_inv<1>(xi), h_mul<1>(gamma, eta));
          double nn = h_norm4<1>(cand);
          bool better = bestn < 0 || nn < bestn - 1e-14;
          if (!better && bestn >= 0 && std::fabs(nn - bestn) <= 1e-14) {
            for (int d = 0; d < 3; ++d) {
              if (cand[d] < best[d] - 1e-14) {
                better = true;
                break;
              }
              if (cand[d] > best[d] + 1e-14) break;
            }
          }
          if (better) {
            bestn = nn;
            best = cand;
          }
        }
    return best;
  }

  // Uniform nodes on the fundamental domain; the twisted identifications make
  // plain per-axis periodic summation exact for quotient-periodic fields.
  std::vector<GridNode<1>> quad_nodes(int N) const {
    std::vector<GridNode<1>> nodes;
    nodes.reserve(static_cast<size_t>(N) * N * N);
    const double hx = L_ / N, ht = Tper_ / N;
    const double w = 4.0 * c0_ * c0_ * hx * hx * ht;
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j)
        for (int k = 0; k < N; ++k)
          nodes.push_back({0, {i * hx, j * hx, k * ht}, w});
    return nodes;
  }

 private:
  double L_;
  double Tper_;
  int twist_ = 1;
  double c0_ = c0;
};

// ============================================================================
// Sphere S^3 via two antipodal Cayley charts.
//
// Chart coordinates are Heisenberg coordinates (x, y, t); the chart contact
// form is theta = vol_scale * Lambda * theta_0 with
// Lambda = 1/((1+|z|^2)^2 + t^2), and the unitary frame Lambda^{-1/2} Z.
// The transition between the two charts is the involution
//   tau(z,t) = ( -z/(|z|^2 - i t), -t/(|z|^4 + t^2) ),   |tau(x)| = 1/|x|.
// ============================================================================

class SphereCharts : public ManifoldBase<1> {
 public:
  static constexpr int D = 3;
  using Pt = ManifoldBase<1>::Pt;
  using J3 = Jet<3, 3>;
  using CJ3 = Cx<J3>;

  // blending band: own-chart weight chi = 1 for |x| <= 1/kBand, 0 for
  // |x| >= kBand, quintic in log|x| between; chi(x) + chi(tau x) = 1 exactly.
  static constexpr double kBand = 1.1;
  // per-chart grid boxes (contain every node the composite solver touches)
  static constexpr double kBoxR = 1.55;
  static constexpr double kBoxT = 2.35;

  explicit SphereCharts(bool unit_volume = false, double cap_radius = 0.15)
      : vol_scale_(unit_volume ? 1.0 / M_PI : 1.0), cap_radius_(cap_radius) {}

  std::string name() const override { return "sphere"; }
  int chart_count() const override { return 2; }
  double vol_scale() const { return vol_scale_; }

  static double norm4(const Pt& p) {
    double r2 = p[0] * p[0] + p[1] * p[1];
    return r2 * r2 + p[2] * p[2];
  }

  // scalar conformal factor of the chart relative to the flat model
  double lam(const Pt& p) const {
    double r2 = p[0] * p[0] + p[1] * p[1];
    return vol_scale_ / ((1.0 + r2) * (1.0 + r2) + p[2] * p[2]);
  }

  bool in_domain(int, const Pt& p) const override {
    // each chart covers the sphere minus a cap around its singular point;
    // the cap has radius cap_radius in the coordinates of the OTHER chart
    double lim = 1.0 / cap_radius_;
    return norm4(p) <= lim * lim * lim * lim;
  }

  void require_in_domain(int chart, const Pt& p) const {
    if (!in_domain(chart, p))
      throw CapExclusion("sphere: point inside the excluded cap of chart " +
                         std::to_string(chart));
  }

  StructureJets<1> structure(int chart, const Pt& p) const override {
    require_in_domain(chart, p);
    StructureJets<1> s;
    J3 X = J3::coordinate(0, p[0]);
    J3 Y = J3::coordinate(1, p[1]);
    J3 T = J3::coordinate(2, p[2]);
    J3 r2 = X * X + Y * Y;
    J3 den = (1.0 + r2) * (1.0 + r2) + T * T;
    J3 L = vol_scale_ * inv(den);
    s.theta[0] = L * (-2.0 * Y);
    s.theta[1] = L * (2.0 * X);
    s.theta[2] = L;
    J3 si = pow(den * (1.0 / vol_scale_), 0.5);  // Lambda^{-1/2}
    s.W[0][0] = CJ3(0.5 * si);
    s.W[0][1] = CJ3(J3(0.0), -0.5 * si);
    s.W[0][2] = CJ3(Y * si, X * si);
    return s;
  }

  static Pt tau(const Pt& p) {
    double r2 = p[0] * p[0] + p[1] * p[1];
    double n4 = r2 * r2 + p[2] * p[2];
    // -z (|z|^2 + i t) / (|z|^4 + t^2)
    return {(p[1] * p[2] - p[0] * r2) / n4, -(p[1] * r2 + p[0] * p[2]) / n4, -p[2] / n4};
  }

  Pt transition(int from, int to, const Pt& x) const override {
    if (from == to) return x;
    return tau(x);
  }

  // own-chart partition weight
  static double chi(const Pt& p) {
    double s = 0.25 * std::log(norm4(p));  // log |x|
    const double L = std::log(kBand);
    if (s <= -L) return 1.0;
    if (s >= L) return 0.0;
    double u = (s + L) / (2.0 * L);
    double q = u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
    return 1.0 - q;
  }

  // Theta(xi, eta) = delta_s( x(xi)^{-1} x(eta) ) with the symmetric scale
  // s = (lam(xi) lam(eta))^{1/4}; exactly antisymmetric, and correctly scaled
  // against the chart's contact form.
  Pt theta_map(int chart_xi, const Pt& xi, int chart_eta, const Pt& eta) const override {
    Pt e = (chart_eta == chart_xi) ? eta : tau(eta);
    double s = std::pow(lam(xi) * lam(e), 0.25);
    return h_dilate<1>(s, h_mul<1>(h_inv<1>(xi), e));
  }

  // chi-partitioned midpoint nodes over both chart boxes
  std::vector<GridNode<1>> quad_nodes(int N) const {
    std::vector<GridNode<1>> nodes;
    const double hx = 2.0 * kBoxR / N, ht = 2.0 * kBoxT / N;
    for (int chart = 0; chart < 2; ++chart)
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j)
          for (int k = 0; k < N; ++k) {
            Pt p{-kBoxR + (i + 0.5) * hx, -kBoxR + (j + 0.5) * hx, -kBoxT + (k + 0.5) * ht};
            double c = chi(p);
            if (c == 0.0) continue;
            double L = lam(p);
            double rho = 4.0 * L * L;  // density of theta ^ dtheta
            nodes.push_back({chart, p, c * rho * hx * hx * ht});
          }
    return nodes;
  }

 private:
  double vol_scale_;
  double cap_radius_;
};

// ============================================================================
// Point maps
// ============================================================================

template <int n>
class HeisenbergDilation : public MapBase<n> {
 public:
  static constexpr int D = 2 * n + 1;
  using Pt = typename MapBase<n>::Pt;
  using J3 = Jet<D, 3>;
  using Image = typename MapBase<n>::Image;

  explicit HeisenbergDilation(double s) : s_(s) {}

  Image eval(int chart, const Pt& x) const override {
    Image img;
    img.chart = chart;
    for (int k = 0; k < 2 * n; ++k) img.comp[k] = s_ * J3::coordinate(k, x[k]);
    img.comp[2 * n] = (s_ * s_) * J3::coordinate(2 * n, x[2 * n]);
    return img;
  }

 private:
  double s_;
};

template <int n>
class LeftTranslation : public MapBase<n> {
 public:
  static constexpr int D = 2 * n + 1;
  using Pt = typename MapBase<n>::Pt;
  using J3 = Jet<D, 3>;
  using Image = typename MapBase<n>::Image;

  explicit LeftTranslation(const Pt& a) : a_(a) {}

  Image eval(int chart, const Pt& x) const override {
    Image img;
    img.chart = chart;
    J3 twist{};
    for (int k = 0; k < n; ++k) {
      J3 X = J3::coordinate(2 * k, x[2 * k]);
      J3 Y = J3::coordinate(2 * k + 1, x[2 * k + 1]);
      img.comp[2 * k] = a_[2 * k] + X;
      img.comp[2 * k + 1] = a_[2 * k + 1] + Y;
      twist += a_[2 * k] * Y - a_[2 * k + 1] * X;
    }
    img.comp[2 * n] = a_[2 * n] + J3::coordinate(2 * n, x[2 * n]) - 2.0 * twist;
    return img;
  }

 private:
  Pt a_;
};

// (z, t) -> (conj z, -t): an anti-CR involution of the flat model
template <int n>
class Conjugation : public MapBase<n> {
 public:
  static constexpr int D = 2 * n + 1;
  using Pt = typename MapBase<n>::Pt;
  using J3 = Jet<D, 3>;
  using Image = typename MapBase<n>::Image;

  Image eval(int chart, const Pt& x) const override {
    Image img;
    img.chart = chart;
    for (int k = 0; k < n; ++k) {
      img.comp[2 * k] = J3::coordinate(2 * k, x[2 * k]);
      img.comp[2 * k + 1] = -J3::coordinate(2 * k + 1, x[2 * k + 1]);
    }
    img.comp[2 * n] = -J3::coordinate(2 * n, x[2 * n]);
    return img;
  }
};

// coordinate-identity map into a fixed chart of the target manifold (the
// Cayley transform H^1 -> sphere chart is this map)
template <int n>
class IdentityChartMap : public MapBase<n> {
 public:
  static constexpr int D = 2 * n + 1;
  using Pt = typename MapBase<n>::Pt;
  using J3 = Jet<D, 3>;
  using Image = typename MapBase<n>::Image;

  explicit IdentityChartMap(int to_chart = 0) : to_chart_(to_chart) {}

  Image eval(int, const Pt& x) const override {
    Image img;
    img.chart = to_chart_;
    for (int d = 0; d < D; ++d) img.comp[d] = J3::coordinate(d, x[d]);
    return img;
  }

 private:
  int to_chart_;
};

// U(2) rotation of the sphere expressed in chart coordinates through the
// Cayley parametrization
//   Phi(z,t) = (2z/q, (1-|z|^2+it)/q), q = 1+|z|^2-it     (chart 0)
// with chart 1 seeing the antipodal copy -Phi. The output chart is chosen by
// the larger inverse-Cayley denominator.
class SphereRotation : public MapBase<1> {
 public:
  using Pt = MapBase<1>::Pt;
  using J3 = Jet<3, 3>;
  using CJ3 = Cx<J3>;
  using Image = MapBase<1>::Image;

  explicit SphereRotation(const Mat<C>& U) : U_(U) {}

  Image eval(int chart, const Pt& x) const override {
    auto lift = [](const C& c) { return CJ3{J3(c.re), J3(c.im)}; };
    J3 X = J3::coordinate(0, x[0]);
    J3 Y = J3::coordinate(1, x[1]);
    J3 T = J3::coordinate(2, x[2]);
    J3 r2 = X * X + Y * Y;
    CJ3 z{X, Y};
    CJ3 q{1.0 + r2, -T};
    CJ3 qi = CJ3{J3(1.0)} / q;
    CJ3 z1 = (z * 2.0) * qi;
    CJ3 z2 = CJ3{1.0 - r2, T} * qi;
    if (chart == 1) {
      z1 = -z1;
      z2 = -z2;
    }
    CJ3 w1 = lift(U_(0, 0)) * z1 + lift(U_(0, 1)) * z2;
    CJ3 w2 = lift(U_(1, 0)) * z1 + lift(U_(1, 1)) * z2;

    C w2v = value_of(w2);
    int out_chart = (norm2(C(1.0) + w2v) >= norm2(C(1.0) - w2v)) ? 0 : 1;
    if (out_chart == 1) {
      w1 = -w1;
      w2 = -w2;
    }
    CJ3 den = CJ3{J3(1.0)} + w2;
    CJ3 zp = w1 / den;
    J3 tp = 2.0 * w2.im * inv(norm2(den));

    Image img;
    img.chart = out_chart;
    img.comp = {zp.re, zp.im, tp};
    return img;
  }

 private:
  Mat<C> U_;
};

// ============================================================================
// Deformation families
// ============================================================================

struct PseudoconvexityLost : std::runtime_error {
  int index;
  PseudoconvexityLost(int k, const std::string& what)
      : std::runtime_error(what), index(k) {}
};

// recipe (i): theta_eps = (1 + eps phi) theta, frame kept
template <int n>
class ContactDeformed : public ManifoldBase<n> {
 public:
  static constexpr int D = 2 * n + 1;
  using Pt = typename ManifoldBase<n>::Pt;
  using J3 = Jet<D, 3>;

  ContactDeformed(const ManifoldBase<n>& base, const FieldBase<n>& phi, double eps)
      : base_(base), phi_(phi), eps_(eps) {}

  std::string name() const override { return base_.name() + "/contact-deformed"; }
  int chart_count() const override { return base_.chart_count(); }
  bool in_domain(int chart, const Pt& x) const override { return base_.in_domain(chart, x); }
  Pt transition(int from, int to, const Pt& x) const override {
    return base_.transition(from, to, x);
  }

  StructureJets<n> structure(int chart, const Pt& x) const override {
    StructureJets<n> s = base_.structure(chart, x);
    J3 m = 1.0 + eps_ * phi_.eval(chart, x);
    for (int i = 0; i < D; ++i) s.theta[i] = m * s.theta[i];
    return s;
  }

 private:
  const ManifoldBase<n>& base_;
  const FieldBase<n>& phi_;
  double eps_;
};

// recipe (ii): W_eps = W + eps mu conj(W), contact form kept (n = 1)
class FrameDeformed : public ManifoldBase<1> {
 public:
  using Pt = ManifoldBase<1>::Pt;
  using J3 = Jet<3, 3>;
  using CJ3 = Cx<J3>;
  using MuFn = std::function<Cx<Jet<3, 3>>(int, const Pt&)>;

  FrameDeformed(const ManifoldBase<1>& base, MuFn mu, double eps)
      : base_(base), mu_(std::move(mu)), eps_(eps) {}

  std::string name() const override { return base_.name() + "/frame-deformed"; }
  int chart_count() const override { return base_.chart_count(); }
  bool in_domain(int chart, const Pt& x) const override { return base_.in_domain(chart, x); }
  Pt transition(int from, int to, const Pt& x) const override {
    return base_.transition(from, to, x);
  }

  StructureJets<1> structure(int chart, const Pt& x) const override {
    StructureJets<1> s = base_.structure(chart, x);
    CJ3 mu = mu_(chart, x);
    for (int i = 0; i < 3; ++i) {
      CJ3 w = s.W[0][i];
      CJ3 add = (mu * conj(w)) * eps_;
      s.W[0][i] = w + add;
    }
    return s;
  }

 private:
  const ManifoldBase<1>& base_;
  MuFn mu_;
  double eps_;
};

enum class DeformRecipe { ContactMultiplier, FrameMixing };

// A scheduled family (eps_k) of deformed structures around a base manifold,
// with pointwise C^0/C^1 deviation metrics and a pseudoconvexity guard.
class DeformationFamily {
 public:
  using Pt = std::array<double, 3>;

  DeformationFamily(const ManifoldBase<1>& base, DeformRecipe recipe,
                    const FieldBase<1>* phi, FrameDeformed::MuFn mu,
                    std::vector<double> schedule, std::vector<Pt> samples)
      : base_(base), recipe_(recipe), phi_(phi), mu_(std::move(mu)),
        schedule_(std::move(schedule)), samples_(std::move(samples)) {
    members_.resize(schedule_.size());
    for (size_t k = 0; k < schedule_.size(); ++k) {
      (void)member(static_cast<int>(k));
      check_pseudoconvex(static_cast<int>(k));
    }
  }

  int size() const { return static_cast<int>(schedule_.size()); }
  double eps(int k) const { return schedule_[k]; }

  const ManifoldBase<1>& member(int k) {
    if (!members_[k]) {
      if (recipe_ == DeformRecipe::ContactMultiplier)
        members_[k] = std::make_unique<ContactDeformed<1>>(base_, *phi_, schedule_[k]);
      else
        members_[k] = std::make_unique<FrameDeformed>(base_, mu_, schedule_[k]);
    }
    return *members_[k];
  }

  struct Deviation {
    double c0 = 0.0;  // sup of |theta_k - theta_0| and |J_k - J_0| components
    double c1 = 0.0;  // c0 plus first-derivative coefficient deviations
  };

  Deviation deviation(int k) {
    Deviation dv;
    const ManifoldBase<1>& mk = member(k);
    for (const Pt& p : samples_) {
      auto s0 = base_.structure(0, p);
      auto sk = mk.structure(0, p);
      for (int i = 0; i < 3; ++i) {
        Jet<3, 3> d = sk.theta[i] - s0.theta[i];
        dv.c0 = std::max(dv.c0, std::fabs(d.val()));
        for (int j = 0; j < 3; ++j) dv.c1 = std::max(dv.c1, std::fabs(d.d1(j)));
      }
      auto J0 = j_matrix(solve_structure(s0));
      auto Jk = j_matrix(solve_structure(sk));
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          Jet<3, 2> d = Jk(i, j) - J0(i, j);
          dv.c0 = std::max(dv.c0, std::fabs(d.val()));
          for (int q = 0; q < 3; ++q) dv.c1 = std::max(dv.c1, std::fabs(d.d1(q)));
        }
    }
    dv.c1 = std::max(dv.c1, dv.c0);
    return dv;
  }

 private:
  void check_pseudoconvex(int k) {
    const ManifoldBase<1>& mk = member(k);
    for (const Pt& p : samples_) {
      auto ps = solve_structure(mk.structure(0, p));
      double g = value_of(ps.g(0, 0)).re;
      if (!(g > 1e-12))
        throw PseudoconvexityLost(k, "deformation: Levi form not positive at step " +
                                         std::to_string(k));
    }
  }

  const ManifoldBase<1>& base_;
  DeformRecipe recipe_;
  const FieldBase<1>* phi_;
  FrameDeformed::MuFn mu_;
  std::vector<double> schedule_;
  std::vector<Pt> samples_;
  std::vector<std::unique_ptr<ManifoldBase<1>>> members_;
};

// ============================================================================
// Normal coordinates
// ============================================================================

struct NormalCoords {
  int chart = 0;
  std::array<double, 3> xi{};
  // eta (any chart) -> its normal coordinates relative to the center
  std::function<std::array<double, 3>(int, const std::array<double, 3>&)> forward;
  // normal coordinates -> manifold point, with jets for pullback probes
  std::function<MapBase<1>::Image(const std::array<double, 3>&)> inverse;
};

inline NormalCoords normal_coordinates(const ManifoldBase<1>& m, int chart,
                                       const std::array<double, 3>& xi) {
  using J3 = Jet<3, 3>;
  NormalCoords nc;
  nc.chart = chart;
  nc.xi = xi;
  nc.forward = [&m, chart, xi](int chart_eta, const std::array<double, 3>& eta) {
    return m.theta_map(chart, xi, chart_eta, eta);
  };

  if (auto* sph = dynamic_cast<const SphereCharts*>(&m)) {
    double lxi = sph->lam(xi);
    double vs = sph->vol_scale();
    nc.inverse = [sph, chart, xi, lxi, vs](const std::array<double, 3>& y) {
      // solve s = (lam(xi) lam(xi . delta_{1/s} y))^{1/4}, first at values,
      // then as a jet fixed point
      double s = std::pow(lxi, 0.5);
      for (int it = 0; it < 200; ++it) {
        HPt<1> u = h_dilate<1>(1.0 / s, y);
        HPt<1> eta = h_mul<1>(xi, u);
        double ns = std::pow(lxi * sph->lam(eta), 0.25);
        if (std::fabs(ns - s) < 1e-15) {
          s = ns;
          break;
        }
        s = ns;
      }
      J3 yx = J3::coordinate(0, y[0]), yy = J3::coordinate(1, y[1]), yt = J3::coordinate(2, y[2]);
      J3 sj(s);
      J3 ex, ey, et;
      for (int it = 0; it < 16; ++it) {
        J3 si = inv(sj);
        J3 ux = yx * si, uy = yy * si, ut = yt * si * si;
        ex = xi[0] + ux;
        ey = xi[1] + uy;
        et = xi[2] + ut - 2.0 * (xi[0] * uy - xi[1] * ux);
        J3 r2 = ex * ex + ey * ey;
        J3 den = (1.0 + r2) * (1.0 + r2) + et * et;
        J3 lj = vs * inv(den);
        J3 nsj = pow(J3(lxi) * lj, 0.25);
        double delta = 0.0;
        for (int c = 0; c < J3::N; ++c) delta = std::max(delta, std::fabs(nsj.c[c] - sj.c[c]));
        sj = nsj;
        if (delta < 1e-15) break;
      }
      MapBase<1>::Image img;
      img.chart = chart;
      img.comp = {ex, ey, et};
      return img;
    };
    return nc;
  }

  if (dynamic_cast<const Heisenberg<1>*>(&m) || dynamic_cast<const Nilmanifold*>(&m)) {
    nc.inverse = [xi](const std::array<double, 3>& y) {
      LeftTranslation<1> L(xi);
      return L.eval(0, y);
    };
    return nc;
  }

  throw UnsupportedManifold(m.name() + ": normal coordinates unsupported");
}

// ============================================================================
// Finite-difference jet backend: order-3 jets of a field given only by
// pointwise evaluation, via tensorized central differences (343 samples)
// ============================================================================

class FDJetField : public FieldBase<1> {
 public:
  using Pt = FieldBase<1>::Pt;
  using J3 = Jet<3, 3>;
  using PtFn = std::function<double(int, const Pt&)>;

  explicit FDJetField(PtFn f, double h = 1e-3) : f_(std::move(f)), h_(h) {}

  J3 eval(int chart, const Pt& x) const override {
    double smp[7][7][7];
    Pt p;
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 7; ++j)
        for (int k = 0; k < 7; ++k) {
          p[0] = x[0] + (i - 3) * h_;
          p[1] = x[1] + (j - 3) * h_;
          p[2] = x[2] + (k - 3) * h_;
          smp[i][j][k] = f_(chart, p);
        }
    // per-order central stencils on offsets -3..3 (all at least 4th order)
    static const double S[4][7] = {
        {0, 0, 0, 1, 0, 0, 0},
        {0, 1.0 / 12, -8.0 / 12, 0, 8.0 / 12, -1.0 / 12, 0},
        {0, -1.0 / 12, 16.0 / 12, -30.0 / 12, 16.0 / 12, -1.0 / 12, 0},
        {1.0 / 8, -1.0, 13.0 / 8, 0, -13.0 / 8, 1.0, -1.0 / 8}};
    static const double fact[4] = {1, 1, 2, 6};
    J3 out;
    const auto& tab = JetTable<3, 3>::instance();
    for (int idx = 0; idx < J3::N; ++idx) {
      int a0 = tab.exps[idx][0], a1 = tab.exps[idx][1], a2 = tab.exps[idx][2];
      double acc = 0.0;
      for (int i = 0; i < 7; ++i) {
        if (S[a0][i] == 0.0) continue;
        for (int j = 0; j < 7; ++j) {
          if (S[a1][j] == 0.0) continue;
          for (int k = 0; k < 7; ++k) {
            if (S[a2][k] == 0.0) continue;
            acc += S[a0][i] * S[a1][j] * S[a2][k] * smp[i][j][k];
          }
        }
      }
      out.c[idx] = acc / std::pow(h_, a0 + a1 + a2) / (fact[a0] * fact[a1] * fact[a2]);
    }
    return out;
  }

 private:
  PtFn f_;
  double h_;
};

// ============================================================================
// Carnot-Caratheodory distance (upper-bound estimator)
// ============================================================================

struct CCOptions {
  double xmax = 1.2;  // grid half-width in x and y
  double tmax = 2.0;  // grid half-width in t
  int N = 30;         // planar subdivisions; t-spacing is h^2
  double kappa = 2.0; // vertical-residual tolerance, in units of h^2
};

namespace detail {

// conformal scale of the chart contact form against dt + 2x dy - 2y dx
inline double contact_scale(const ManifoldBase<1>& m, int chart,
                            const std::array<double, 3>& p) {
  if (dynamic_cast<const Heisenberg<1>*>(&m)) return 1.0;
  if (auto* nm = dynamic_cast<const Nilmanifold*>(&m)) return nm->scale();
  if (auto* sph = dynamic_cast<const SphereCharts*>(&m)) return sph->lam(p);
  return m.structure(chart, p).theta[2].val();
}

}  // namespace detail

// Dijkstra over near-horizontal grid steps: planar moves (dx, dy) combined
// with the t-snap that best cancels the contact twist, each step's vertical
// residual kept below kappa h^2. Horizontal step length is sqrt(2) |dz|
// scaled by the local conformal factor. Always an upper-bound estimate.
inline double cc_distance(const ManifoldBase<1>& m, int chart, const std::array<double, 3>& a,
                          const std::array<double, 3>& b, const CCOptions& opt = {}) {
  const int Nx = opt.N;
  const double h = 2.0 * opt.xmax / Nx;
  const double ht = h * h;
  const int Nt = static_cast<int>(std::ceil(2.0 * opt.tmax / ht));
  const int nx = Nx + 1, nt = Nt + 1;
  const int64_t total = static_cast<int64_t>(nx) * nx * nt;

  auto xc = [&](int i) { return -opt.xmax + i * h; };
  auto tc = [&](int k) { return -opt.tmax + k * ht; };
  auto node = [&](int i, int j, int k) {
    return (static_cast<int64_t>(i) * nx + j) * nt + k;
  };
  auto snap = [&](const std::array<double, 3>& p, int& i, int& j, int& k) {
    i = static_cast<int>(std::lround((p[0] + opt.xmax) / h));
    j = static_cast<int>(std::lround((p[1] + opt.xmax) / h));
    k = static_cast<int>(std::lround((p[2] + opt.tmax) / ht));
    if (i < 0 || i > Nx || j < 0 || j > Nx || k < 0 || k > Nt)
      throw DomainError("cc_distance: endpoint outside the grid box");
  };

  int ai, aj, ak, bi, bj, bk;
  snap(a, ai, aj, ak);
  snap(b, bi, bj, bk);
  const int64_t src = node(ai, aj, ak), dst = node(bi, bj, bk);
  if (src == dst) return 0.0;

  // per-planar-node conformal factor (the scale varies slowly in t; evaluate
  // at the endpoint t as needed)
  std::vector<double> dist(total, std::numeric_limits<double>::infinity());
  std::vector<char> done(total, 0);
  using QE = std::pair<double, int64_t>;
  std::priority_queue<QE, std::vector<QE>, std::greater<QE>> pq;
  dist[src] = 0.0;
  pq.push({0.0, src});

  const double sq2 = std::sqrt(2.0);
  while (!pq.empty()) {
    auto [d0, u] = pq.top();
    pq.pop();
    if (done[u]) continue;
    done[u] = 1;
    if (u == dst) return d0;
    int k = static_cast<int>(u % nt);
    int j = static_cast<int>((u / nt) % nx);
    int i = static_cast<int>(u / (static_cast<int64_t>(nt) * nx));
    const double x = xc(i), y = xc(j), t = tc(k);
    const double sc_u = detail::contact_scale(m, chart, {x, y, t});
    for (int di = -1; di <= 1; ++di)
      for (int dj = -1; dj <= 1; ++dj) {
        if (di == 0 && dj == 0) continue;
        int i2 = i + di, j2 = j + dj;
        if (i2 < 0 || i2 > Nx || j2 < 0 || j2 > Nx) continue;
        const double xm = x + 0.5 * di * h, ym = y + 0.5 * dj * h;
        const double twist = 2.0 * xm * (dj * h) - 2.0 * ym * (di * h);
        const int msnap = static_cast<int>(std::lround(-twist / ht));
        for (int mm = msnap - 1; mm <= msnap + 1; ++mm) {
          int k2 = k + mm;
          if (k2 < 0 || k2 > Nt) continue;
          if (std::fabs(mm * ht + twist) > opt.kappa * h * h) continue;
          const double sc_v =
              detail::contact_scale(m, chart, {xc(i2), xc(j2), tc(k2)});
          const double wug = sq2 * 0.5 * (std::sqrt(sc_u) + std::sqrt(sc_v)) *
                             std::hypot(di * h, dj * h);
          int64_t v = node(i2, j2, k2);
          if (dist[v] > d0 + wug) {
            dist[v] = d0 + wug;
            pq.push({dist[v], v});
          }
        }
      }
  }
  throw Unreachable("cc_distance: target unreachable on the grid");
}

// membership test for the Carnot-Caratheodory ball B(x, r) in a chart
inline bool cc_ball_contains(const ManifoldBase<1>& m, int chart,
                             const std::array<double, 3>& center, double radius,
                             const std::array<double, 3>& y, const CCOptions& opt = {}) {
  return cc_distance(m, chart, center, y, opt) < radius;
}

}  // namespace crgeo
