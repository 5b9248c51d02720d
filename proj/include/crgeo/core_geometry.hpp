/// @file core_geometry.hpp
/// @brief Pointwise contact/CR structure solving: Levi form, Reeb field,
///        admissible coframe, volume density, and Kahan-compensated
///        integration over precomputed quadrature nodes.
#pragma once

#include <vector>

#include "crgeo/geometry.hpp"

namespace crgeo {

// ============================================================================
// Pointwise solved structure
// ============================================================================

template <int n>
struct PointStructure {
  static constexpr int D = 2 * n + 1;
  using J3 = Jet<D, 3>;
  using J2 = Jet<D, 2>;
  using CJ2 = Cx<J2>;

  std::array<J3, D> theta;                     // input contact form (order 3)
  std::array<std::array<Cx<J3>, D>, n> W;      // input frame (order 3)
  std::array<std::array<J2, D>, D> dth;        // dtheta(e_i, e_j) coefficients
  std::array<J2, D> T;                         // Reeb field components
  std::array<std::array<CJ2, D>, n> cofr;      // admissible coframe theta^a
  Mat<CJ2> g;                                  // Levi form g_{ab'} in the frame

  double reeb_residual = 0.0;      // max |theta(T)-1|, |dtheta(T,e_i)| values
  double coframe_residual = 0.0;   // max dual-condition deviation at values
};

// evaluate a 1-form (components w_i) on a vector (components v^i)
template <class S, size_t D>
S form_on(const std::array<S, D>& w, const std::array<S, D>& v) {
  S s{};
  for (size_t i = 0; i < D; ++i) s += w[i] * v[i];
  return s;
}

// evaluate a 2-form given by antisymmetric coefficients B_{ij} on (v, u)
template <class S, class R, size_t D>
S two_form_on(const std::array<std::array<R, D>, D>& B, const std::array<S, D>& v,
              const std::array<S, D>& u) {
  S s{};
  for (size_t i = 0; i < D; ++i)
    for (size_t j = 0; j < D; ++j) s += v[i] * S(B[i][j]) * u[j];
  return s;
}

template <int n>
PointStructure<n> solve_structure(const StructureJets<n>& in) {
  constexpr int D = 2 * n + 1;
  using J2 = Jet<D, 2>;
  using CJ2 = Cx<J2>;
  PointStructure<n> out;
  out.theta = in.theta;
  out.W = in.W;

  // dtheta_{ij} = d_i theta_j - d_j theta_i
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j) out.dth[i][j] = derive(in.theta[j], i) - derive(in.theta[i], j);

  std::array<J2, D> th2;
  for (int i = 0; i < D; ++i) th2[i] = truncate<2>(in.theta[i]);
  std::array<std::array<CJ2, D>, n> W2;
  for (int a = 0; a < n; ++a)
    for (int i = 0; i < D; ++i) W2[a][i] = truncate<2>(in.W[a][i]);

  // Reeb field: theta(T) = 1 and T _| dtheta = 0, solved in least squares
  {
    Mat<J2> M(D + 1, D), b(D + 1, 1);
    for (int k = 0; k < D; ++k) M(0, k) = th2[k];
    b(0, 0) = J2(1.0);
    for (int j = 0; j < D; ++j)
      for (int k = 0; k < D; ++k) M(1 + j, k) = out.dth[k][j];
    double res = 0.0;
    Mat<J2> x = least_squares(M, b, &res);
    for (int k = 0; k < D; ++k) out.T[k] = x(k, 0);
    out.reeb_residual = res;
  }

  // admissible coframe: rows 1..n of the inverse of [T | W | conj W]
  {
    Mat<CJ2> E(D, D);
    for (int i = 0; i < D; ++i) {
      E(i, 0) = CJ2(out.T[i]);
      for (int a = 0; a < n; ++a) {
        E(i, 1 + a) = W2[a][i];
        E(i, 1 + n + a) = conj(W2[a][i]);
      }
    }
    Mat<CJ2> Einv = mat_inverse(E);
    for (int a = 0; a < n; ++a)
      for (int j = 0; j < D; ++j) out.cofr[a][j] = Einv(1 + a, j);

    // dual-condition residuals at the value level
    double r = 0.0;
    std::array<CJ2, D> Tc;
    for (int i = 0; i < D; ++i) Tc[i] = CJ2(out.T[i]);
    for (int a = 0; a < n; ++a) {
      r = std::max(r, lead_abs(form_on(out.cofr[a], Tc)));
      for (int b = 0; b < n; ++b) {
        CJ2 pav = form_on(out.cofr[a], W2[b]);
        if (a == b) pav.re = pav.re - 1.0;
        r = std::max(r, lead_abs(pav));
        std::array<CJ2, D> Wc;
        for (int i = 0; i < D; ++i) Wc[i] = conj(W2[b][i]);
        r = std::max(r, lead_abs(form_on(out.cofr[a], Wc)));
      }
    }
    out.coframe_residual = r;
  }

  // Levi form g_{ab'} = dtheta(W_a, conj W_b) / (2i)
  out.g = Mat<CJ2>(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      CJ2 s{};
      for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) s += W2[a][i] * CJ2(out.dth[i][j]) * conj(W2[b][j]);
      // multiply by 1/(2i) = -i/2
      out.g(a, b) = CJ2(s.im * 0.5, s.re * (-0.5));
    }
  return out;
}

// Matrix of the adapted almost complex structure: J W_a = i W_a on the
// holomorphic frame, J T = 0. Column j holds the components of J e_j,
// J e_j = sum_a [ i theta^a(e_j) W_a + conj ], carried at jet order 2.
template <int n>
Mat<Jet<2 * n + 1, 2>> j_matrix(const PointStructure<n>& ps) {
  constexpr int D = 2 * n + 1;
  using J2 = Jet<D, 2>;
  Mat<J2> Jm(D, D);
  for (int j = 0; j < D; ++j)
    for (int i = 0; i < D; ++i) {
      J2 s{};
      for (int a = 0; a < n; ++a) {
        auto prod = ps.cofr[a][j] * truncate<2>(ps.W[a][i]);
        s += prod.im * (-2.0);
      }
      Jm(i, j) = s;
    }
  return Jm;
}

// Levi form alone, evaluated at values (convenience for tests and callers
// that do not need the full solved structure).
template <int n>
Mat<C> levi_form(const ManifoldBase<n>& m, int chart, const typename ManifoldBase<n>::Pt& x) {
  auto ps = solve_structure(m.structure(chart, x));
  Mat<C> g(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) g(a, b) = value_of(ps.g(a, b));
  return g;
}

// ============================================================================
// Volume density of theta ^ (dtheta)^n against the coordinate volume element
// ============================================================================

template <int n>
double volume_density(const StructureJets<n>& in) {
  constexpr int D = 2 * n + 1;
  std::array<double, D> th;
  double dth[D][D];
  for (int i = 0; i < D; ++i) th[i] = in.theta[i].val();
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j) dth[i][j] = in.theta[j].d1(i) - in.theta[i].d1(j);
  if constexpr (n == 1) {
    return th[0] * dth[1][2] - th[1] * dth[0][2] + th[2] * dth[0][1];
  } else {
    static_assert(n == 2);
    // (dtheta ^ dtheta)(a,b,c,d) = 2 (B_ab B_cd - B_ac B_bd + B_ad B_bc)
    auto dd = [&](int a, int b, int c, int d) {
      return 2.0 * (dth[a][b] * dth[c][d] - dth[a][c] * dth[b][d] + dth[a][d] * dth[b][c]);
    };
    double rho = 0.0;
    double sgn = 1.0;
    for (int p = 0; p < D; ++p) {
      int r[4], q = 0;
      for (int i = 0; i < D; ++i)
        if (i != p) r[q++] = i;
      rho += sgn * th[p] * dd(r[0], r[1], r[2], r[3]);
      sgn = -sgn;
    }
    return rho;
  }
}

// ============================================================================
// Quadrature
// ============================================================================

template <int n>
struct GridNode {
  int chart;
  std::array<double, 2 * n + 1> x;
  double w;  // full quadrature weight: cell volume * density * partition
};

struct KahanSum {
  double s = 0.0, c = 0.0;
  void add(double x) {
    double y = x - c;
    double t = s + y;
    c = (t - s) - y;
    s = t;
  }
  double get() const { return s; }
};

// Integrate a callable f(chart, x) -> double over precomputed nodes, in node
// order, with compensated summation (deterministic across reruns).
template <int n, class F>
double integrate(const std::vector<GridNode<n>>& nodes, F&& f) {
  KahanSum acc;
  for (const auto& nd : nodes) acc.add(nd.w * f(nd.chart, nd.x));
  return acc.get();
}

template <int n>
double integrate_field(const std::vector<GridNode<n>>& nodes, const FieldBase<n>& f) {
  return integrate<n>(nodes, [&](int c, const std::array<double, 2 * n + 1>& x) {
    return f.value(c, x);
  });
}

}  // namespace crgeo
