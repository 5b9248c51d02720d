/// @file webster.hpp
/// @brief Connection, torsion, and curvature of a strongly pseudoconvex
///        pseudohermitian structure, solved pointwise from the structure
///        equations
///          d theta^a = theta^b ^ omega_b^a + A^a_{b'} theta ^ theta^{b'},
///          d g_{ab'} = omega_{ab'} + omega_{b'a},
///          A_{ab} = A_{ba},
///        plus covariant derivatives of scalar fields, the sublaplacian, and
///        unitary-frame tensor norms.
#pragma once

#include <algorithm>

#include "crgeo/core_geometry.hpp"

namespace crgeo {

template <int n>
struct WebsterData {
  static constexpr int D = 2 * n + 1;
  using J1 = Jet<D, 1>;
  using CJ1 = Cx<J1>;

  // connection coefficients in the coframe expansion
  // omega_a^b = p[a][b][m] theta^m + q[a][b][m] theta^{m'} + r[a][b] theta
  std::array<std::array<std::array<CJ1, n>, n>, n> p{}, q{};
  std::array<std::array<CJ1, n>, n> r{};
  std::array<std::array<CJ1, n>, n> A{};              // torsion A^a_{b'}
  std::array<std::array<std::array<CJ1, D>, n>, n> om{};  // omega_a^b coordinate comps
  double connection_residual = 0.0;

  // curvature at the point: Pi_a^b = d omega_a^b - omega_a^g ^ omega_g^b
  std::array<std::array<std::array<std::array<C, n>, n>, n>, n> R{};  // R_a^b_{g s'}
  std::array<std::array<C, n>, n> Ric{};  // Ric_{a b'} = R_g^g_{a b'}
  double S = 0.0;                         // g^{a b'} Ric_{a b'}
  double discarded = 0.0;  // max |Pi| component outside the theta^g ^ theta^{s'} block
};

namespace detail {

// conjugate slot in the frame list {T, W_1..W_n, conj W_1..conj W_n}
template <int n>
int conj_slot(int v) {
  if (v == 0) return 0;
  return v <= n ? v + n : v - n;
}

}  // namespace detail

template <int n>
WebsterData<n> solve_webster(const PointStructure<n>& ps, double tol = 1e-8) {
  constexpr int D = 2 * n + 1;
  using J1 = Jet<D, 1>;
  using CJ1 = Cx<J1>;
  WebsterData<n> wd;

  // --- order-1 views of the solved structure -------------------------------
  std::array<CJ1, D> th1;
  for (int i = 0; i < D; ++i) th1[i] = CJ1(truncate<1>(ps.theta[i]));
  std::array<std::array<CJ1, D>, n> cof1, W1;
  for (int a = 0; a < n; ++a)
    for (int i = 0; i < D; ++i) {
      cof1[a][i] = truncate<1>(ps.cofr[a][i]);
      W1[a][i] = truncate<1>(ps.W[a][i]);
    }
  std::array<CJ1, D> T1;
  for (int i = 0; i < D; ++i) T1[i] = CJ1(truncate<1>(ps.T[i]));
  Mat<CJ1> g1(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) g1(a, b) = truncate<1>(ps.g(a, b));

  // frame list V_0 = T, V_{1..n} = W, V_{n+1..2n} = conj W
  std::array<std::array<CJ1, D>, D> V;
  V[0] = T1;
  for (int a = 0; a < n; ++a) {
    V[1 + a] = W1[a];
    for (int i = 0; i < D; ++i) V[1 + n + a][i] = conj(W1[a][i]);
  }

  // pairings of the coframe against the frame list
  std::array<CJ1, D> thV;
  std::array<std::array<CJ1, D>, n> cofV, cofbV;
  for (int v = 0; v < D; ++v) {
    thV[v] = form_on(th1, V[v]);
    for (int a = 0; a < n; ++a) {
      cofV[a][v] = form_on(cof1[a], V[v]);
      std::array<CJ1, D> cb;
      for (int i = 0; i < D; ++i) cb[i] = conj(cof1[a][i]);
      cofbV[a][v] = form_on(cb, V[v]);
    }
  }

  // d theta^a (order-1 2-form) and d g_{ab'} (order-1 1-form)
  std::array<std::array<std::array<CJ1, D>, D>, n> dcof;
  for (int a = 0; a < n; ++a)
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < D; ++j) dcof[a][i][j] = derive(ps.cofr[a][j], i) - derive(ps.cofr[a][i], j);
  std::array<std::array<std::array<CJ1, D>, n>, n> dg;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < D; ++i) dg[a][b][i] = derive(ps.g(a, b), i);

  // --- unknown layout: complex scalars, then realified ---------------------
  // order: p[a][b][m], q[a][b][m], r[a][b], A[a][b]
  constexpr int NP = n * n * n;
  constexpr int NC = 2 * NP + 2 * n * n;
  auto idx_p = [](int a, int b, int m) { return (a * n + b) * n + m; };
  auto idx_q = [](int a, int b, int m) { return NP + (a * n + b) * n + m; };
  auto idx_r = [](int a, int b) { return 2 * NP + a * n + b; };
  auto idx_A = [](int a, int b) { return 2 * NP + n * n + a * n + b; };

  struct CRow {
    std::array<CJ1, NC> cu{};  // coefficients of the unknowns
    std::array<CJ1, NC> cc{};  // coefficients of their conjugates
    CJ1 rhs{};
  };
  std::vector<CRow> rows;

  // coefficient triple of omega_a^b evaluated on frame vector v
  auto add_omega = [&](CRow& row, int a, int b, int v, const CJ1& w, bool conjugated) {
    auto& dst = conjugated ? row.cc : row.cu;
    CJ1 wc = w;
    for (int m = 0; m < n; ++m) {
      CJ1 pv = cofV[m][v], qv = cofbV[m][v];
      if (conjugated) {
        pv = conj(pv);
        qv = conj(qv);
      }
      dst[idx_p(a, b, m)] += wc * pv;
      dst[idx_q(a, b, m)] += wc * qv;
    }
    CJ1 tv = thV[v];
    if (conjugated) tv = conj(tv);
    dst[idx_r(a, b)] += wc * tv;
  };

  // E1: d theta^a (V,U) = sum_b [ theta^b(V) omega_b^a(U) - theta^b(U) omega_b^a(V) ]
  //     + sum_b A^a_b [ theta(V) theta^{b'}(U) - theta(U) theta^{b'}(V) ]
  for (int a = 0; a < n; ++a)
    for (int v = 0; v < D; ++v)
      for (int u = v + 1; u < D; ++u) {
        CRow row;
        row.rhs = two_form_on(dcof[a], V[v], V[u]);
        for (int b = 0; b < n; ++b) {
          add_omega(row, b, a, u, cofV[b][v], false);
          add_omega(row, b, a, v, -cofV[b][u], false);
          row.cu[idx_A(a, b)] += thV[v] * cofbV[b][u] - thV[u] * cofbV[b][v];
        }
        rows.push_back(std::move(row));
      }

  // E2: d g_{ab'}(V) = omega_{ab'}(V) + omega_{b'a}(V)
  //     omega_{ab'} = omega_a^g g_{gb'};  omega_{b'a}(V) = conj(omega_b^g(conj V)) g_{ag'}
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int v = 0; v < D; ++v) {
        CRow row;
        row.rhs = form_on(dg[a][b], V[v]);
        for (int gIdx = 0; gIdx < n; ++gIdx) {
          add_omega(row, a, gIdx, v, g1(gIdx, b), false);
          add_omega(row, b, gIdx, detail::conj_slot<n>(v), g1(a, gIdx), true);
        }
        rows.push_back(std::move(row));
      }

  // E3: torsion symmetry A_{ab} = A_{ba} with A_{ab} = g_{as'} conj(A^s_{b'})
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b) {
      CRow row;
      for (int s = 0; s < n; ++s) {
        row.cc[idx_A(s, b)] += g1(a, s);
        row.cc[idx_A(s, a)] -= g1(b, s);
      }
      rows.push_back(std::move(row));
    }

  // --- realify and solve ----------------------------------------------------
  const int NR = static_cast<int>(rows.size());
  Mat<J1> M(2 * NR, 2 * NC), b(2 * NR, 1);
  for (int j = 0; j < NR; ++j) {
    const CRow& row = rows[j];
    for (int k = 0; k < NC; ++k) {
      const CJ1 &cu = row.cu[k], &cc = row.cc[k];
      M(2 * j, 2 * k) = cu.re + cc.re;
      M(2 * j, 2 * k + 1) = cc.im - cu.im;
      M(2 * j + 1, 2 * k) = cu.im + cc.im;
      M(2 * j + 1, 2 * k + 1) = cu.re - cc.re;
    }
    b(2 * j, 0) = row.rhs.re;
    b(2 * j + 1, 0) = row.rhs.im;
  }
  double res = 0.0;
  Mat<J1> x = least_squares(M, b, &res);
  wd.connection_residual = res;
  if (res > 100.0 * tol)
    throw UnderdeterminedSystem("solve_webster: structure-equation residual " +
                                std::to_string(res));

  auto take = [&](int k) { return CJ1(x(2 * k, 0), x(2 * k + 1, 0)); };
  for (int a = 0; a < n; ++a)
    for (int bb = 0; bb < n; ++bb) {
      for (int m = 0; m < n; ++m) {
        wd.p[a][bb][m] = take(idx_p(a, bb, m));
        wd.q[a][bb][m] = take(idx_q(a, bb, m));
      }
      wd.r[a][bb] = take(idx_r(a, bb));
      wd.A[a][bb] = take(idx_A(a, bb));
    }

  // --- coordinate components of omega and the curvature --------------------
  for (int a = 0; a < n; ++a)
    for (int bb = 0; bb < n; ++bb)
      for (int i = 0; i < D; ++i) {
        CJ1 s = wd.r[a][bb] * th1[i];
        for (int m = 0; m < n; ++m)
          s += wd.p[a][bb][m] * cof1[m][i] + wd.q[a][bb][m] * conj(cof1[m][i]);
        wd.om[a][bb][i] = s;
      }

  // value-level frame vectors and omega
  std::array<std::array<C, D>, D> Vv;
  for (int v = 0; v < D; ++v)
    for (int i = 0; i < D; ++i) Vv[v][i] = value_of(V[v][i]);
  auto pair_val = [&](const std::array<std::array<C, D>, D>& B, int v, int u) {
    C s{};
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < D; ++j) s += Vv[v][i] * B[i][j] * Vv[u][j];
    return s;
  };

  Mat<C> gval(n, n);
  for (int a = 0; a < n; ++a)
    for (int bb = 0; bb < n; ++bb) gval(a, bb) = value_of(ps.g(a, bb));
  Mat<C> ginv = mat_inverse(gval);

  double disc = 0.0;
  for (int a = 0; a < n; ++a)
    for (int bb = 0; bb < n; ++bb) {
      std::array<std::array<C, D>, D> Pi{};
      for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) {
          C dom{wd.om[a][bb][j].re.d1(i) - wd.om[a][bb][i].re.d1(j),
                wd.om[a][bb][j].im.d1(i) - wd.om[a][bb][i].im.d1(j)};
          C ww{};
          for (int gIdx = 0; gIdx < n; ++gIdx)
            ww += value_of(wd.om[a][gIdx][i]) * value_of(wd.om[gIdx][bb][j]) -
                  value_of(wd.om[a][gIdx][j]) * value_of(wd.om[gIdx][bb][i]);
          Pi[i][j] = dom - ww;
        }
      // project: keep the (W_g, conj W_s) block, report everything else
      for (int gIdx = 0; gIdx < n; ++gIdx)
        for (int s = 0; s < n; ++s) wd.R[a][bb][gIdx][s] = pair_val(Pi, 1 + gIdx, 1 + n + s);
      for (int v = 1; v <= n; ++v) disc = std::max(disc, lead_abs(pair_val(Pi, 0, v)));
      for (int v = n + 1; v <= 2 * n; ++v) disc = std::max(disc, lead_abs(pair_val(Pi, 0, v)));
      for (int v = 1; v <= n; ++v)
        for (int u = v + 1; u <= n; ++u) disc = std::max(disc, lead_abs(pair_val(Pi, v, u)));
      for (int v = n + 1; v <= 2 * n; ++v)
        for (int u = v + 1; u <= 2 * n; ++u) disc = std::max(disc, lead_abs(pair_val(Pi, v, u)));
    }
  wd.discarded = disc;

  // Ric_{a b'} = R_g^g_{a b'}; S = g^{a b'} Ric_{a b'} with g^{a b'} = (G^{-1})[b][a]
  C Sc{};
  for (int a = 0; a < n; ++a)
    for (int bb = 0; bb < n; ++bb) {
      C s{};
      for (int gIdx = 0; gIdx < n; ++gIdx) s += wd.R[gIdx][gIdx][a][bb];
      wd.Ric[a][bb] = s;
      Sc += ginv(bb, a) * s;
    }
  wd.S = Sc.re;
  return wd;
}

// ============================================================================
// Covariant derivatives of a scalar field (through order 2) and sublaplacian
// ============================================================================

template <int n>
struct CovariantJet {
  C f0{};                                  // T f
  std::array<C, n> fa{}, fabar{}, fup{};   // f_a, f_{a'}, f^a = g^{ab'} f_{b'}
  std::array<std::array<C, n>, n> fab{};       // f_{ab}
  std::array<std::array<C, n>, n> fab_bar{};   // f_{a b'}
  std::array<std::array<C, n>, n> fbar_a{};    // f_{b' a}
  std::array<std::array<C, n>, n> fup_bar{};   // f^a_{b'} = g^{as'} f_{s' b'}
  double commutation_defect = 0.0;  // max |f_{ab'} - f_{b'a} - 2i g_{ab'} f0|
};

// Field jets are real; the covariant pieces come out complex.
template <int n>
CovariantJet<n> covariant_jet(const PointStructure<n>& ps, const WebsterData<n>& wd,
                              const Jet<2 * n + 1, 3>& f) {
  constexpr int D = 2 * n + 1;
  using J2 = Jet<D, 2>;
  using CJ2 = Cx<J2>;
  CovariantJet<n> cj;

  std::array<J2, D> df;
  for (int i = 0; i < D; ++i) df[i] = derive(f, i);

  // first covariant derivatives as order-2 jets
  std::array<CJ2, n> fa;
  for (int a = 0; a < n; ++a) {
    CJ2 s{};
    for (int i = 0; i < D; ++i) s += truncate<2>(ps.W[a][i]) * CJ2(df[i]);
    fa[a] = s;
    cj.fa[a] = value_of(s);
    cj.fabar[a] = conj(value_of(s));
  }
  {
    C s{};
    for (int i = 0; i < D; ++i) s += C(ps.T[i].val()) * C(df[i].val());
    cj.f0 = s;
  }

  Mat<C> gval(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) gval(a, b) = value_of(ps.g(a, b));
  Mat<C> ginv = mat_inverse(gval);
  // f^a = g^{ab'} f_{b'} with g^{ab'} = (G^{-1})[b][a]
  for (int a = 0; a < n; ++a) {
    C s{};
    for (int b = 0; b < n; ++b) s += ginv(b, a) * cj.fabar[b];
    cj.fup[a] = s;
  }

  // directional derivative of an order-2 complex jet along a frame vector
  auto dir = [&](const CJ2& h, int slot) {  // slot: 1..n = W, n+1..2n = conj W
    C s{};
    for (int i = 0; i < D; ++i) {
      C wi = value_of(slot <= n ? ps.W[slot - 1][i] : conj(ps.W[slot - 1 - n][i]));
      s += wi * C(h.re.d1(i), h.im.d1(i));
    }
    return s;
  };

  double defect = 0.0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      // f_{ab}  = W_b(f_a)       - omega_a^g(W_b) f_g
      // f_{ab'} = conj(W_b)(f_a) - omega_a^g(conj W_b) f_g
      // f_{b'a} = W_a(conj f_b)  - conj(omega_b^g(conj W_a)) conj(f_g)
      C s1 = dir(fa[a], 1 + b), s2 = dir(fa[a], 1 + n + b);
      C s3 = dir(conj(fa[b]), 1 + a);
      for (int gIdx = 0; gIdx < n; ++gIdx) {
        s1 -= value_of(wd.p[a][gIdx][b]) * cj.fa[gIdx];
        s2 -= value_of(wd.q[a][gIdx][b]) * cj.fa[gIdx];
        s3 -= conj(value_of(wd.q[b][gIdx][a])) * conj(cj.fa[gIdx]);
      }
      cj.fab[a][b] = s1;
      cj.fab_bar[a][b] = s2;
      cj.fbar_a[b][a] = s3;  // stored as [b-bar index][a index]
      C want = C(0.0, 2.0) * gval(a, b) * cj.f0;
      defect = std::max(defect, lead_abs(cj.fab_bar[a][b] - cj.fbar_a[b][a] - want));
    }
  cj.commutation_defect = defect;

  // f^a_{b'} = g^{as'} f_{s' b'}; for a real field f_{s' b'} = conj(f_{s b})
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      C s{};
      for (int ss = 0; ss < n; ++ss) s += ginv(ss, a) * conj(cj.fab[ss][b]);
      cj.fup_bar[a][b] = s;
    }
  return cj;
}

// Delta f = -(f_a^a + f_{a'}^{a'}) evaluated for a real field
template <int n>
double sublaplacian_value(const PointStructure<n>& ps, const WebsterData<n>& wd,
                          const Jet<2 * n + 1, 3>& f) {
  CovariantJet<n> cj = covariant_jet(ps, wd, f);
  Mat<C> gval(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) gval(a, b) = value_of(ps.g(a, b));
  Mat<C> ginv = mat_inverse(gval);
  C tr{};
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) tr += ginv(b, a) * cj.fab_bar[a][b];
  return -2.0 * tr.re;  // the conjugate trace doubles the real part for real f
}

// ============================================================================
// Unitary-frame tensor norms
// ============================================================================

struct TensorNorms {
  double A = 0, Ric = 0, R = 0;
};

template <int n>
TensorNorms tensor_norms(const PointStructure<n>& ps, const WebsterData<n>& wd) {
  Mat<C> gval(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) gval(a, b) = value_of(ps.g(a, b));
  Mat<C> E = unitarize_frame(gval);       // E g E^H = I
  Mat<C> Einv = mat_inverse(E);

  TensorNorms out;
  double s2 = 0.0;
  // A^a_{b'}: upper holomorphic, lower antiholomorphic
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      C t{};
      for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q) t += Einv(p, a) * conj(E(b, q)) * value_of(wd.A[p][q]);
      s2 += norm2(t);
    }
  out.A = std::sqrt(s2);

  s2 = 0.0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      C t{};
      for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q) t += E(a, p) * conj(E(b, q)) * wd.Ric[p][q];
      s2 += norm2(t);
    }
  out.Ric = std::sqrt(s2);

  s2 = 0.0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c)
        for (int d = 0; d < n; ++d) {
          C t{};
          for (int p = 0; p < n; ++p)
            for (int q = 0; q < n; ++q)
              for (int rr = 0; rr < n; ++rr)
                for (int ss = 0; ss < n; ++ss)
                  t += E(a, p) * Einv(q, b) * E(c, rr) * conj(E(d, ss)) * wd.R[p][q][rr][ss];
          s2 += norm2(t);
        }
  out.R = std::sqrt(s2);
  return out;
}

// ============================================================================
// One-call invariants bundle
// ============================================================================

struct Invariants {
  double S = 0, A_norm = 0, Ric_norm = 0, R_norm = 0;
  double reeb_residual = 0, coframe_residual = 0, connection_residual = 0, discarded = 0;
  double commutation_defect = 0;  // of a probe quadratic field, diagnostic only
};

template <int n>
Invariants compute_invariants(const ManifoldBase<n>& m, int chart,
                              const typename ManifoldBase<n>::Pt& x) {
  auto ps = solve_structure(m.structure(chart, x));
  auto wd = solve_webster(ps);
  auto tn = tensor_norms(ps, wd);
  Invariants iv;
  iv.S = wd.S;
  iv.A_norm = tn.A;
  iv.Ric_norm = tn.Ric;
  iv.R_norm = tn.R;
  iv.reeb_residual = ps.reeb_residual;
  iv.coframe_residual = ps.coframe_residual;
  iv.connection_residual = wd.connection_residual;
  iv.discarded = wd.discarded;
  return iv;
}

}  // namespace crgeo
