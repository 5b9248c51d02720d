/// @file conformal.hpp
/// @brief Pseudoconformal change of contact form theta -> e^{2f} theta with
///        the admissible frame carried along as W -> e^{-f} W, the predicted
///        transformation of torsion, curvature, and scalar curvature, CR-map
///        conformal factors, and the adapted Riemannian metric.
#pragma once

#include "crgeo/webster.hpp"

namespace crgeo {

// ============================================================================
// Rescaled structure
// ============================================================================

// theta~ = e^{2f} theta, W~ = e^{-f} W. The Levi form in the carried frame is
// unchanged: g~_{ab'} = g_{ab'}.
template <int n>
class RescaledManifold : public ManifoldBase<n> {
 public:
  static constexpr int D = 2 * n + 1;
  using Pt = typename ManifoldBase<n>::Pt;
  using J3 = Jet<D, 3>;

  RescaledManifold(const ManifoldBase<n>& base, const FieldBase<n>& f)
      : base_(base), f_(f) {}

  std::string name() const override { return base_.name() + "/rescaled"; }
  int chart_count() const override { return base_.chart_count(); }
  bool in_domain(int chart, const Pt& x) const override { return base_.in_domain(chart, x); }
  Pt transition(int from, int to, const Pt& x) const override {
    return base_.transition(from, to, x);
  }

  StructureJets<n> structure(int chart, const Pt& x) const override {
    StructureJets<n> s = base_.structure(chart, x);
    J3 fj = f_.eval(chart, x);
    J3 e2f = exp(fj * 2.0);
    J3 emf = exp(-fj);
    for (int i = 0; i < D; ++i) s.theta[i] = e2f * s.theta[i];
    for (int a = 0; a < n; ++a)
      for (int i = 0; i < D; ++i)
        s.W[a][i] = Cx<J3>(s.W[a][i].re * emf, s.W[a][i].im * emf);
    return s;
  }

 private:
  const ManifoldBase<n>& base_;
  const FieldBase<n>& f_;
};

// ============================================================================
// Predicted transformed invariants, from base-structure data only
// ============================================================================

template <int n>
struct PredictedWebster {
  std::array<std::array<std::array<std::array<C, n>, n>, n>, n> R{};
  std::array<std::array<C, n>, n> A{};
  double S = 0.0;
  double contraction_defect = 0.0;  // |g^{gs'} R_a^a_{gs'} - S| of the predictions
};

template <int n>
PredictedWebster<n> predicted_webster(const PointStructure<n>& ps, const WebsterData<n>& wd,
                                      const Jet<2 * n + 1, 3>& f) {
  PredictedWebster<n> out;
  CovariantJet<n> cov = covariant_jet(ps, wd, f);

  Mat<C> gv(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) gv(a, b) = value_of(ps.g(a, b));
  Mat<C> ginv = mat_inverse(gv);

  const double em2f = std::exp(-2.0 * f.val());

  C grad2c{};
  for (int l = 0; l < n; ++l) grad2c += cov.fup[l] * cov.fa[l];
  const double grad2 = grad2c.re;  // f^l f_l is real

  C trc{};
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) trc += ginv(b, a) * cov.fab_bar[a][b];
  const double lap = -2.0 * trc.re;

  out.S = em2f * (wd.S + 2.0 * (n + 1) * lap - 4.0 * n * (n + 1) * grad2);

  // A~^a_{b'} = e^{-2f} ( A^a_{b'} - i f^a_{b'} + 2 i f^a f_{b'} )
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      out.A[a][b] = em2f * (value_of(wd.A[a][b]) - C(0.0, 1.0) * cov.fup_bar[a][b] +
                            C(0.0, 2.0) * cov.fup[a] * cov.fabar[b]);

  // raised hessians: up1[b][g] = f^b_g = g^{bs'} f_{s'g},
  //                  up2[a][b] = f_a^b = g^{bs'} f_{as'}
  std::array<std::array<C, n>, n> up1{}, up2{};
  for (int b = 0; b < n; ++b)
    for (int gIdx = 0; gIdx < n; ++gIdx) {
      C s1{}, s2{};
      for (int ss = 0; ss < n; ++ss) {
        s1 += ginv(ss, b) * cov.fbar_a[ss][gIdx];
        s2 += ginv(ss, b) * cov.fab_bar[gIdx][ss];
      }
      up1[b][gIdx] = s1;
      up2[gIdx][b] = s2;
    }

  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int gIdx = 0; gIdx < n; ++gIdx)
        for (int s = 0; s < n; ++s) {
          C v = wd.R[a][b][gIdx][s];
          if (a == b) v -= cov.fab_bar[gIdx][s] + cov.fbar_a[s][gIdx];
          v -= 2.0 * gv(a, s) * up1[b][gIdx];
          if (b == gIdx) v -= 2.0 * cov.fab_bar[a][s];
          v -= (up1[b][a] + up2[a][b]) * gv(gIdx, s);
          C dd{};
          if (a == b) dd += gv(gIdx, s);
          if (b == gIdx) dd += gv(a, s);
          v -= 4.0 * grad2 * dd;
          out.R[a][b][gIdx][s] = em2f * v;
        }

  // internal consistency: contracting the predicted curvature with the
  // unchanged Levi form must reproduce the predicted scalar curvature
  C Sc{};
  for (int gIdx = 0; gIdx < n; ++gIdx)
    for (int s = 0; s < n; ++s) {
      C t{};
      for (int a = 0; a < n; ++a) t += out.R[a][a][gIdx][s];
      Sc += ginv(s, gIdx) * t;
    }
  out.contraction_defect = lead_abs(Sc - C(out.S));
  return out;
}

// ============================================================================
// CR-map conformal factor
// ============================================================================

struct CRMapCheck {
  double lambda = 0.0;           // F* theta_N = lambda theta_M at the point
  double factor_residual = 0.0;  // max |(F* theta_N)_i - lambda (theta_M)_i|
  double cr_residual = 0.0;      // relative anti-holomorphic + theta leakage of dF(W_a)
};

template <int n>
CRMapCheck check_cr_map(const MapBase<n>& F, const ManifoldBase<n>& Mfrom,
                        const ManifoldBase<n>& Mto, int chart,
                        const typename ManifoldBase<n>::Pt& x) {
  constexpr int D = 2 * n + 1;
  auto img = F.eval(chart, x);
  auto psF = solve_structure(Mfrom.structure(chart, x));
  auto psT = solve_structure(Mto.structure(img.chart, img.point()));

  double dF[D][D];  // dF[j][i] = d F^j / d x^i
  for (int j = 0; j < D; ++j)
    for (int i = 0; i < D; ++i) dF[j][i] = img.comp[j].d1(i);

  CRMapCheck out;
  std::array<double, D> pull;
  for (int i = 0; i < D; ++i) {
    double s = 0.0;
    for (int j = 0; j < D; ++j) s += psT.theta[j].val() * dF[j][i];
    pull[i] = s;
  }
  double lam = 0.0;
  for (int i = 0; i < D; ++i) lam += pull[i] * psF.T[i].val();
  out.lambda = lam;
  for (int i = 0; i < D; ++i)
    out.factor_residual =
        std::max(out.factor_residual, std::fabs(pull[i] - lam * psF.theta[i].val()));

  double leak2 = 0.0, tot2 = 0.0;
  for (int a = 0; a < n; ++a) {
    std::array<C, D> v{};
    for (int j = 0; j < D; ++j) {
      C s{};
      for (int i = 0; i < D; ++i) s += value_of(psF.W[a][i]) * dF[j][i];
      v[j] = s;
    }
    C c0{};
    for (int j = 0; j < D; ++j) c0 += C(psT.theta[j].val()) * v[j];
    leak2 += norm2(c0);
    tot2 += norm2(c0);
    for (int b = 0; b < n; ++b) {
      C ch{}, cab{};
      for (int j = 0; j < D; ++j) {
        C w = value_of(psT.cofr[b][j]);
        ch += w * v[j];
        cab += conj(w) * v[j];
      }
      leak2 += norm2(cab);
      tot2 += norm2(ch) + norm2(cab);
    }
  }
  out.cr_residual = std::sqrt(leak2 / tot2);
  return out;
}

// ============================================================================
// Adapted Riemannian metric g^ = theta x theta + dtheta(. , J .)
// ============================================================================

template <int n>
Mat<double> adapted_metric(const PointStructure<n>& ps) {
  constexpr int D = 2 * n + 1;
  std::array<double, D> th;
  for (int i = 0; i < D; ++i) th[i] = ps.theta[i].val();
  double dthv[D][D];
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j) dthv[i][j] = ps.dth[i][j].val();

  auto Jm = j_matrix(ps);  // column j = components of J e_j

  Mat<double> gh(D, D);
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j) {
      double s = th[i] * th[j];
      for (int k = 0; k < D; ++k) s += dthv[i][k] * Jm(k, j).val();
      gh(i, j) = s;
    }
  return gh;
}

}  // namespace crgeo
