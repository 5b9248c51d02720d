/// @file linalg.hpp
/// @brief Small dense matrices over generic scalars (double, Jet, or complex
///        wrappers of either) with LU and normal-equation least squares.
///
/// Pivoting and singularity checks inspect only the VALUE part of a scalar,
/// so a jet-valued system is treated as solvable exactly when its value-part
/// matrix is.
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "crgeo/jets.hpp"

namespace crgeo {

struct UnderdeterminedSystem : std::runtime_error {
  explicit UnderdeterminedSystem(const std::string& what) : std::runtime_error(what) {}
};

struct StencilOutOfDomain : std::runtime_error {
  explicit StencilOutOfDomain(const std::string& what) : std::runtime_error(what) {}
};

struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

// conjugation that is a no-op on real scalars, so adjoints work generically
inline double conj_s(double x) { return x; }
template <int D, int K>
Jet<D, K> conj_s(const Jet<D, K>& x) {
  return x;
}
template <class T>
Cx<T> conj_s(const Cx<T>& x) {
  return conj(x);
}

template <class T>
Cx<T> scalar_inv(const Cx<T>& x) {
  T s = scalar_inv(norm2(x));
  return {x.re * s, (-x.im) * s};
}

inline void set_one(double& x) { x = 1.0; }
template <int D, int K>
void set_one(Jet<D, K>& x) {
  x = Jet<D, K>(1.0);
}
template <class T>
void set_one(Cx<T>& x) {
  set_one(x.re);
  x.im = T{};
}

template <class S>
struct Mat {
  int r = 0, c = 0;
  std::vector<S> a;

  Mat() = default;
  Mat(int rows, int cols) : r(rows), c(cols), a(static_cast<size_t>(rows) * cols) {}

  S& operator()(int i, int j) { return a[static_cast<size_t>(i) * c + j]; }
  const S& operator()(int i, int j) const { return a[static_cast<size_t>(i) * c + j]; }

  static Mat identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) set_one(m(i, i));
    return m;
  }
};

template <class S>
Mat<S> mat_mul(const Mat<S>& A, const Mat<S>& B) {
  Mat<S> R(A.r, B.c);
  for (int i = 0; i < A.r; ++i)
    for (int k = 0; k < A.c; ++k) {
      const S& aik = A(i, k);
      for (int j = 0; j < B.c; ++j) R(i, j) += aik * B(k, j);
    }
  return R;
}

template <class S>
Mat<S> mat_adjoint(const Mat<S>& A) {
  Mat<S> R(A.c, A.r);
  for (int i = 0; i < A.r; ++i)
    for (int j = 0; j < A.c; ++j) R(j, i) = conj_s(A(i, j));
  return R;
}

// Solve A X = B by Gaussian elimination with partial pivoting on the value
// part. A must be square; throws UnderdeterminedSystem on (near-)singularity.
template <class S>
Mat<S> lu_solve(Mat<S> A, Mat<S> B, double sing_tol = 1e-12) {
  const int n = A.r;
  if (A.c != n || B.r != n) throw std::invalid_argument("lu_solve: shape mismatch");
  double scale = 0.0;
  for (const S& s : A.a) scale = std::max(scale, lead_abs(s));
  if (scale == 0.0) throw UnderdeterminedSystem("lu_solve: zero matrix");
  for (int k = 0; k < n; ++k) {
    int piv = k;
    double best = lead_abs(A(k, k));
    for (int i = k + 1; i < n; ++i) {
      double m = lead_abs(A(i, k));
      if (m > best) {
        best = m;
        piv = i;
      }
    }
    if (best < sing_tol * scale)
      throw UnderdeterminedSystem("lu_solve: pivot " + std::to_string(k) + " below tolerance");
    if (piv != k) {
      for (int j = 0; j < n; ++j) std::swap(A(k, j), A(piv, j));
      for (int j = 0; j < B.c; ++j) std::swap(B(k, j), B(piv, j));
    }
    S d = scalar_inv(A(k, k));
    for (int i = k + 1; i < n; ++i) {
      S f = A(i, k) * d;
      for (int j = k; j < n; ++j) A(i, j) = A(i, j) - f * A(k, j);
      for (int j = 0; j < B.c; ++j) B(i, j) = B(i, j) - f * B(k, j);
    }
  }
  Mat<S> X(n, B.c);
  for (int i = n - 1; i >= 0; --i) {
    S d = scalar_inv(A(i, i));
    for (int j = 0; j < B.c; ++j) {
      S s = B(i, j);
      for (int k = i + 1; k < n; ++k) s = s - A(i, k) * X(k, j);
      X(i, j) = s * d;
    }
  }
  return X;
}

template <class S>
Mat<S> mat_inverse(const Mat<S>& A) {
  return lu_solve(A, Mat<S>::identity(A.r));
}

// Least squares min |A x - b| via normal equations; fine for the small
// well-conditioned systems solved here. Returns x; *residual (if given)
// receives the max value-part magnitude of A x - b.
template <class S>
Mat<S> least_squares(const Mat<S>& A, const Mat<S>& B, double* residual = nullptr,
                     double sing_tol = 1e-12) {
  Mat<S> Ah = mat_adjoint(A);
  Mat<S> X = lu_solve(mat_mul(Ah, A), mat_mul(Ah, B), sing_tol);
  if (residual) {
    Mat<S> R = mat_mul(A, X);
    double m = 0.0;
    for (size_t i = 0; i < R.a.size(); ++i) m = std::max(m, lead_abs(R.a[i] - B.a[i]));
    *residual = m;
  }
  return X;
}

// Cholesky with diagonal pivoting for a hermitian positive definite matrix of
// plain complex scalars: returns (L, perm) with G[perm[i]][perm[j]] = (L L^H)_{ij}.
inline void pivoted_cholesky(const Mat<C>& G, Mat<C>& L, std::vector<int>& perm) {
  const int n = G.r;
  perm.resize(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  L = Mat<C>(n, n);
  std::vector<double> d(n);  // residual diagonal, indexed by permuted position
  for (int i = 0; i < n; ++i) d[i] = G(i, i).re;
  for (int k = 0; k < n; ++k) {
    int piv = k;
    for (int i = k + 1; i < n; ++i)
      if (d[i] > d[piv]) piv = i;
    if (piv != k) {
      std::swap(perm[k], perm[piv]);
      std::swap(d[k], d[piv]);
      for (int j = 0; j < n; ++j) std::swap(L(k, j), L(piv, j));
    }
    if (d[k] <= 0.0) throw UnderdeterminedSystem("pivoted_cholesky: not positive definite");
    double lkk = std::sqrt(d[k]);
    L(k, k) = C(lkk, 0.0);
    for (int i = k + 1; i < n; ++i) {
      C s = G(perm[i], perm[k]);
      for (int j = 0; j < k; ++j) s -= L(i, j) * conj(L(k, j));
      L(i, k) = s * (1.0 / lkk);
      d[i] -= norm2(L(i, k));
    }
  }
}

// E with E G E^H = I for hermitian positive definite G (unitarizing change of
// frame): E = L^{-1} P^T with the pivoted Cholesky factor above.
inline Mat<C> unitarize_frame(const Mat<C>& G) {
  const int n = G.r;
  Mat<C> L;
  std::vector<int> perm;
  pivoted_cholesky(G, L, perm);
  Mat<C> Linv = lu_solve(L, Mat<C>::identity(n));
  Mat<C> E(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) E(i, perm[j]) = Linv(i, j);
  return E;
}

}  // namespace crgeo
