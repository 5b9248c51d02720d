/// @file jets.hpp
/// @brief Dense truncated Taylor jets in D variables up to total order K,
///        plus a complex wrapper usable over jet or plain-double scalars.
///
/// A Jet<D,K> stores Taylor COEFFICIENTS f_a/a! indexed by multi-indices
/// |a| <= K in graded-lexicographic order, so the enumeration for order K-1
/// is a prefix of the one for order K and truncation is a prefix copy.
#pragma once

#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <vector>

namespace crgeo {

constexpr int binom_ct(int n, int k) {
  if (k < 0 || k > n) return 0;
  long r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return static_cast<int>(r);
}

constexpr int pow_ct(int b, int e) {
  int r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

// ============================================================================
// Index tables shared by all jets of a given (D, K)
// ============================================================================

template <int D, int K>
class JetTable {
 public:
  static constexpr int N = binom_ct(D + K, D);
  static constexpr int RADIX = K + 2;
  static constexpr int LOOKUP = pow_ct(RADIX, D);

  std::array<std::array<int, D>, N> exps{};
  std::array<int, LOOKUP> lookup{};          // exponent tuple -> index, -1 if absent
  std::array<std::array<int, D>, N> up{};    // index of a + e_i, -1 if |a|+1 > K
  std::vector<std::array<int, 3>> mul;       // (dst, i, j): c[dst] += a[i]*b[j]

  static const JetTable& instance() {
    static const JetTable t;
    return t;
  }

  static int key(const std::array<int, D>& a) {
    int k = 0;
    for (int i = D - 1; i >= 0; --i) k = k * RADIX + a[i];
    return k;
  }

 private:
  JetTable() {
    lookup.fill(-1);
    int idx = 0;
    for (int deg = 0; deg <= K; ++deg) {
      std::array<int, D> a{};
      enumerate(a, 0, deg, idx);
    }
    assert(idx == N);
    for (int i = 0; i < N; ++i) lookup[key(exps[i])] = i;
    for (int i = 0; i < N; ++i)
      for (int d = 0; d < D; ++d) {
        std::array<int, D> a = exps[i];
        a[d] += 1;
        int s = 0;
        for (int q = 0; q < D; ++q) s += a[q];
        up[i][d] = (s <= K) ? lookup[key(a)] : -1;
      }
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        std::array<int, D> g{};
        int s = 0;
        for (int q = 0; q < D; ++q) {
          g[q] = exps[i][q] + exps[j][q];
          s += g[q];
        }
        if (s <= K) mul.push_back({lookup[key(g)], i, j});
      }
  }

  void enumerate(std::array<int, D>& a, int pos, int rem, int& idx) {
    if (pos == D - 1) {
      a[pos] = rem;
      exps[idx++] = a;
      return;
    }
    for (int v = rem; v >= 0; --v) {
      a[pos] = v;
      enumerate(a, pos + 1, rem - v, idx);
    }
    a[pos] = 0;
  }
};

// ============================================================================
// Jet<D, K>
// ============================================================================

template <int D, int K>
struct Jet {
  using Table = JetTable<D, K>;
  static constexpr int N = Table::N;
  static constexpr int dim = D;
  static constexpr int order = K;

  std::array<double, N> c{};

  Jet() = default;
  explicit Jet(double v) { c[0] = v; }

  static Jet constant(double v) { return Jet(v); }

  // the coordinate function x_d expanded at base value v
  static Jet coordinate(int d, double v) {
    Jet j(v);
    if constexpr (K >= 1) j.c[1 + d] = 1.0;  // degree-1 block follows the constant
    return j;
  }

  double val() const { return c[0]; }

  // first-derivative coefficient (equals d f / d x_d at the base point)
  double d1(int d) const {
    static_assert(K >= 1);
    return c[1 + d];
  }

  Jet& operator+=(const Jet& o) {
    for (int i = 0; i < N; ++i) c[i] += o.c[i];
    return *this;
  }
  Jet& operator-=(const Jet& o) {
    for (int i = 0; i < N; ++i) c[i] -= o.c[i];
    return *this;
  }
  Jet& operator*=(double s) {
    for (int i = 0; i < N; ++i) c[i] *= s;
    return *this;
  }
  friend Jet operator+(Jet a, const Jet& b) { return a += b; }
  friend Jet operator-(Jet a, const Jet& b) { return a -= b; }
  friend Jet operator-(const Jet& a) {
    Jet r;
    for (int i = 0; i < N; ++i) r.c[i] = -a.c[i];
    return r;
  }
  friend Jet operator*(Jet a, double s) { return a *= s; }
  friend Jet operator*(double s, Jet a) { return a *= s; }
  friend Jet operator+(Jet a, double s) {
    a.c[0] += s;
    return a;
  }
  friend Jet operator+(double s, Jet a) {
    a.c[0] += s;
    return a;
  }
  friend Jet operator-(Jet a, double s) {
    a.c[0] -= s;
    return a;
  }
  friend Jet operator-(double s, const Jet& a) {
    Jet r = -a;
    r.c[0] += s;
    return r;
  }

  friend Jet operator*(const Jet& a, const Jet& b) {
    Jet r;
    for (const auto& m : Table::instance().mul) r.c[m[0]] += a.c[m[1]] * b.c[m[2]];
    return r;
  }
};

// Truncate to a lower order (prefix copy; enumeration orders are nested).
template <int Kout, int D, int K>
Jet<D, Kout> truncate(const Jet<D, K>& f) {
  static_assert(Kout <= K);
  Jet<D, Kout> r;
  for (int i = 0; i < Jet<D, Kout>::N; ++i) r.c[i] = f.c[i];
  return r;
}

// Partial derivative d/dx_d, dropping one order.
template <int D, int K>
Jet<D, K - 1> derive(const Jet<D, K>& f, int d) {
  static_assert(K >= 1);
  Jet<D, K - 1> r;
  const auto& tab = JetTable<D, K>::instance();
  for (int b = 0; b < Jet<D, K - 1>::N; ++b) {
    int u = tab.up[b][d];
    r.c[b] = (tab.exps[b][d] + 1) * f.c[u];
  }
  return r;
}

// Composition with a univariate function given by derivatives f^(k)(u0), k=0..K.
template <int D, int K>
Jet<D, K> compose1(const Jet<D, K>& u, const std::array<double, K + 1>& df) {
  Jet<D, K> h = u;
  h.c[0] = 0.0;
  double fact = 1.0;
  std::array<double, K + 1> coef{};
  for (int k = 0; k <= K; ++k) {
    if (k > 0) fact *= k;
    coef[k] = df[k] / fact;
  }
  Jet<D, K> r(coef[K]);
  for (int k = K - 1; k >= 0; --k) r = r * h + coef[k];
  return r;
}

template <int D, int K>
Jet<D, K> exp(const Jet<D, K>& u) {
  double e = std::exp(u.val());
  std::array<double, K + 1> df;
  df.fill(e);
  return compose1(u, df);
}

template <int D, int K>
Jet<D, K> log(const Jet<D, K>& u) {
  double v = u.val();
  assert(v > 0);
  std::array<double, K + 1> df{};
  df[0] = std::log(v);
  double p = 1.0 / v, sgn = 1.0, fact = 1.0;
  for (int k = 1; k <= K; ++k) {
    df[k] = sgn * fact * p;
    p /= v;
    sgn = -sgn;
    fact *= k;
  }
  return compose1(u, df);
}

template <int D, int K>
Jet<D, K> pow(const Jet<D, K>& u, double a) {
  double v = u.val();
  assert(v > 0);
  std::array<double, K + 1> df{};
  double f = std::pow(v, a), m = a;
  df[0] = f;
  for (int k = 1; k <= K; ++k) {
    f = f / v * m;
    df[k] = f;
    m -= 1.0;
  }
  return compose1(u, df);
}

template <int D, int K>
Jet<D, K> sqrt(const Jet<D, K>& u) {
  return pow(u, 0.5);
}

template <int D, int K>
Jet<D, K> inv(const Jet<D, K>& u) {
  double v = u.val();
  assert(v != 0);
  std::array<double, K + 1> df{};
  double p = 1.0 / v, sgn = 1.0, fact = 1.0;
  for (int k = 0; k <= K; ++k) {
    df[k] = sgn * fact * p;
    p /= v;
    sgn = -sgn;
    fact *= (k + 1);
  }
  return compose1(u, df);
}

template <int D, int K>
Jet<D, K> sin(const Jet<D, K>& u) {
  double s = std::sin(u.val()), co = std::cos(u.val());
  std::array<double, K + 1> df{};
  const double cyc[4] = {s, co, -s, -co};
  for (int k = 0; k <= K; ++k) df[k] = cyc[k % 4];
  return compose1(u, df);
}

template <int D, int K>
Jet<D, K> cos(const Jet<D, K>& u) {
  double s = std::sin(u.val()), co = std::cos(u.val());
  std::array<double, K + 1> df{};
  const double cyc[4] = {co, -s, -co, s};
  for (int k = 0; k <= K; ++k) df[k] = cyc[k % 4];
  return compose1(u, df);
}

template <int D, int K>
Jet<D, K> operator/(const Jet<D, K>& a, const Jet<D, K>& b) {
  return a * inv(b);
}
template <int D, int K>
Jet<D, K> operator/(const Jet<D, K>& a, double s) {
  return a * (1.0 / s);
}
template <int D, int K>
Jet<D, K> operator/(double s, const Jet<D, K>& b) {
  return inv(b) * s;
}

// ============================================================================
// Scalar helpers shared by double and Jet (generic numeric code below uses
// these instead of member calls so that plain doubles work unchanged)
// ============================================================================

inline double value_of(double x) { return x; }
template <int D, int K>
double value_of(const Jet<D, K>& x) {
  return x.val();
}

inline double scalar_inv(double x) { return 1.0 / x; }
template <int D, int K>
Jet<D, K> scalar_inv(const Jet<D, K>& x) {
  return inv(x);
}

inline double scalar_sqrt(double x) { return std::sqrt(x); }
template <int D, int K>
Jet<D, K> scalar_sqrt(const Jet<D, K>& x) {
  return sqrt(x);
}

// ============================================================================
// Complex wrapper over a real scalar type (double or Jet)
// ============================================================================

template <class T>
struct Cx {
  T re{}, im{};

  Cx() = default;
  Cx(const T& r) : re(r) {}
  Cx(const T& r, const T& i) : re(r), im(i) {}

  friend Cx operator+(const Cx& a, const Cx& b) { return {a.re + b.re, a.im + b.im}; }
  friend Cx operator-(const Cx& a, const Cx& b) { return {a.re - b.re, a.im - b.im}; }
  friend Cx operator-(const Cx& a) { return {-a.re, -a.im}; }
  friend Cx operator*(const Cx& a, const Cx& b) {
    return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
  }
  friend Cx operator*(const Cx& a, double s) { return {a.re * s, a.im * s}; }
  friend Cx operator*(double s, const Cx& a) { return {a.re * s, a.im * s}; }
  Cx& operator+=(const Cx& o) {
    re += o.re;
    im += o.im;
    return *this;
  }
  Cx& operator-=(const Cx& o) {
    re -= o.re;
    im -= o.im;
    return *this;
  }
  Cx& operator*=(const Cx& o) { return *this = *this * o; }

  friend Cx conj(const Cx& a) { return {a.re, -a.im}; }
  friend T norm2(const Cx& a) { return a.re * a.re + a.im * a.im; }

  friend Cx operator/(const Cx& a, const Cx& b) {
    T s = scalar_inv(norm2(b));
    Cx num = a * conj(b);
    return {num.re * s, num.im * s};
  }
};

template <class T>
Cx<T> cx_i(const T& scale) {
  return Cx<T>(T{}, scale);
}

// complex magnitude of the VALUE part (pivoting, diagnostics)
inline double lead_abs(double x) { return std::fabs(x); }
template <int D, int K>
double lead_abs(const Jet<D, K>& x) {
  return std::fabs(x.val());
}
template <class T>
double lead_abs(const Cx<T>& x) {
  return std::hypot(lead_abs(x.re), lead_abs(x.im));
}

inline Cx<double> value_of(const Cx<double>& x) { return x; }
template <int D, int K>
Cx<double> value_of(const Cx<Jet<D, K>>& x) {
  return {x.re.val(), x.im.val()};
}

template <int Kout, int D, int K>
Cx<Jet<D, Kout>> truncate(const Cx<Jet<D, K>>& f) {
  return {truncate<Kout>(f.re), truncate<Kout>(f.im)};
}

template <int D, int K>
Cx<Jet<D, K - 1>> derive(const Cx<Jet<D, K>>& f, int d) {
  return {derive(f.re, d), derive(f.im, d)};
}

using C = Cx<double>;

}  // namespace crgeo
