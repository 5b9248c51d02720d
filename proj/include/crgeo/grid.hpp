/// @file grid.hpp
/// @brief Finite-difference grids and assembled CR Laplacians on the model
///        manifolds: the twisted periodic lattice of the nilmanifold quotient
///        and the two-chart blended solver on the sphere.
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "crgeo/core_geometry.hpp"
#include "crgeo/models.hpp"

namespace crgeo {

// a grid or chart box cannot host a requested derivative or interpolation
// stencil; thrown during assembly, never during operator application
struct StencilNotAssembled : std::runtime_error {
  explicit StencilNotAssembled(const std::string& w) : std::runtime_error(w) {}
};

// ============================================================================
// Centered difference rules.
//
// kD1/kD2 are the 8th-order first/second derivative weights, kD3 the 6th-order
// third derivative; the *_4 variants are short (reach-2) rules used where a
// full window is not available.  Antisymmetric rules store the coefficient of
// (f(+m) - f(-m)), symmetric ones of (f(+m) + f(-m)).
// ============================================================================

namespace stencil {

inline constexpr double kD1[4] = {4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0};
inline constexpr double kD2c = -205.0 / 72.0;
inline constexpr double kD2[4] = {8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0};
inline constexpr double kD3[4] = {-61.0 / 30.0, 169.0 / 120.0, -3.0 / 10.0, 7.0 / 240.0};

inline constexpr double kD1_4[2] = {2.0 / 3.0, -1.0 / 12.0};
inline constexpr double kD2c_4 = -5.0 / 2.0;
inline constexpr double kD2_4[2] = {4.0 / 3.0, -1.0 / 12.0};

// one-dimensional derivative of order `ord` from a row fetched by offset
template <class F>
double row_deriv(F&& f, int ord, double h, bool reduced) {
  switch (ord) {
    case 0:
      return f(0);
    case 1: {
      double acc = 0.0;
      if (reduced)
        for (int m = 1; m <= 2; ++m) acc += kD1_4[m - 1] * (f(m) - f(-m));
      else
        for (int m = 1; m <= 4; ++m) acc += kD1[m - 1] * (f(m) - f(-m));
      return acc / h;
    }
    case 2: {
      double acc = (reduced ? kD2c_4 : kD2c) * f(0);
      if (reduced)
        for (int m = 1; m <= 2; ++m) acc += kD2_4[m - 1] * (f(m) + f(-m));
      else
        for (int m = 1; m <= 4; ++m) acc += kD2[m - 1] * (f(m) + f(-m));
      return acc / (h * h);
    }
    case 3: {
      double acc = 0.0;
      for (int m = 1; m <= 4; ++m) acc += kD3[m - 1] * (f(m) - f(-m));
      return acc / (h * h * h);
    }
    default:
      throw DomainError("row_deriv: unsupported derivative order");
  }
}

// Order-3 Taylor jet at a patch center from nested per-axis rules; fetch takes
// cell offsets (dx, dy, dt) in the covering space of the grid.  Derivatives
// mixing x and y use the reach-2 rules, so the whole patch fits inside the
// union of a 5^3 cube and the reach-4 coordinate lines/planes through the
// center (pure third derivatives never mix axes).
template <class Fetch>
Jet<3, 3> patch_jet(Fetch&& fetch, double hx, double hy, double ht) {
  using J = Jet<3, 3>;
  const auto& tab = J::Table::instance();
  J out;
  for (int s = 0; s < J::N; ++s) {
    const int a = tab.exps[s][0], b = tab.exps[s][1], c = tab.exps[s][2];
    const bool red = (a > 0 && b > 0);
    auto row_t = [&](int dt) {
      auto row_y = [&](int dy) {
        auto row_x = [&](int dx) { return fetch(dx, dy, dt); };
        return row_deriv(row_x, a, hx, red);
      };
      return row_deriv(row_y, b, hy, red);
    };
    double val = row_deriv(row_t, c, ht, red);
    double fact = 1.0;
    for (int q = 2; q <= a; ++q) fact *= q;
    for (int q = 2; q <= b; ++q) fact *= q;
    for (int q = 2; q <= c; ++q) fact *= q;
    out.c[s] = val / fact;
  }
  return out;
}

}  // namespace stencil

// ============================================================================
// NilGrid: uniform nodes over a fundamental domain of the nilmanifold quotient
// with lattice scale L and vertical period Tper = 2 L^2 / m.
//
// Nodes are (i hx, j hx, k ht) with hx = L/N and ht = Tper/N, so the twist a
// stencil leg picks up when crossing a lattice face is an exact whole number
// of t-cells:
//   u(x + L, y, t) = u(x, y, t + 2 L y)   ->   k += m j   when crossing +x,
//   u(x, y + L, t) = u(x, y, t - 2 L x)   ->   k -= m i   when crossing +y,
// and the t-axis is plainly periodic.  Every single-axis shift is a
// permutation of the node set whose inverse is the opposite shift, so the
// centered first-derivative operators below are exactly antisymmetric in the
// uniform node inner product.
// ============================================================================

class NilGrid {
 public:
  using Vec = std::vector<double>;

  explicit NilGrid(int cells, double lattice = 1.0, double t_period = 0.0)
      : N_(cells), L_(lattice) {
    Tper_ = t_period > 0.0 ? t_period : 2.0 * L_ * L_;
    if (N_ < 12) throw StencilNotAssembled("nil grid: need at least 12 cells per period");
    double m = 2.0 * L_ * L_ / Tper_;
    long im = std::lround(m);
    if (!(L_ > 0.0) || !(Tper_ > 0.0) || std::fabs(m - double(im)) > 1e-9 * m || im < 1)
      throw IncompatibleLattice("nil grid: t-period must divide 2 lattice^2");
    m_ = static_cast<int>(im);
    Nt_ = N_;
    hx_ = L_ / N_;
    ht_ = Tper_ / N_;
    c0_ = 1.0 / std::sqrt(4.0 * L_ * L_ * Tper_);
    w_ = 4.0 * c0_ * c0_ * hx_ * hx_ * ht_;  // sums to exactly unit volume
  }

  int planar_cells() const { return N_; }
  int vertical_cells() const { return Nt_; }
  double hx() const { return hx_; }
  double ht() const { return ht_; }
  double lattice() const { return L_; }
  double t_period() const { return Tper_; }
  double scale() const { return c0_; }
  int twist_index() const { return m_; }
  double node_weight() const { return w_; }
  std::size_t size() const { return std::size_t(N_) * N_ * Nt_; }

  std::size_t index(int i, int j, int k) const {
    return (std::size_t(i) * N_ + j) * Nt_ + k;
  }

  void decode(std::size_t id, int& i, int& j, int& k) const {
    k = static_cast<int>(id % Nt_);
    id /= Nt_;
    j = static_cast<int>(id % N_);
    i = static_cast<int>(id / N_);
  }

  std::array<double, 3> point(std::size_t id) const {
    int i, j, k;
    decode(id, i, j, k);
    return {i * hx_, j * hx_, k * ht_};
  }

  // node holding the value of u at the covering-space offset
  // (a hx, b hx, c ht) from node (i, j, k); lattice reductions are applied
  // x-first, then y, then t, each contributing its group twist
  std::size_t offset_index(int i, int j, int k, int a, int b, int c) const {
    int ia = i + a, jb = j + b;
    int wrx = floor_div(ia, N_), wry = floor_div(jb, N_);
    int i2 = ia - wrx * N_, j2 = jb - wry * N_;
    long kc = long(k) + c + long(m_) * (long(wrx) * (j + b) - long(wry) * i2);
    kc %= Nt_;
    if (kc < 0) kc += Nt_;
    return index(i2, j2, static_cast<int>(kc));
  }

  std::size_t shift(std::size_t id, int axis, int m) const {
    int i, j, k;
    decode(id, i, j, k);
    return offset_index(i, j, k, axis == 0 ? m : 0, axis == 1 ? m : 0, axis == 2 ? m : 0);
  }

  // centered 8th-order first derivative along a coordinate axis; out must not
  // alias u
  void d1(const Vec& u, int axis, Vec& out) const {
    out.resize(size());
    const double inv_h = 1.0 / (axis == 2 ? ht_ : hx_);
    for (int i = 0; i < N_; ++i)
      for (int j = 0; j < N_; ++j)
        for (int k = 0; k < Nt_; ++k) {
          double acc = 0.0;
          for (int m = 1; m <= 4; ++m) {
            int a = axis == 0 ? m : 0, b = axis == 1 ? m : 0, c = axis == 2 ? m : 0;
            acc += stencil::kD1[m - 1] * (u[offset_index(i, j, k, a, b, c)] -
                                          u[offset_index(i, j, k, -a, -b, -c)]);
          }
          out[index(i, j, k)] = acc * inv_h;
        }
  }

  // centered 8th-order second derivative along a coordinate axis
  void d2(const Vec& u, int axis, Vec& out) const {
    out.resize(size());
    const double h = (axis == 2 ? ht_ : hx_);
    const double inv_h2 = 1.0 / (h * h);
    for (int i = 0; i < N_; ++i)
      for (int j = 0; j < N_; ++j)
        for (int k = 0; k < Nt_; ++k) {
          std::size_t id = index(i, j, k);
          double acc = stencil::kD2c * u[id];
          for (int m = 1; m <= 4; ++m) {
            int a = axis == 0 ? m : 0, b = axis == 1 ? m : 0, c = axis == 2 ? m : 0;
            acc += stencil::kD2[m - 1] * (u[offset_index(i, j, k, a, b, c)] +
                                          u[offset_index(i, j, k, -a, -b, -c)]);
          }
          out[id] = acc * inv_h2;
        }
  }

  // P u = u_x / 2 + y u_t and Q u = u_y / 2 - x u_t: the real and minus the
  // imaginary part of the flat frame derivative Z u = (P - i Q) u.  The
  // coefficient fields commute with the shifts entering them, so P and Q are
  // exactly antisymmetric on the quotient.
  void apply_PQ(const Vec& u, Vec& pu, Vec& qu) const {
    Vec dx, dy, dt;
    d1(u, 0, dx);
    d1(u, 1, dy);
    d1(u, 2, dt);
    pu.resize(size());
    qu.resize(size());
    for (int i = 0; i < N_; ++i)
      for (int j = 0; j < N_; ++j) {
        double x = i * hx_, y = j * hx_;
        for (int k = 0; k < Nt_; ++k) {
          std::size_t id = index(i, j, k);
          pu[id] = 0.5 * dx[id] + y * dt[id];
          qu[id] = 0.5 * dy[id] - x * dt[id];
        }
      }
  }

  // L u = -(8 / c0) (P(Pu) + Q(Qu)): the CR Laplacian of the flat quotient in
  // composite form; exactly symmetric positive semidefinite, kernel the
  // constants
  void apply_L(const Vec& u, Vec& out) const {
    Vec pu, qu, da, db;
    apply_PQ(u, pu, qu);
    out.resize(size());
    d1(pu, 0, da);
    d1(pu, 2, db);
    for (int i = 0; i < N_; ++i)
      for (int j = 0; j < N_; ++j) {
        double y = j * hx_;
        for (int k = 0; k < Nt_; ++k) {
          std::size_t id = index(i, j, k);
          out[id] = 0.5 * da[id] + y * db[id];
        }
      }
    d1(qu, 1, da);
    d1(qu, 2, db);
    const double s = -8.0 / c0_;
    for (int i = 0; i < N_; ++i)
      for (int j = 0; j < N_; ++j) {
        double x = i * hx_;
        for (int k = 0; k < Nt_; ++k) {
          std::size_t id = index(i, j, k);
          out[id] = s * (out[id] + 0.5 * da[id] - x * db[id]);
        }
      }
  }

  // independent discretization of the same operator from the pointwise
  // expansion P^2 + Q^2 = (d_xx + d_yy)/4 + y d_xt - x d_yt + (x^2 + y^2) d_tt,
  // built from the second-derivative rules instead of iterated first ones
  void apply_L_direct(const Vec& u, Vec& out) const {
    Vec xx, yy, tt, dt, xt, yt;
    d2(u, 0, xx);
    d2(u, 1, yy);
    d2(u, 2, tt);
    d1(u, 2, dt);
    d1(dt, 0, xt);
    d1(dt, 1, yt);
    out.resize(size());
    const double s = -8.0 / c0_;
    for (int i = 0; i < N_; ++i)
      for (int j = 0; j < N_; ++j) {
        double x = i * hx_, y = j * hx_;
        double r2 = x * x + y * y;
        for (int k = 0; k < Nt_; ++k) {
          std::size_t id = index(i, j, k);
          out[id] = s * (0.25 * (xx[id] + yy[id]) + y * xt[id] - x * yt[id] + r2 * tt[id]);
        }
      }
  }

  // order-3 Taylor jet of a node field at a node, from the surrounding patch
  Jet<3, 3> node_jet(const Vec& u, std::size_t id) const {
    int i, j, k;
    decode(id, i, j, k);
    auto fetch = [&](int a, int b, int c) { return u[offset_index(i, j, k, a, b, c)]; };
    return stencil::patch_jet(fetch, hx_, hx_, ht_);
  }

 private:
  static int floor_div(int a, int b) {
    int q = a / b, r = a % b;
    return (r != 0 && (r < 0) != (b < 0)) ? q - 1 : q;
  }

  int N_;
  double L_;
  double Tper_;
  int m_;  // twist index 2 lattice^2 / t_period
  int Nt_;
  double hx_, ht_, c0_, w_;
};

// ============================================================================
// DiscreteOperator: common surface of the assembled CR-Laplacian solvers.
//
// apply_L applies the conformal Laplacian L = 4 Delta + S of the instance's
// contact form; apply_L_indep an independently assembled discretization of the
// same operator (where one exists).  energy_A is the quadrature of the
// gradient form
//     A(u) = int ( 4 |du|^2 + S u^2 ) dV,
// and energy_A_grad the gradient of energy_A in the inner product weighted by
// 2 * precond_weight; for the unblended operators this equals apply_L exactly.
// ============================================================================

class DiscreteOperator {
 public:
  using Vec = std::vector<double>;

  virtual ~DiscreteOperator() = default;

  virtual std::size_t size() const = 0;
  virtual std::string label() const = 0;
  virtual const ManifoldBase<1>& base_manifold() const = 0;

  virtual int node_chart(std::size_t g) const = 0;
  virtual std::array<double, 3> node_point(std::size_t g) const = 0;
  virtual double weight(std::size_t g) const = 0;          // quadrature weight
  virtual double precond_weight(std::size_t g) const = 0;  // uncut cell density
  virtual double volume() const = 0;

  // node one cell away along each positive axis offset, or npos when the
  // offset leaves the degree-of-freedom set
  static constexpr std::size_t npos = std::size_t(-1);
  virtual std::size_t node_neighbor(std::size_t g, int a, int b, int c) const = 0;

  // exact null direction of apply_L when the operator has one (the flat
  // quotient and its rescalings); false leaves out untouched
  virtual bool kernel_vector(Vec&) const { return false; }

  virtual void apply_L(const Vec& u, Vec& out) const = 0;
  virtual void apply_L_indep(const Vec& u, Vec& out) const = 0;

  // transpose of apply_L in the plain coordinate pairing
  virtual void apply_Lt(const Vec& u, Vec& out) const = 0;
  virtual double energy_A(const Vec& u) const = 0;
  virtual void energy_A_grad(const Vec& u, Vec& grad) const = 0;

  // zero-order coefficient of apply_L (the discrete Webster scalar)
  virtual void scalar_term(Vec& out) const = 0;

  // order-3 jets of the total conformal exponent relative to base_manifold()
  // for the candidate form e^{2 log_u} * (instance form), at sampled nodes;
  // log_u is a node field, and instance rescalings add their own exponent
  virtual void conformal_jets(const Vec& log_u, std::vector<std::size_t>& nodes,
                              std::vector<Jet<3, 3>>& jets) const = 0;
};

// ============================================================================
// NilOperator: CR Laplacian of the flat nilmanifold quotient, or of the
// rescaled form theta~ = e^{2f} theta on it.
//
// The rescaled operator is the exact conjugation L~ u = e^{-3f} L(e^f u) with
// quadrature weight w~ = w e^{4f}; it is exactly self-adjoint in w~, and its
// energy is evaluated as the flat energy of e^f u, whose gradient in the
// 2 w~ inner product is exactly apply_L.
// ============================================================================

class NilOperator : public DiscreteOperator {
 public:
  explicit NilOperator(int cells, const Nilmanifold& model = Nilmanifold(),
                       const FieldBase<1>* f = nullptr)
      : grid_(cells, model.lattice(), model.t_period()), model_(model), f_field_(f) {
    const std::size_t n = grid_.size();
    if (f_field_) {
      fval_.resize(n);
      ef_.resize(n);
      e3f_inv_.resize(n);
      w4_.resize(n);
      for (std::size_t g = 0; g < n; ++g) {
        double fv = f_field_->value(0, grid_.point(g));
        fval_[g] = fv;
        ef_[g] = std::exp(fv);
        e3f_inv_[g] = std::exp(-3.0 * fv);
        w4_[g] = grid_.node_weight() * std::exp(4.0 * fv);
      }
      grid_.apply_L(ef_, scal_);
      for (std::size_t g = 0; g < n; ++g) scal_[g] *= e3f_inv_[g];
      KahanSum acc;
      for (std::size_t g = 0; g < n; ++g) acc.add(w4_[g]);
      vol_ = acc.get();
    } else {
      vol_ = grid_.node_weight() * double(n);
    }
  }

  const NilGrid& grid() const { return grid_; }
  bool rescaled() const { return f_field_ != nullptr; }

  std::size_t size() const override { return grid_.size(); }
  std::string label() const override {
    return f_field_ ? "nilmanifold-rescaled" : "nilmanifold";
  }
  const ManifoldBase<1>& base_manifold() const override { return model_; }

  int node_chart(std::size_t) const override { return 0; }
  std::array<double, 3> node_point(std::size_t g) const override { return grid_.point(g); }
  double weight(std::size_t g) const override {
    return f_field_ ? w4_[g] : grid_.node_weight();
  }
  double precond_weight(std::size_t g) const override { return weight(g); }
  double volume() const override { return vol_; }

  std::size_t node_neighbor(std::size_t g, int a, int b, int c) const override {
    int i, j, k;
    grid_.decode(g, i, j, k);
    return grid_.offset_index(i, j, k, a, b, c);
  }

  bool kernel_vector(Vec& out) const override {
    out.assign(grid_.size(), 1.0);
    if (f_field_)
      for (std::size_t g = 0; g < out.size(); ++g) out[g] = std::exp(-fval_[g]);
    return true;
  }

  void apply_L(const Vec& u, Vec& out) const override {
    if (!f_field_) {
      grid_.apply_L(u, out);
      return;
    }
    Vec v(u.size());
    for (std::size_t g = 0; g < u.size(); ++g) v[g] = ef_[g] * u[g];
    grid_.apply_L(v, out);
    for (std::size_t g = 0; g < u.size(); ++g) out[g] *= e3f_inv_[g];
  }

  void apply_L_indep(const Vec& u, Vec& out) const override {
    if (!f_field_) {
      grid_.apply_L_direct(u, out);
      return;
    }
    Vec v(u.size());
    for (std::size_t g = 0; g < u.size(); ++g) v[g] = ef_[g] * u[g];
    grid_.apply_L_direct(v, out);
    for (std::size_t g = 0; g < u.size(); ++g) out[g] *= e3f_inv_[g];
  }

  // the flat quotient operator is symmetric in the plain pairing, so the
  // rescaled transpose swaps the two diagonal conjugation factors
  void apply_Lt(const Vec& u, Vec& out) const override {
    if (!f_field_) {
      grid_.apply_L(u, out);
      return;
    }
    Vec v(u.size());
    for (std::size_t g = 0; g < u.size(); ++g) v[g] = e3f_inv_[g] * u[g];
    grid_.apply_L(v, out);
    for (std::size_t g = 0; g < u.size(); ++g) out[g] *= ef_[g];
  }

  double energy_A(const Vec& u) const override {
    Vec v, pu, qu;
    const Vec* src = &u;
    if (f_field_) {
      v.resize(u.size());
      for (std::size_t g = 0; g < u.size(); ++g) v[g] = ef_[g] * u[g];
      src = &v;
    }
    grid_.apply_PQ(*src, pu, qu);
    const double a = (8.0 / grid_.scale()) * grid_.node_weight();
    KahanSum acc;
    for (std::size_t g = 0; g < u.size(); ++g)
      acc.add(a * (pu[g] * pu[g] + qu[g] * qu[g]));
    return acc.get();
  }

  void energy_A_grad(const Vec& u, Vec& grad) const override { apply_L(u, grad); }

  void scalar_term(Vec& out) const override {
    if (f_field_)
      out = scal_;
    else
      out.assign(grid_.size(), 0.0);
  }

  void conformal_jets(const Vec& log_u, std::vector<std::size_t>& nodes,
                      std::vector<Jet<3, 3>>& jets) const override {
    nodes.clear();
    jets.clear();
    const int sp = std::max(1, grid_.planar_cells() / 8);
    const int st = std::max(1, grid_.vertical_cells() / 8);
    for (int i = 0; i < grid_.planar_cells(); i += sp)
      for (int j = 0; j < grid_.planar_cells(); j += sp)
        for (int k = 0; k < grid_.vertical_cells(); k += st) {
          std::size_t id = grid_.index(i, j, k);
          Jet<3, 3> jet = grid_.node_jet(log_u, id);
          if (f_field_) jet += f_field_->eval(0, grid_.point(id));
          nodes.push_back(id);
          jets.push_back(jet);
        }
  }

 private:
  NilGrid grid_;
  Nilmanifold model_;
  const FieldBase<1>* f_field_;
  Vec fval_, ef_, e3f_inv_, w4_, scal_;
  double vol_ = 0.0;
};

// ============================================================================
// SphereOperator: blended two-chart CR Laplacian on the sphere.
//
// Each chart carries a box of midpoint nodes; degrees of freedom are the nodes
// with positive partition weight chi.  The per-chart local operator is the
// exact ground-state conjugation of the flat one,
//     Lloc u = G^{-3} ( Lflat(G u) - u Lflat(G) ) + S u,     G = sqrt(lam),
// so Lloc(1) = S holds exactly; values at composite nodes are
//     bw * (own-chart Lloc u) + (1 - bw) * (other-chart Lloc u at tau p)
// with 4^3 tensor cubic interpolation.  The combination weight bw floors the
// partition value at kBlendFloor: the partition tail decays to machine scale
// at the band edge, and an unfloored combination leaves the outermost rows
// with no own-chart coupling, which destroys the uniform ellipticity of the
// composite system (its diagonal spans nine decades and linear solves against
// it stagnate).  Both local operators are consistent discretizations on the
// overlap, so any combination weight bounded away from 0 and 1 keeps the
// truncation order; only apply_L uses bw, the quadrature partition does not.
// Nodes a stencil reads beyond the own DOF set (halos) are filled by the same
// interpolation from the other chart's interior, which closes because every
// halo image lands strictly inside the opposite DOF region; assembly verifies
// this node by node and throws StencilNotAssembled when the boxes cannot host
// the coupled stencils.
//
// The energy quadrature uses the chi-partitioned weights w = chi * 4 lam^2 *
// hx^2 ht; the energy gradient is preconditioned by the uncut density
// 4 lam^2 hx^2 ht, which keeps u = const an exact critical point of the
// constrained descent.
// ============================================================================

class SphereOperator : public DiscreteOperator {
 public:
  static constexpr double kBlendFloor = 0.05;

  explicit SphereOperator(int cells_per_axis = 48, bool unit_volume = true)
      : M_(cells_per_axis), sph_(unit_volume) {
    hx_ = 2.0 * SphereCharts::kBoxR / M_;
    ht_ = 2.0 * SphereCharts::kBoxT / M_;
    S_ = 8.0 / sph_.vol_scale();
    assemble();
  }

  const SphereCharts& charts() const { return sph_; }
  int cells_per_axis() const { return M_; }
  double scalar_value() const { return S_; }
  std::size_t halo_count() const { return halo_[0].size() + halo_[1].size(); }

  std::size_t size() const override { return node_.size(); }
  std::string label() const override { return "sphere"; }
  const ManifoldBase<1>& base_manifold() const override { return sph_; }

  int node_chart(std::size_t g) const override { return node_[g].chart; }
  std::array<double, 3> node_point(std::size_t g) const override {
    return node_pt(node_[g].i, node_[g].j, node_[g].k);
  }
  double weight(std::size_t g) const override { return w_[g]; }
  double precond_weight(std::size_t g) const override { return wq_[g]; }
  double volume() const override { return vol_; }

  std::size_t node_neighbor(std::size_t g, int a, int b, int c) const override {
    const NodeRef& nr = node_[g];
    const int i = nr.i + a, j = nr.j + b, k = nr.k + c;
    if (i < 0 || j < 0 || k < 0 || i >= M_ || j >= M_ || k >= M_) return npos;
    std::int64_t d = dof_of_[nr.chart][box(i, j, k)];
    return d < 0 ? npos : std::size_t(d);
  }

  void apply_L(const Vec& u, Vec& out) const override { apply_rows(u, out, false); }

  // companion discretization with the same per-chart stencils and halo
  // coupling but no cross-chart row blending; uniformly elliptic rows make it
  // the preconditioner for linear solves with the blended operator
  void apply_own_rows(const Vec& u, Vec& out) const { apply_rows(u, out, true); }

  // the blended operator is the only assembled discretization on the sphere;
  // the gradient form below plays the role of the second evaluation of A
  void apply_L_indep(const Vec& u, Vec& out) const override { apply_L(u, out); }

  // transpose of apply_L in the plain coordinate pairing, by reverse traversal
  // of the blend, local stencil, and halo interpolation stages
  void apply_Lt(const Vec& a, Vec& out) const override {
    for (int c = 0; c < 2; ++c) lb_[c].assign(nbox_, 0.0);
    for (std::size_t g = 0; g < node_.size(); ++g) {
      const double av = a[g];
      if (av == 0.0) continue;
      const NodeRef& nr = node_[g];
      if (chi_[g] >= 1.0) {
        lb_[nr.chart][box(nr.i, nr.j, nr.k)] += av;
      } else {
        const double bw = std::max(chi_[g], kBlendFloor);
        lb_[nr.chart][box(nr.i, nr.j, nr.k)] += bw * av;
        const Interp& rec = blend_[blend_idx_[g]].second;
        Vec& lo = lb_[1 - nr.chart];
        for (int s = 0; s < 64; ++s) lo[rec.src[s]] += (1.0 - bw) * rec.wgt[s] * av;
      }
    }
    for (int c = 0; c < 2; ++c) {
      Vec& vb = vb_[c];
      Vec& ub = ub_[c];
      vb.assign(nbox_, 0.0);
      ub.assign(nbox_, 0.0);
      for (std::size_t b : lloc_[c]) {
        const double lv = lb_[c][b];
        if (lv == 0.0) continue;
        int i, j, k;
        debox(b, i, j, k);
        lflat_at_t(vb, i, j, k, lv * ginv3_[c][b]);
        ub[b] += lv * (S_ - ginv3_[c][b] * lg_[c][b]);
      }
      for (std::size_t b : uneed_[c]) ub[b] += gbox_[c][b] * vb[b];
    }
    out.assign(node_.size(), 0.0);
    for (std::size_t g = 0; g < node_.size(); ++g) {
      const NodeRef& nr = node_[g];
      out[g] += ub_[nr.chart][box(nr.i, nr.j, nr.k)];
    }
    for (int c = 0; c < 2; ++c)
      for (const auto& h : halo_[c]) {
        const double gv = ub_[c][h.first];
        if (gv == 0.0) continue;
        for (int s = 0; s < 64; ++s) out[h.second.src[s]] += h.second.wgt[s] * gv;
      }
  }

  double energy_A(const Vec& u) const override {
    scatter(u);
    KahanSum acc;
    for (std::size_t g = 0; g < node_.size(); ++g) {
      double pu, qu;
      pq_at(g, pu, qu);
      acc.add(w_[g] * ((8.0 / lamv_[g]) * (pu * pu + qu * qu) + S_ * u[g] * u[g]));
    }
    return acc.get();
  }

  void energy_A_grad(const Vec& u, Vec& grad) const override {
    scatter(u);
    for (int c = 0; c < 2; ++c) gb_[c].assign(nbox_, 0.0);
    grad.assign(node_.size(), 0.0);
    for (std::size_t g = 0; g < node_.size(); ++g) {
      const NodeRef& nr = node_[g];
      double pu, qu;
      pq_at(g, pu, qu);
      const double rp = 2.0 * w_[g] * (8.0 / lamv_[g]) * pu;
      const double rq = 2.0 * w_[g] * (8.0 / lamv_[g]) * qu;
      auto p = node_pt(nr.i, nr.j, nr.k);
      Vec& gb = gb_[nr.chart];
      for (int m = 1; m <= 4; ++m) {
        const double w1 = stencil::kD1[m - 1];
        gb[box(nr.i + m, nr.j, nr.k)] += rp * 0.5 * w1 / hx_;
        gb[box(nr.i - m, nr.j, nr.k)] -= rp * 0.5 * w1 / hx_;
        gb[box(nr.i, nr.j + m, nr.k)] += rq * 0.5 * w1 / hx_;
        gb[box(nr.i, nr.j - m, nr.k)] -= rq * 0.5 * w1 / hx_;
        const double ct = (rp * p[1] - rq * p[0]) * w1 / ht_;
        gb[box(nr.i, nr.j, nr.k + m)] += ct;
        gb[box(nr.i, nr.j, nr.k - m)] -= ct;
      }
      grad[g] += 2.0 * w_[g] * S_ * u[g];
    }
    // pull cotangents on the box extension back to the degrees of freedom
    for (std::size_t g = 0; g < node_.size(); ++g) {
      const NodeRef& nr = node_[g];
      grad[g] += gb_[nr.chart][box(nr.i, nr.j, nr.k)];
    }
    for (int c = 0; c < 2; ++c)
      for (const auto& h : halo_[c]) {
        const double gv = gb_[c][h.first];
        if (gv == 0.0) continue;
        for (int s = 0; s < 64; ++s) grad[h.second.src[s]] += h.second.wgt[s] * gv;
      }
    for (std::size_t g = 0; g < node_.size(); ++g) grad[g] /= 2.0 * wq_[g];
  }

  void scalar_term(Vec& out) const override { out.assign(node_.size(), S_); }

  void conformal_jets(const Vec& log_u, std::vector<std::size_t>& nodes,
                      std::vector<Jet<3, 3>>& jets) const override {
    scatter(log_u);
    nodes.clear();
    jets.clear();
    for (std::size_t g : sample_) {
      const NodeRef& nr = node_[g];
      const Vec& ub = ub_[nr.chart];
      auto fetch = [&](int a, int b, int c) {
        return ub[box(nr.i + a, nr.j + b, nr.k + c)];
      };
      nodes.push_back(g);
      jets.push_back(stencil::patch_jet(fetch, hx_, hx_, ht_));
    }
  }

 private:
  struct NodeRef {
    int chart, i, j, k;
  };
  struct Interp {
    std::int64_t src[64];
    double wgt[64];
  };

  enum : std::uint8_t { kInterior = 1, kLloc = 2, kUNeed = 4 };

  std::size_t box(int i, int j, int k) const {
    return (std::size_t(i) * M_ + j) * M_ + k;
  }
  void debox(std::size_t b, int& i, int& j, int& k) const {
    k = static_cast<int>(b % M_);
    b /= M_;
    j = static_cast<int>(b % M_);
    i = static_cast<int>(b / M_);
  }
  std::array<double, 3> node_pt(int i, int j, int k) const {
    return {-SphereCharts::kBoxR + (i + 0.5) * hx_, -SphereCharts::kBoxR + (j + 0.5) * hx_,
            -SphereCharts::kBoxT + (k + 0.5) * ht_};
  }

  // 4-point Lagrange weights on the window {b-1, b, b+1, b+2}, xi in [0,1)
  // measured from node b; exact on cubics, weights sum to one
  static void lagrange4(double xi, double w[4]) {
    w[0] = -xi * (xi - 1.0) * (xi - 2.0) / 6.0;
    w[1] = (xi * xi - 1.0) * (xi - 2.0) * 0.5;
    w[2] = -xi * (xi + 1.0) * (xi - 2.0) * 0.5;
    w[3] = xi * (xi * xi - 1.0) / 6.0;
  }

  // tensor cubic interpolation record targeting box point q; the two chart
  // boxes are congruent, so the record is chart independent
  Interp make_interp(const std::array<double, 3>& q, const char* what) const {
    double sx = (q[0] + SphereCharts::kBoxR) / hx_ - 0.5;
    double sy = (q[1] + SphereCharts::kBoxR) / hx_ - 0.5;
    double st = (q[2] + SphereCharts::kBoxT) / ht_ - 0.5;
    int ix = static_cast<int>(std::floor(sx));
    int iy = static_cast<int>(std::floor(sy));
    int it = static_cast<int>(std::floor(st));
    if (ix - 1 < 0 || ix + 2 >= M_ || iy - 1 < 0 || iy + 2 >= M_ || it - 1 < 0 ||
        it + 2 >= M_)
      throw StencilNotAssembled(std::string(what) +
                                ": interpolation window exceeds the chart box");
    double wx[4], wy[4], wt[4];
    lagrange4(sx - ix, wx);
    lagrange4(sy - iy, wy);
    lagrange4(st - it, wt);
    Interp rec;
    int s = 0;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        for (int d = 0; d < 4; ++d, ++s) {
          rec.src[s] = static_cast<std::int64_t>(box(ix - 1 + a, iy - 1 + b, it - 1 + d));
          rec.wgt[s] = wx[a] * wy[b] * wt[d];
        }
    return rec;
  }

  void apply_rows(const Vec& u, Vec& out, bool own_rows) const {
    scatter(u);
    for (int c = 0; c < 2; ++c) {
      const Vec& ub = ub_[c];
      Vec& vb = vb_[c];
      Vec& lb = lb_[c];
      for (std::size_t b : uneed_[c]) vb[b] = gbox_[c][b] * ub[b];
      for (std::size_t b : lloc_[c]) {
        int i, j, k;
        debox(b, i, j, k);
        lb[b] = ginv3_[c][b] * (lflat_at(vb, i, j, k) - ub[b] * lg_[c][b]) + S_ * ub[b];
      }
    }
    out.resize(node_.size());
    for (std::size_t g = 0; g < node_.size(); ++g) {
      const NodeRef& nr = node_[g];
      double own = lb_[nr.chart][box(nr.i, nr.j, nr.k)];
      if (own_rows || chi_[g] >= 1.0) {
        out[g] = own;
      } else {
        const Interp& rec = blend_[blend_idx_[g]].second;
        const Vec& lo = lb_[1 - nr.chart];
        double other = 0.0;
        for (int s = 0; s < 64; ++s) other += rec.wgt[s] * lo[rec.src[s]];
        const double bw = std::max(chi_[g], kBlendFloor);
        out[g] = bw * own + (1.0 - bw) * other;
      }
    }
  }

  // transpose scatter of lflat_at: adds s times that stencil row into v
  void lflat_at_t(Vec& v, int i, int j, int k, double s) const {
    auto p = node_pt(i, j, k);
    const double cxx = -8.0 * 0.25 / (hx_ * hx_) * s;
    const double ctt = -8.0 * (p[0] * p[0] + p[1] * p[1]) / (ht_ * ht_) * s;
    v[box(i, j, k)] += stencil::kD2c * (2.0 * cxx + ctt);
    for (int m = 1; m <= 4; ++m) {
      const double w2 = stencil::kD2[m - 1];
      v[box(i + m, j, k)] += w2 * cxx;
      v[box(i - m, j, k)] += w2 * cxx;
      v[box(i, j + m, k)] += w2 * cxx;
      v[box(i, j - m, k)] += w2 * cxx;
      v[box(i, j, k + m)] += w2 * ctt;
      v[box(i, j, k - m)] += w2 * ctt;
    }
    const double cxt = -8.0 * p[1] / (hx_ * ht_) * s;
    const double cyt = 8.0 * p[0] / (hx_ * ht_) * s;
    for (int m = 1; m <= 4; ++m)
      for (int l = 1; l <= 4; ++l) {
        const double cc = stencil::kD1[m - 1] * stencil::kD1[l - 1];
        v[box(i + m, j, k + l)] += cc * cxt;
        v[box(i - m, j, k + l)] -= cc * cxt;
        v[box(i + m, j, k - l)] -= cc * cxt;
        v[box(i - m, j, k - l)] += cc * cxt;
        v[box(i, j + m, k + l)] += cc * cyt;
        v[box(i, j - m, k + l)] -= cc * cyt;
        v[box(i, j + m, k - l)] -= cc * cyt;
        v[box(i, j - m, k - l)] += cc * cyt;
      }
  }

  // -8 [ (d_xx + d_yy)/4 + y d_xt - x d_yt + (x^2 + y^2) d_tt ] of a box field
  double lflat_at(const Vec& v, int i, int j, int k) const {
    auto at = [&](int a, int b, int d) { return v[box(i + a, j + b, k + d)]; };
    double xx = stencil::kD2c * at(0, 0, 0), yy = xx, tt = xx;
    for (int m = 1; m <= 4; ++m) {
      xx += stencil::kD2[m - 1] * (at(m, 0, 0) + at(-m, 0, 0));
      yy += stencil::kD2[m - 1] * (at(0, m, 0) + at(0, -m, 0));
      tt += stencil::kD2[m - 1] * (at(0, 0, m) + at(0, 0, -m));
    }
    xx /= hx_ * hx_;
    yy /= hx_ * hx_;
    tt /= ht_ * ht_;
    double xt = 0.0, yt = 0.0;
    for (int m = 1; m <= 4; ++m)
      for (int l = 1; l <= 4; ++l) {
        const double cc = stencil::kD1[m - 1] * stencil::kD1[l - 1];
        xt += cc * (at(m, 0, l) - at(-m, 0, l) - at(m, 0, -l) + at(-m, 0, -l));
        yt += cc * (at(0, m, l) - at(0, -m, l) - at(0, m, -l) + at(0, -m, -l));
      }
    xt /= hx_ * ht_;
    yt /= hx_ * ht_;
    auto p = node_pt(i, j, k);
    return -8.0 * (0.25 * (xx + yy) + p[1] * xt - p[0] * yt +
                   (p[0] * p[0] + p[1] * p[1]) * tt);
  }

  // own-chart P/Q derivatives of the scattered field at a degree of freedom
  void pq_at(std::size_t g, double& pu, double& qu) const {
    const NodeRef& nr = node_[g];
    const Vec& ub = ub_[nr.chart];
    double dx = 0.0, dy = 0.0, dt = 0.0;
    for (int m = 1; m <= 4; ++m) {
      const double w1 = stencil::kD1[m - 1];
      dx += w1 * (ub[box(nr.i + m, nr.j, nr.k)] - ub[box(nr.i - m, nr.j, nr.k)]);
      dy += w1 * (ub[box(nr.i, nr.j + m, nr.k)] - ub[box(nr.i, nr.j - m, nr.k)]);
      dt += w1 * (ub[box(nr.i, nr.j, nr.k + m)] - ub[box(nr.i, nr.j, nr.k - m)]);
    }
    dx /= hx_;
    dy /= hx_;
    dt /= ht_;
    auto p = node_pt(nr.i, nr.j, nr.k);
    pu = 0.5 * dx + p[1] * dt;
    qu = 0.5 * dy - p[0] * dt;
  }

  // fill the per-chart box extensions of a DOF field (interiors + halos)
  void scatter(const Vec& u) const {
    for (int c = 0; c < 2; ++c) ub_[c].assign(nbox_, 0.0);
    for (std::size_t g = 0; g < node_.size(); ++g)
      ub_[node_[g].chart][box(node_[g].i, node_[g].j, node_[g].k)] = u[g];
    for (int c = 0; c < 2; ++c)
      for (const auto& h : halo_[c]) {
        double v = 0.0;
        for (int s = 0; s < 64; ++s) v += h.second.wgt[s] * u[h.second.src[s]];
        ub_[c][h.first] = v;
      }
  }

  void assemble() {
    const double band = SphereCharts::kBand;
    const double band4 = band * band * band * band;
    nbox_ = std::size_t(M_) * M_ * M_;
    for (int c = 0; c < 2; ++c) {
      role_[c].assign(nbox_, 0);
      dof_of_[c].assign(nbox_, -1);
    }

    // degrees of freedom: nodes with positive partition weight
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < M_; ++i)
        for (int j = 0; j < M_; ++j)
          for (int k = 0; k < M_; ++k) {
            auto p = node_pt(i, j, k);
            if (SphereCharts::norm4(p) >= band4) continue;
            dof_of_[c][box(i, j, k)] = static_cast<std::int64_t>(node_.size());
            role_[c][box(i, j, k)] |= kInterior;
            node_.push_back({c, i, j, k});
            double ch = SphereCharts::chi(p);
            double lm = sph_.lam(p);
            chi_.push_back(ch);
            lamv_.push_back(lm);
            wq_.push_back(4.0 * lm * lm * hx_ * hx_ * ht_);
            w_.push_back(ch * 4.0 * lm * lm * hx_ * hx_ * ht_);
          }
    {
      KahanSum acc;
      for (double v : w_) acc.add(v);
      vol_ = acc.get();
    }

    // blend records; their sources are evaluation nodes of the other chart
    blend_idx_.assign(node_.size(), -1);
    for (std::size_t g = 0; g < node_.size(); ++g) {
      if (chi_[g] >= 1.0) continue;
      const NodeRef& nr = node_[g];
      auto q = SphereCharts::tau(node_pt(nr.i, nr.j, nr.k));
      Interp rec = make_interp(q, "blend");
      for (int s = 0; s < 64; ++s) role_[1 - nr.chart][rec.src[s]] |= kLloc;
      blend_idx_[g] = static_cast<std::int64_t>(blend_.size());
      blend_.emplace_back(g, rec);
    }
    for (int c = 0; c < 2; ++c)
      for (std::size_t b = 0; b < nbox_; ++b)
        if (role_[c][b] & kInterior) role_[c][b] |= kLloc;

    // stencil support of every evaluation node; the local operator reads the
    // xt and yt coordinate planes to reach +-4 cells
    for (int c = 0; c < 2; ++c) {
      for (std::size_t b = 0; b < nbox_; ++b) {
        if (!(role_[c][b] & kLloc)) continue;
        int i, j, k;
        debox(b, i, j, k);
        if (i < 4 || i + 4 >= M_ || j < 4 || j + 4 >= M_ || k < 4 || k + 4 >= M_)
          throw StencilNotAssembled("sphere grid: derivative stencil exceeds the chart box");
        for (int m = -4; m <= 4; ++m)
          for (int l = -4; l <= 4; ++l) {
            role_[c][box(i + m, j, k + l)] |= kUNeed;
            role_[c][box(i, j + m, k + l)] |= kUNeed;
          }
      }
      lloc_[c].clear();
      uneed_[c].clear();
      for (std::size_t b = 0; b < nbox_; ++b) {
        if (role_[c][b] & kLloc) lloc_[c].push_back(b);
        if (role_[c][b] & kUNeed) uneed_[c].push_back(b);
      }
    }

    // halo nodes: stencil-read values outside the DOF set, filled from the
    // other chart's interior; every interpolation source must itself be a
    // degree of freedom or the two boxes cannot express the coupling
    for (int c = 0; c < 2; ++c)
      for (std::size_t b = 0; b < nbox_; ++b) {
        if (!(role_[c][b] & kUNeed) || (role_[c][b] & kInterior)) continue;
        int i, j, k;
        debox(b, i, j, k);
        auto q = SphereCharts::tau(node_pt(i, j, k));
        Interp rec = make_interp(q, "halo");
        for (int s = 0; s < 64; ++s) {
          std::int64_t d = dof_of_[1 - c][rec.src[s]];
          if (d < 0)
            throw StencilNotAssembled(
                "sphere grid: halo interpolation reaches a non-interior node");
          rec.src[s] = d;
        }
        halo_[c].emplace_back(b, rec);
      }

    // analytic conformal factor of the charts and its local image under the
    // flat operator (evaluated once; apply_L only combines stored fields)
    for (int c = 0; c < 2; ++c) {
      gbox_[c].assign(nbox_, 0.0);
      ginv3_[c].assign(nbox_, 0.0);
      lg_[c].assign(nbox_, 0.0);
      for (std::size_t b = 0; b < nbox_; ++b) {
        int i, j, k;
        debox(b, i, j, k);
        gbox_[c][b] = std::sqrt(sph_.lam(node_pt(i, j, k)));
      }
      for (std::size_t b : lloc_[c]) {
        int i, j, k;
        debox(b, i, j, k);
        double g = gbox_[c][b];
        ginv3_[c][b] = 1.0 / (g * g * g);
        lg_[c][b] = lflat_at(gbox_[c], i, j, k);
      }
      ub_[c].assign(nbox_, 0.0);
      vb_[c].assign(nbox_, 0.0);
      lb_[c].assign(nbox_, 0.0);
      gb_[c].assign(nbox_, 0.0);
    }

    // curvature sample nodes: strided deep-interior nodes whose jet patch
    // (reach-4 planes plus a 5^3 cube) stays inside the available values
    const double inner4 = 1.0 / band4;
    const int stride = std::max(1, M_ / 8);
    for (std::size_t g = 0; g < node_.size(); ++g) {
      const NodeRef& nr = node_[g];
      if (nr.i % stride || nr.j % stride || nr.k % stride) continue;
      if (SphereCharts::norm4(node_pt(nr.i, nr.j, nr.k)) > inner4) continue;
      bool ok = true;
      for (int a = -2; a <= 2 && ok; ++a)
        for (int b = -2; b <= 2 && ok; ++b)
          for (int d = -2; d <= 2 && ok; ++d)
            if (!(role_[nr.chart][box(nr.i + a, nr.j + b, nr.k + d)] & kUNeed)) ok = false;
      if (ok) sample_.push_back(g);
    }
  }

  int M_;
  SphereCharts sph_;
  double hx_, ht_, S_;
  std::size_t nbox_ = 0;

  std::array<std::vector<std::uint8_t>, 2> role_;
  std::array<std::vector<std::int64_t>, 2> dof_of_;
  std::vector<NodeRef> node_;
  std::vector<double> chi_, lamv_, w_, wq_;
  std::vector<std::int64_t> blend_idx_;
  std::vector<std::pair<std::size_t, Interp>> blend_;
  std::array<std::vector<std::pair<std::size_t, Interp>>, 2> halo_;
  std::array<std::vector<std::size_t>, 2> lloc_, uneed_;
  std::array<Vec, 2> gbox_, ginv3_, lg_;
  std::vector<std::size_t> sample_;
  double vol_ = 0.0;

  mutable std::array<Vec, 2> ub_, vb_, lb_, gb_;
};

}  // namespace crgeo
