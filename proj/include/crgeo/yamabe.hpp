/// @file yamabe.hpp
/// @brief CR Laplacian application, the quotient functionals A and B,
///        constrained minimization for the invariant estimate, constant
///        curvature residuals, Green functions of the conformal Laplacian,
///        and the low-energy uniqueness experiment.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "crgeo/conformal.hpp"
#include "crgeo/grid.hpp"

namespace crgeo {

struct IndefiniteOperator : std::runtime_error {
  explicit IndefiniteOperator(const std::string& what) : std::runtime_error(what) {}
};

struct NonConvergence : std::runtime_error {
  explicit NonConvergence(const std::string& what) : std::runtime_error(what) {}
};

struct PositivityLoss : std::runtime_error {
  explicit PositivityLoss(const std::string& what) : std::runtime_error(what) {}
};

// dimensional constant of the conformal Laplacian L = b_n Delta + S
constexpr double b_n(int n) { return 2.0 + 2.0 / n; }

// critical exponent p = 2 + 2/n of the constraint functional
constexpr double p_exponent(int n) { return 2.0 + 2.0 / n; }

// ============================================================================
// Node densities
// ============================================================================

struct GridDensity {
  std::vector<double> values;
  bool positive = true;
};

inline void validate_density(const DiscreteOperator& op, const GridDensity& u,
                             const char* where) {
  if (u.values.size() != op.size())
    throw DomainError(std::string(where) + ": density size does not match the operator");
  double mn = std::numeric_limits<double>::infinity();
  for (double v : u.values) {
    if (!std::isfinite(v))
      throw DomainError(std::string(where) + ": density carries non-finite values");
    mn = std::min(mn, v);
  }
  if (u.positive && !(mn > 0.0))
    throw DomainError(std::string(where) + ": density flagged positive has min <= 0");
}

inline GridDensity cr_laplacian_apply(const DiscreteOperator& op, const GridDensity& u) {
  validate_density(op, u, "cr_laplacian_apply");
  GridDensity out;
  out.positive = false;
  op.apply_L(u.values, out.values);
  return out;
}

// ============================================================================
// Quotient functionals
// ============================================================================

// A evaluated both as the first-order energy (the gradient form, which the
// descent differentiates exactly) and as the quadrature pairing <u, L u>;
// the defect is the discrete integration-by-parts error between them.
struct AReport {
  double grad_form = 0.0;
  double operator_form = 0.0;
  double defect = 0.0;
};

inline AReport functional_A_report(const DiscreteOperator& op,
                                   const std::vector<double>& u) {
  AReport rep;
  rep.grad_form = op.energy_A(u);
  std::vector<double> lu;
  op.apply_L(u, lu);
  KahanSum acc;
  for (std::size_t g = 0; g < u.size(); ++g) acc.add(op.weight(g) * u[g] * lu[g]);
  rep.operator_form = acc.get();
  rep.defect = std::fabs(rep.grad_form - rep.operator_form);
  return rep;
}

inline double functional_A(const DiscreteOperator& op, const std::vector<double>& u) {
  return op.energy_A(u);
}

inline double functional_B(const DiscreteOperator& op, const std::vector<double>& u) {
  KahanSum acc;
  for (std::size_t g = 0; g < u.size(); ++g) {
    const double q = u[g] * u[g];
    acc.add(op.weight(g) * q * q);
  }
  return acc.get();
}

namespace detail {

inline double wdot(const DiscreteOperator& op, const std::vector<double>& a,
                   const std::vector<double>& b) {
  KahanSum acc;
  for (std::size_t g = 0; g < a.size(); ++g) acc.add(op.weight(g) * a[g] * b[g]);
  return acc.get();
}

// inner product of the descent metric; energy_A_grad returns gradients
// relative to twice the uncut cell density
inline double pdot(const DiscreteOperator& op, const std::vector<double>& a,
                   const std::vector<double>& b) {
  KahanSum acc;
  for (std::size_t g = 0; g < a.size(); ++g)
    acc.add(2.0 * op.precond_weight(g) * a[g] * b[g]);
  return acc.get();
}

// deterministic uniform in [-1, 1)
inline double unit_rand(std::mt19937_64& rng) {
  return 2.0 * std::ldexp(double(rng() >> 11), -53) - 1.0;
}

}  // namespace detail

// ============================================================================
// Constrained minimization
// ============================================================================

struct MinimizeOptions {
  double tol = 1e-6;           // Euler-Lagrange residual target
  int max_iterations = 20000;  // accepted steps
  double step0 = 1.0;          // first trial step before the quasi-Newton scale
  double armijo_c = 1e-4;      // sufficient-decrease constant
  double backtrack = 0.5;      // step shrink factor
  int max_backtracks = 60;
  double clip_floor_rel = 1e-8;     // positivity floor relative to max of trial
  double max_clip_fraction = 0.25;  // accepted-step clip budget before failure
};

struct YamabeSolution {
  GridDensity u;
  double Y_est = 0.0;
  double EL_residual = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trace_A;  // A at every accepted iterate, nonincreasing
};

// projected gradient descent for Y = inf { A(u) : B(u) = 1 }.  Steps move
// along the metric gradient of A projected onto the tangent space of the
// constraint sphere, clip negative parts to a relative floor, renormalize to
// B = 1, and must pass an Armijo decrease test; the accepted A sequence is
// therefore nonincreasing by construction.  Convergence is declared on the
// relative Euler-Lagrange residual ||L u - A u^{p-1}|| / ||u|| in the
// quadrature norm.
inline YamabeSolution yamabe_minimize(const DiscreteOperator& op, const GridDensity& init,
                                      const MinimizeOptions& opts = {}) {
  validate_density(op, init, "yamabe_minimize");
  if (!init.positive) throw DomainError("yamabe_minimize: init must be flagged positive");
  const std::size_t n = op.size();
  using Vec = std::vector<double>;

  auto normalize = [&](Vec& u) {
    const double b = functional_B(op, u);
    if (!(b > 0.0)) throw DomainError("yamabe_minimize: vanishing constraint functional");
    const double s = std::pow(b, -0.25);
    for (double& v : u) v *= s;
  };

  Vec u = init.values;
  normalize(u);

  YamabeSolution best;
  best.EL_residual = std::numeric_limits<double>::infinity();

  Vec lu(n), g(n), gtan(n), nrm(n), trial(n), du, dg, gprev;
  double step = opts.step0;
  int accepted = 0;
  bool converged = false;
  double aval = 0.0, el = 0.0;
  std::vector<double> trace;

  for (int iter = 0;; ++iter) {
    aval = op.energy_A(u);
    op.apply_L(u, lu);
    KahanSum rnum;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = lu[i] - aval * u[i] * u[i] * u[i];
      rnum.add(op.weight(i) * r * r);
    }
    el = std::sqrt(rnum.get()) / std::sqrt(detail::wdot(op, u, u));
    if (el < best.EL_residual) {
      best.EL_residual = el;
      best.u.values = u;
      best.Y_est = aval;
      best.iterations = accepted;
    }
    trace.push_back(aval);
    if (el <= opts.tol) {
      converged = true;
      break;
    }
    if (accepted >= opts.max_iterations) break;

    op.energy_A_grad(u, g);
    // tangent projection against the constraint normal in the descent metric
    for (std::size_t i = 0; i < n; ++i)
      nrm[i] = 4.0 * op.weight(i) * u[i] * u[i] * u[i] / (2.0 * op.precond_weight(i));
    const double gn = detail::pdot(op, g, nrm);
    const double nn = detail::pdot(op, nrm, nrm);
    for (std::size_t i = 0; i < n; ++i) gtan[i] = g[i] - (gn / nn) * nrm[i];
    const double descent = detail::pdot(op, gtan, gtan);
    if (!(descent > 0.0)) break;

    // quasi-Newton step scale from the previous accepted move
    if (!du.empty()) {
      KahanSum sy;
      for (std::size_t i = 0; i < n; ++i)
        sy.add(2.0 * op.precond_weight(i) * du[i] * (gtan[i] - gprev[i]));
      const double ss = detail::pdot(op, du, du);
      const double s = ss / sy.get();
      if (std::isfinite(s) && s > 0.0) step = s;
    }

    bool stepped = false;
    double s = step;
    for (int bt = 0; bt <= opts.max_backtracks; ++bt, s *= opts.backtrack) {
      double mx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        trial[i] = u[i] - s * gtan[i];
        mx = std::max(mx, trial[i]);
      }
      if (!(mx > 0.0)) continue;
      const double floor = opts.clip_floor_rel * mx;
      std::size_t clipped = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (trial[i] < floor) {
          trial[i] = floor;
          ++clipped;
        }
      normalize(trial);
      const double atrial = op.energy_A(trial);
      if (!std::isfinite(atrial)) continue;
      if (atrial <= aval - opts.armijo_c * s * descent) {
        if (double(clipped) > opts.max_clip_fraction * double(n))
          throw PositivityLoss("yamabe_minimize: positivity clip exceeded its budget");
        gprev = gtan;
        du.resize(n);
        for (std::size_t i = 0; i < n; ++i) du[i] = trial[i] - u[i];
        u = trial;
        ++accepted;
        stepped = true;
        break;
      }
    }
    if (!stepped) break;  // line search exhausted: report the best iterate
  }

  YamabeSolution sol;
  if (converged) {
    sol.u.values = u;
    sol.Y_est = aval;
    sol.EL_residual = el;
    sol.iterations = accepted;
    sol.converged = true;
  } else {
    sol = best;
    sol.converged = false;
  }
  sol.u.positive = true;
  for (double v : sol.u.values)
    if (!(v > 0.0)) sol.u.positive = false;
  sol.trace_A = trace;
  return sol;
}

// ============================================================================
// Constant-curvature residual
// ============================================================================

namespace detail {

// jets of a node field, exposed as a coordinate field at exactly the sampled
// node points (keys quantized far below the node spacing)
class NodeJetField : public FieldBase<1> {
 public:
  NodeJetField(const DiscreteOperator& op, const std::vector<std::size_t>& nodes,
               const std::vector<Jet<3, 3>>& jets) {
    for (std::size_t s = 0; s < nodes.size(); ++s)
      table_[key(op.node_chart(nodes[s]), op.node_point(nodes[s]))] = jets[s];
  }

  Jet<3, 3> eval(int chart, const std::array<double, 3>& x) const override {
    auto it = table_.find(key(chart, x));
    if (it == table_.end())
      throw DomainError("node jet field queried away from its samples");
    return it->second;
  }

 private:
  using Key = std::array<std::int64_t, 4>;
  static Key key(int chart, const std::array<double, 3>& x) {
    const double q = 1048576.0;
    return {chart, std::llround(x[0] * q), std::llround(x[1] * q),
            std::llround(x[2] * q)};
  }
  std::map<Key, Jet<3, 3>> table_;
};

}  // namespace detail

struct CurvatureResidualReport {
  double transformation = 0.0;  // weighted scatter of (L u) / u^{p-1}
  double direct = 0.0;          // scatter of the recomputed Webster scalar
};

// scatter of the scalar curvature of u^{p-2} theta, measured two independent
// ways: through the conformal transformation law of L, and by rebuilding the
// rescaled structure from the jets of log u and rerunning the curvature solve.
inline CurvatureResidualReport constant_curvature_residual_report(
    const DiscreteOperator& op, const GridDensity& u) {
  validate_density(op, u, "constant_curvature_residual");
  if (!u.positive)
    throw DomainError("constant_curvature_residual: density must be positive");
  const std::size_t n = op.size();
  CurvatureResidualReport rep;

  {
    std::vector<double> lu;
    op.apply_L(u.values, lu);
    KahanSum ws, wm;
    for (std::size_t g = 0; g < n; ++g) {
      const double ui = u.values[g];
      wm.add(op.weight(g) * lu[g] / (ui * ui * ui));
      ws.add(op.weight(g));
    }
    const double mean = wm.get() / ws.get();
    KahanSum var;
    for (std::size_t g = 0; g < n; ++g) {
      const double ui = u.values[g];
      const double d = lu[g] / (ui * ui * ui) - mean;
      var.add(op.weight(g) * d * d);
    }
    rep.transformation = std::sqrt(var.get() / ws.get());
  }

  {
    std::vector<double> logu(n);
    for (std::size_t g = 0; g < n; ++g) logu[g] = std::log(u.values[g]);
    std::vector<std::size_t> nodes;
    std::vector<Jet<3, 3>> jets;
    op.conformal_jets(logu, nodes, jets);
    detail::NodeJetField field(op, nodes, jets);
    RescaledManifold<1> resc(op.base_manifold(), field);
    KahanSum sm, sv;
    std::vector<double> svals;
    svals.reserve(nodes.size());
    for (std::size_t s = 0; s < nodes.size(); ++s) {
      Invariants inv = compute_invariants(resc, op.node_chart(nodes[s]),
                                          op.node_point(nodes[s]));
      svals.push_back(inv.S);
      sm.add(inv.S);
    }
    const double mean = sm.get() / double(svals.size());
    for (double v : svals) sv.add((v - mean) * (v - mean));
    rep.direct = std::sqrt(sv.get() / double(svals.size()));
  }
  return rep;
}

inline double constant_curvature_residual(const DiscreteOperator& op,
                                          const GridDensity& u) {
  CurvatureResidualReport rep = constant_curvature_residual_report(op, u);
  return std::max(rep.transformation, rep.direct);
}

// ============================================================================
// Green functions
// ============================================================================

struct GreenFunction {
  std::size_t pole = 0;
  std::vector<double> values;   // after normalization, min = 1 exactly
  double normalization = 0.0;   // the minimum removed by the normalization
  std::vector<double> raw;      // linear-solve output, linear in the source
  double residual = 0.0;        // max |L G - rhs| outside the 2-cell pole box
  bool kernel_projected = false;
  int iterations = 0;
};

inline GreenFunction green_function(const DiscreteOperator& op, std::size_t pole,
                                    double source_scale = 1.0) {
  using Vec = std::vector<double>;
  const std::size_t n = op.size();
  if (pole >= n) throw DomainError("green_function: pole index out of range");

  // the unit point mass is spread over the positive cell block at the pole:
  // centered derivative stencils annihilate the parity checkerboards, and a
  // one-node source carries exactly those unreachable components, while the
  // block average is orthogonal to every parity mode and stays inside the
  // 2-cell neighborhood the residual contract excludes
  Vec rhs(n, 0.0);
  for (int a = 0; a <= 1; ++a)
    for (int b = 0; b <= 1; ++b)
      for (int c = 0; c <= 1; ++c) {
        const std::size_t nb = op.node_neighbor(pole, a, b, c);
        if (nb == DiscreteOperator::npos)
          throw DomainError("green_function: pole needs a full interior cell block");
        rhs[nb] += source_scale * 0.125 / op.weight(nb);
      }

  GreenFunction gf;
  gf.pole = pole;

  Vec kern;
  const bool has_kernel = op.kernel_vector(kern);
  if (has_kernel) {
    const double c = detail::wdot(op, kern, rhs) / detail::wdot(op, kern, kern);
    for (std::size_t g = 0; g < n; ++g) rhs[g] -= c * kern[g];
    gf.kernel_projected = true;
  }

  // curvature-positivity precheck on seeded directions
  {
    std::mt19937_64 rng(0x9e3779b97f4a7c15ull);
    Vec v(n), lv(n);
    for (int trial = 0; trial < 3; ++trial) {
      for (std::size_t g = 0; g < n; ++g) v[g] = detail::unit_rand(rng);
      if (has_kernel) {
        const double c = detail::wdot(op, kern, v) / detail::wdot(op, kern, kern);
        for (std::size_t g = 0; g < n; ++g) v[g] -= c * kern[g];
      }
      op.apply_L(v, lv);
      const double q = detail::wdot(op, v, lv);
      const double sc = std::sqrt(detail::wdot(op, v, v) * detail::wdot(op, lv, lv));
      if (q < -1e-8 * sc)
        throw IndefiniteOperator("green_function: negative curvature direction");
    }
  }

  Vec x(n, 0.0);
  int iterations = 0;
  if (has_kernel) {
    // conjugate gradients on the kernel complement in the quadrature metric
    Vec r = rhs, p = r, ap(n);
    double rr = detail::wdot(op, r, r);
    const double rr0 = rr;
    for (int it = 0; it < 6000; ++it) {
      op.apply_L(p, ap);
      const double pap = detail::wdot(op, p, ap);
      if (!(pap > 0.0))
        throw IndefiniteOperator("green_function: descent direction with negative energy");
      const double alpha = rr / pap;
      for (std::size_t g = 0; g < n; ++g) x[g] += alpha * p[g];
      for (std::size_t g = 0; g < n; ++g) r[g] -= alpha * ap[g];
      const double rr2 = detail::wdot(op, r, r);
      ++iterations;
      if (rr2 <= 1e-26 * rr0) break;
      for (std::size_t g = 0; g < n; ++g) p[g] = r[g] + (rr2 / rr) * p[g];
      rr = rr2;
    }
  } else {
    iterations = detail::seam_solve(op, rhs, x);
  }
  gf.iterations = iterations;
  gf.raw = x;

  // residual of the solved equation away from the 2-cell pole block
  {
    Vec lx(n);
    op.apply_L(x, lx);
    std::vector<char> nearp(n, 0);
    for (int a = -2; a <= 2; ++a)
      for (int b = -2; b <= 2; ++b)
        for (int c = -2; c <= 2; ++c) {
          const std::size_t nb = op.node_neighbor(pole, a, b, c);
          if (nb != DiscreteOperator::npos) nearp[nb] = 1;
        }
    double mx = 0.0;
    for (std::size_t g = 0; g < n; ++g)
      if (!nearp[g]) mx = std::max(mx, std::fabs(lx[g] - rhs[g]));
    gf.residual = mx;
  }

  double mn = x[0];
  for (double v : x) mn = std::min(mn, v);
  gf.normalization = mn;
  gf.values.resize(n);
  if (has_kernel) {
    for (std::size_t g = 0; g < n; ++g) gf.values[g] = x[g] - mn + 1.0;
  } else {
    if (!(mn > 0.0))
      throw DomainError("green_function: solution lost positivity before normalization");
    for (std::size_t g = 0; g < n; ++g) gf.values[g] = x[g] / mn;
  }
  return gf;
}

// ============================================================================
// Uniqueness experiment
// ============================================================================

struct UniquenessReport {
  int runs = 0;
  double max_deviation = 0.0;     // max pairwise sup-norm gap of solutions
  std::vector<double> Y_ests;
};

// positive deterministic initializer: unit background plus a few bounded
// planar waves, so every draw stays well inside the positive cone
inline GridDensity random_positive_init(const DiscreteOperator& op, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GridDensity u;
  u.values.assign(op.size(), 1.0);
  for (int wave = 0; wave < 3; ++wave) {
    const double amp = 0.15 * std::fabs(detail::unit_rand(rng));
    const double kx = 1.0 + double(rng() % 2);
    const double ky = double(rng() % 3) - 1.0;
    const double phase = 3.14159265358979324 * detail::unit_rand(rng);
    for (std::size_t g = 0; g < op.size(); ++g) {
      const auto p = op.node_point(g);
      u.values[g] += amp * std::cos(2.0 * 3.14159265358979324 * (kx * p[0] + ky * p[1]) + phase);
    }
  }
  u.positive = true;
  return u;
}

inline UniquenessReport uniqueness_experiment(const DiscreteOperator& op, int n_inits,
                                              std::uint64_t seed,
                                              const MinimizeOptions& opts = {}) {
  if (n_inits < 2) throw DomainError("uniqueness_experiment: needs at least two runs");
  std::vector<std::vector<double>> sols;
  UniquenessReport rep;
  rep.runs = n_inits;
  for (int r = 0; r < n_inits; ++r) {
    GridDensity init = random_positive_init(op, seed + 0x51ed2701ull * std::uint64_t(r));
    YamabeSolution sol = yamabe_minimize(op, init, opts);
    if (!sol.converged)
      throw NonConvergence("uniqueness_experiment: a run missed the residual target");
    sols.push_back(sol.u.values);
    rep.Y_ests.push_back(sol.Y_est);
  }
  for (std::size_t a = 0; a < sols.size(); ++a)
    for (std::size_t b = a + 1; b < sols.size(); ++b) {
      double d = 0.0;
      for (std::size_t g = 0; g < sols[a].size(); ++g)
        d = std::max(d, std::fabs(sols[a][g] - sols[b][g]));
      rep.max_deviation = std::max(rep.max_deviation, d);
    }
  return rep;
}

// ============================================================================
// Folland-Stein embedding probe
// ============================================================================

// worst ratio int |v|^p / int (|dv|^2 + |v|^2) over the battery; the
// denominator extracts the horizontal gradient energy from A by removing the
// curvature term and dividing by b_n
inline double sobolev_probe(const DiscreteOperator& op,
                            const std::vector<std::vector<double>>& battery) {
  double worst = 0.0;
  std::vector<double> svals;
  op.scalar_term(svals);
  for (const auto& v : battery) {
    if (v.size() != op.size())
      throw DomainError("sobolev_probe: battery field size does not match the operator");
    const double num = functional_B(op, v);
    KahanSum sv2, ssv2;
    for (std::size_t g = 0; g < v.size(); ++g) {
      sv2.add(op.weight(g) * v[g] * v[g]);
      ssv2.add(op.weight(g) * svals[g] * v[g] * v[g]);
    }
    const double den = (op.energy_A(v) - ssv2.get()) / b_n(1) + sv2.get();
    if (!(den > 0.0)) throw DomainError("sobolev_probe: degenerate battery field");
    worst = std::max(worst, num / den);
  }
  return worst;
}

// seeded battery of planar trigonometric fields for the embedding probe
inline std::vector<std::vector<double>> trig_battery(const DiscreteOperator& op,
                                                     int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> battery;
  for (int f = 0; f < count; ++f) {
    std::vector<double> v(op.size());
    const double c0 = detail::unit_rand(rng);
    const double a1 = detail::unit_rand(rng), a2 = detail::unit_rand(rng);
    const double k1 = 1.0 + double(rng() % 2), k2 = 1.0 + double(rng() % 2);
    const double l1 = double(rng() % 3) - 1.0, l2 = double(rng() % 3) - 1.0;
    const double p1 = 3.14159265358979324 * detail::unit_rand(rng);
    const double p2 = 3.14159265358979324 * detail::unit_rand(rng);
    for (std::size_t g = 0; g < op.size(); ++g) {
      const auto x = op.node_point(g);
      v[g] = c0 + a1 * std::cos(2.0 * 3.14159265358979324 * (k1 * x[0] + l1 * x[1]) + p1) +
             a2 * std::sin(2.0 * 3.14159265358979324 * (k2 * x[0] + l2 * x[1]) + p2);
    }
    battery.push_back(std::move(v));
  }
  return battery;
}

}  // namespace crgeo
