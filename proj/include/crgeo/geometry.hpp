/// @file geometry.hpp
/// @brief Base abstractions: manifolds presented by charts with jet-valued
///        structure data (contact form + holomorphic frame), scalar fields,
///        and point maps.
///
/// A manifold of CR dimension n is presented in coordinates of dimension
/// D = 2n+1. Every chart evaluator returns order-3 jets; downstream stages
/// consume what they need and drop orders as they differentiate.
#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>

#include "crgeo/jets.hpp"
#include "crgeo/linalg.hpp"

namespace crgeo {

template <int n>
struct StructureJets {
  static constexpr int D = 2 * n + 1;
  using J3 = Jet<D, 3>;
  using CJ3 = Cx<J3>;
  std::array<J3, D> theta{};                 // contact form, coordinate components
  std::array<std::array<CJ3, D>, n> W{};     // holomorphic frame vectors' components
};

template <int n>
class ManifoldBase {
 public:
  static constexpr int D = 2 * n + 1;
  using Pt = std::array<double, D>;
  using J3 = Jet<D, 3>;

  virtual ~ManifoldBase() = default;
  virtual std::string name() const = 0;
  virtual int chart_count() const { return 1; }
  virtual bool in_domain(int chart, const Pt& x) const = 0;
  virtual StructureJets<n> structure(int chart, const Pt& x) const = 0;

  // Express a point given in chart `from` in the coordinates of chart `to`.
  virtual Pt transition(int from, int to, const Pt& x) const {
    if (from == to) return x;
    throw DomainError(name() + ": no transition between charts");
  }

  // Normal-coordinate map: eta expressed in normal coordinates centred at xi.
  // Available on the model manifolds; derived structures have none.
  virtual Pt theta_map(int chart_xi, const Pt& xi, int chart_eta, const Pt& eta) const {
    (void)chart_xi;
    (void)xi;
    (void)chart_eta;
    (void)eta;
    throw DomainError(name() + ": no normal-coordinate map");
  }
};

template <int n>
class FieldBase {
 public:
  static constexpr int D = 2 * n + 1;
  using Pt = std::array<double, D>;
  using J3 = Jet<D, 3>;

  virtual ~FieldBase() = default;
  virtual J3 eval(int chart, const Pt& x) const = 0;

  double value(int chart, const Pt& x) const { return eval(chart, x).val(); }
};

// Field defined by a jet-arithmetic formula in chart coordinates.
template <int n>
class JetField : public FieldBase<n> {
 public:
  static constexpr int D = 2 * n + 1;
  using J3 = Jet<D, 3>;
  using Pt = std::array<double, D>;
  using Fn = std::function<J3(int, const std::array<J3, D>&)>;

  explicit JetField(Fn fn) : fn_(std::move(fn)) {}

  J3 eval(int chart, const Pt& x) const override {
    std::array<J3, D> c;
    for (int d = 0; d < D; ++d) c[d] = J3::coordinate(d, x[d]);
    return fn_(chart, c);
  }

 private:
  Fn fn_;
};

// A smooth map between (possibly identical) manifolds, with jets of its
// coordinate expression; enough to pull forms back through one derivative.
template <int n>
class MapBase {
 public:
  static constexpr int D = 2 * n + 1;
  using Pt = std::array<double, D>;
  using J3 = Jet<D, 3>;

  struct Image {
    int chart;
    std::array<J3, D> comp;
    Pt point() const {
      Pt p;
      for (int d = 0; d < D; ++d) p[d] = comp[d].val();
      return p;
    }
  };

  virtual ~MapBase() = default;
  virtual Image eval(int chart, const Pt& x) const = 0;
};

}  // namespace crgeo
