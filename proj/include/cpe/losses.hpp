#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cpe/errors.hpp"
#include "cpe/math.hpp"

namespace cpe {

// Class probability, validated on construction.
class Probability {
 public:
  explicit Probability(double v) : v_(v) {
    if (!(v >= 0.0 && v <= 1.0))
      throw domain_error("probability " + format_double(v) + " outside [0, 1]");
  }
  double value() const { return v_; }

 private:
  double v_;
};

struct PredictionSpace {
  double lower = -kInf;
  double upper = kInf;

  bool contains(double v) const { return v >= lower && v <= upper; }

  std::string describe() const {
    std::string s = std::isinf(lower) ? "(-inf" : "[" + format_double(lower);
    s += ", ";
    s += std::isinf(upper) ? "inf)" : format_double(upper) + "]";
    return s;
  }
};

// Set of minimizers of the conditional risk at a fixed eta: a point, a
// closed interval, a half-line, or the whole line. lo/hi use +-inf for
// unbounded ends; *_open marks an excluded finite endpoint (the 0-1 loss
// has genuinely open optimal sets).
struct OptimalSet {
  enum class Kind { point, interval, half_line, all };

  Kind kind = Kind::point;
  double lo = 0.0, hi = 0.0;
  bool lo_open = false, hi_open = false;

  static OptimalSet at(double v) { return {Kind::point, v, v, false, false}; }
  static OptimalSet closed(double a, double b) { return {Kind::interval, a, b, false, false}; }
  static OptimalSet below(double b) { return {Kind::half_line, -kInf, b, false, false}; }
  static OptimalSet above(double a) { return {Kind::half_line, a, kInf, false, false}; }
  static OptimalSet open_below(double b) { return {Kind::half_line, -kInf, b, false, true}; }
  static OptimalSet open_above(double a) { return {Kind::half_line, a, kInf, true, false}; }
  static OptimalSet whole_line() { return {Kind::all, -kInf, kInf, false, false}; }

  bool contains(double v, double tol = 0.0) const {
    if (kind == Kind::point) return std::abs(v - lo) <= tol;
    const bool above_lo = lo_open ? v > lo : v >= lo - tol;
    const bool below_hi = hi_open ? v < hi : v <= hi + tol;
    return above_lo && below_hi;
  }

  bool intersects(const OptimalSet& o, double tol = 0.0) const {
    const double a = std::max(lo, o.lo);
    const double b = std::min(hi, o.hi);
    if (a < b) return true;
    if (a > b + tol) return false;
    // touching endpoints: the common point belongs to both sets only if
    // neither side is open there
    const bool mine = contains(a, tol);
    const bool theirs = o.contains(a, tol);
    return mine && theirs;
  }

  // Representative members, used by audits and round-trip tests.
  std::vector<double> sample() const {
    switch (kind) {
      case Kind::point: return {lo};
      case Kind::interval: {
        const double w = hi - lo;
        const double a = lo_open ? lo + 1e-3 * w : lo;
        const double b = hi_open ? hi - 1e-3 * w : hi;
        return {a, (a + b) / 2.0, b};
      }
      case Kind::half_line:
        if (std::isinf(hi)) {
          const double a = lo_open ? lo + 1.0 : lo;
          return {a, a + 0.7, a + 6.9};
        } else {
          const double b = hi_open ? hi - 1.0 : hi;
          return {b, b - 0.7, b - 6.9};
        }
      case Kind::all: return {-6.9, 0.0, 6.9};
    }
    return {};
  }
};

using PartialLoss = std::function<double(double)>;

// A binary loss given by its partial losses l(+1, v) and l(-1, v) on a
// prediction space V. Closed forms, when present, bypass the numeric
// fallbacks; the test suite cross-checks the two routes.
struct LossSpec {
  std::string name;
  PartialLoss partial_pos;
  PartialLoss partial_neg;
  PredictionSpace space;
  std::function<double(double)> optimal_risk_closed;     // L*(eta), optional
  std::function<OptimalSet(double)> optimal_set_closed;  // v*(eta), optional
};

struct LinkFunction {
  std::string name;
  std::function<double(double)> forward;  // psi: [0,1] -> V
  std::function<double(double)> inverse;  // extended inverse: V -> [0,1]
};

struct CompositeLoss {
  LossSpec loss;
  LinkFunction link;
};

inline void check_prediction(const LossSpec& l, double v) {
  if (!std::isfinite(v) || !l.space.contains(v))
    throw domain_error(l.name + ": prediction " + format_double(v) +
                       " outside space " + l.space.describe());
}

// Expected loss of predicting v against labels drawn with P(Y=+1) = eta.
inline double conditional_risk(const LossSpec& l, Probability eta, double v) {
  check_prediction(l, v);
  const double e = eta.value();
  double r = 0.0;
  if (e > 0.0) r += e * l.partial_pos(v);
  if (e < 1.0) r += (1.0 - e) * l.partial_neg(v);
  return r;
}

namespace detail {

// Numeric fallbacks search the prediction space clipped to +-1e6.
inline std::pair<double, double> search_interval(const PredictionSpace& s) {
  constexpr double reach = 1e6;
  return {std::max(s.lower, -reach), std::min(s.upper, reach)};
}

inline double risk_unchecked(const LossSpec& l, double e, double v) {
  double r = 0.0;
  if (e > 0.0) r += e * l.partial_pos(v);
  if (e < 1.0) r += (1.0 - e) * l.partial_neg(v);
  return r;
}

// Coarse unimodality screen: the sampled risk must descend to its minimum
// and ascend after it, within round-off slack.
inline void require_unimodal(const LossSpec& l, double e, double lo, double hi) {
  constexpr int kProbe = 512;
  std::vector<double> vals(kProbe + 1);
  double vmin = kInf;
  int imin = 0;
  for (int i = 0; i <= kProbe; ++i) {
    const double v = lo + (hi - lo) * i / kProbe;
    vals[i] = risk_unchecked(l, e, v);
    if (vals[i] < vmin) { vmin = vals[i]; imin = i; }
  }
  const double slack = 1e-9 * (1.0 + std::abs(vmin));
  for (int i = 1; i <= imin; ++i)
    if (vals[i] > vals[i - 1] + slack)
      throw numeric_error(l.name + ": conditional risk not unimodal on " +
                          l.space.describe() + " at eta=" + format_double(e));
  for (int i = imin + 1; i <= kProbe; ++i)
    if (vals[i] < vals[i - 1] - slack)
      throw numeric_error(l.name + ": conditional risk not unimodal on " +
                          l.space.describe() + " at eta=" + format_double(e));
}

// Ternary search plus flat-region bracketing for losses without a closed-form
// optimal set. Tolerance 1e-10 on the argument.
inline OptimalSet bracketed_argmin_set(const LossSpec& l, double e) {
  auto [lo, hi] = search_interval(l.space);
  require_unimodal(l, e, lo, hi);
  auto f = [&](double v) { return risk_unchecked(l, e, v); };
  double a = lo, b = hi;
  constexpr double tol = 1e-10;
  while (b - a > tol * (1.0 + std::abs(a) + std::abs(b))) {
    const double m1 = a + (b - a) / 3.0;
    const double m2 = b - (b - a) / 3.0;
    if (f(m1) < f(m2)) b = m2; else a = m1;
  }
  const double vm = (a + b) / 2.0;
  const double fm = f(vm);
  const double flat = fm + 1e-10 * (1.0 + std::abs(fm));
  // expand each side over the region where the risk stays at the minimum
  auto edge = [&](double dir) {
    double inside = vm;
    double outside = dir < 0 ? lo : hi;
    if (f(outside) <= flat) return outside;
    for (int i = 0; i < 200 && std::abs(outside - inside) > tol; ++i) {
      const double mid = (inside + outside) / 2.0;
      if (f(mid) <= flat) inside = mid; else outside = mid;
    }
    return inside;
  };
  const double left = edge(-1.0);
  const double right = edge(+1.0);
  if (right - left <= 10.0 * tol * (1.0 + std::abs(vm))) return OptimalSet::at(vm);
  return OptimalSet::closed(left, right);
}

}  // namespace detail

// Smallest achievable conditional risk L*(eta).
inline double optimal_conditional_risk(const LossSpec& l, Probability eta) {
  if (l.optimal_risk_closed) return l.optimal_risk_closed(eta.value());
  auto [lo, hi] = detail::search_interval(l.space);
  auto m = golden_section_minimize(
      [&](double v) { return detail::risk_unchecked(l, eta.value(), v); }, lo, hi, 1e-10);
  if (!m.converged)
    throw numeric_error(l.name + ": optimal risk search did not converge, bracket width " +
                        format_double(m.width));
  return m.value;
}

inline OptimalSet optimal_set(const LossSpec& l, Probability eta) {
  if (l.optimal_set_closed) return l.optimal_set_closed(eta.value());
  return detail::bracketed_argmin_set(l, eta.value());
}

// Conditional excess risk L(eta, v) - L*(eta). Round-off negatives clamp to
// zero; anything below -1e-9 indicates an inconsistent L* and raises.
inline double conditional_excess_risk(const LossSpec& l, Probability eta, double v) {
  const double excess = conditional_risk(l, eta, v) - optimal_conditional_risk(l, eta);
  if (excess >= 0.0) return excess;
  if (excess < -1e-9)
    throw numeric_error(l.name + ": excess risk " + format_double(excess) +
                        " below -1e-9; optimal risk is inconsistent with the partials");
  return 0.0;
}

inline double link_forward(const LinkFunction& link, Probability eta) {
  return link.forward(eta.value());
}

inline double link_inverse(const LinkFunction& link, double v) { return link.inverse(v); }

// ---------------------------------------------------------------------------
// Catalog

struct CatalogEntry {
  std::string name;
  LossSpec loss;
  std::optional<LinkFunction> link;  // absent for hinge and 0-1
  bool strictly_proper = false;      // claim for the canonical composite; audited in tests
};

namespace detail {

inline double sign3(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

inline LossSpec make_sq() {
  LossSpec l;
  l.name = "sq";
  // Partials carry a factor 1/4 so that composing with the canonical link
  // 2*eta-1 yields the CPE partials (1-q)^2 and q^2; minimizers, link and
  // optimal sets are unaffected by the scaling.
  l.partial_pos = [](double v) { const double t = 1.0 - v; return 0.25 * t * t; };
  l.partial_neg = [](double v) { const double t = 1.0 + v; return 0.25 * t * t; };
  l.space = {-1.0, 1.0};
  l.optimal_risk_closed = [](double e) { return e * (1.0 - e); };
  l.optimal_set_closed = [](double e) { return OptimalSet::at(2.0 * e - 1.0); };
  return l;
}

inline LossSpec make_log() {
  LossSpec l;
  l.name = "log";
  l.partial_pos = [](double v) { return softplus(-v); };
  l.partial_neg = [](double v) { return softplus(v); };
  l.space = {};
  l.optimal_risk_closed = [](double e) { return binary_entropy(e); };
  // The risk has no minimizer over R at eta in {0,1}; the returned half-lines
  // are the clamped-endpoint convention matching the logit clamp.
  l.optimal_set_closed = [](double e) {
    if (e <= 0.0) return OptimalSet::below(logit(0.0));
    if (e >= 1.0) return OptimalSet::above(logit(1.0));
    return OptimalSet::at(logit(e));
  };
  return l;
}

inline LossSpec make_sqh() {
  LossSpec l;
  l.name = "sqh";
  // Same 1/4 normalization as sq; on [-1,1] the two losses coincide.
  l.partial_pos = [](double v) { const double t = std::max(0.0, 1.0 - v); return 0.25 * t * t; };
  l.partial_neg = [](double v) { const double t = std::max(0.0, 1.0 + v); return 0.25 * t * t; };
  l.space = {};
  l.optimal_risk_closed = [](double e) { return e * (1.0 - e); };
  l.optimal_set_closed = [](double e) {
    if (e <= 0.0) return OptimalSet::below(-1.0);
    if (e >= 1.0) return OptimalSet::above(1.0);
    return OptimalSet::at(2.0 * e - 1.0);
  };
  return l;
}

inline LossSpec make_hinge() {
  LossSpec l;
  l.name = "hinge";
  l.partial_pos = [](double v) { return std::max(0.0, 1.0 - v); };
  l.partial_neg = [](double v) { return std::max(0.0, 1.0 + v); };
  l.space = {};
  l.optimal_risk_closed = [](double e) { return 1.0 - std::abs(2.0 * e - 1.0); };
  l.optimal_set_closed = [](double e) {
    if (e <= 0.0) return OptimalSet::below(-1.0);
    if (e >= 1.0) return OptimalSet::above(1.0);
    if (e == 0.5) return OptimalSet::closed(-1.0, 1.0);
    return OptimalSet::at(sign3(2.0 * e - 1.0));
  };
  return l;
}

inline LossSpec make_zero_one() {
  LossSpec l;
  l.name = "zero-one";
  // sign(0) = 0 convention: predicting exactly 0 loses on both labels.
  l.partial_pos = [](double v) { return v <= 0.0 ? 1.0 : 0.0; };
  l.partial_neg = [](double v) { return v >= 0.0 ? 1.0 : 0.0; };
  l.space = {};
  l.optimal_risk_closed = [](double e) { return std::min(e, 1.0 - e); };
  l.optimal_set_closed = [](double e) {
    if (e > 0.5) return OptimalSet::open_above(0.0);
    if (e < 0.5) return OptimalSet::open_below(0.0);
    return OptimalSet::whole_line();
  };
  return l;
}

inline LinkFunction make_sq_link() {
  return {"2eta-1",
          [](double e) { return 2.0 * Probability(e).value() - 1.0; },
          [](double v) {
            if (!(v >= -1.0 && v <= 1.0))
              throw domain_error("sq link inverse: " + format_double(v) + " outside [-1, 1]");
            return (v + 1.0) / 2.0;
          }};
}

inline LinkFunction make_logit_link() {
  return {"logit",
          [](double e) { return logit(Probability(e).value()); },
          [](double v) { return sigmoid(v); }};
}

inline LinkFunction make_sqh_link() {
  return {"2eta-1-trunc",
          [](double e) { return 2.0 * Probability(e).value() - 1.0; },
          [](double v) { return clamp_unit((v + 1.0) / 2.0); }};
}

}  // namespace detail

inline const std::vector<CatalogEntry>& catalog() {
  static const std::vector<CatalogEntry> entries = [] {
    std::vector<CatalogEntry> v;
    v.push_back({"sq", detail::make_sq(), detail::make_sq_link(), true});
    v.push_back({"log", detail::make_log(), detail::make_logit_link(), true});
    v.push_back({"sqh", detail::make_sqh(), detail::make_sqh_link(), true});
    v.push_back({"hinge", detail::make_hinge(), std::nullopt, false});
    v.push_back({"zero-one", detail::make_zero_one(), std::nullopt, false});
    return v;
  }();
  return entries;
}

inline const CatalogEntry& catalog_entry(const std::string& name) {
  for (const auto& e : catalog())
    if (e.name == name) return e;
  std::string known;
  for (const auto& e : catalog()) known += (known.empty() ? "" : ", ") + e.name;
  throw validation_error("unknown loss \"" + name + "\" (known: " + known + ")");
}

inline CompositeLoss composite(const std::string& name) {
  const auto& e = catalog_entry(name);
  if (!e.link)
    throw unsupported_loss_error(name + " has no link function; only sq, log and sqh compose");
  return {e.loss, *e.link};
}

// The loss seen through its link: partials q -> l(y, psi(q)) on [0,1]. For
// the built-ins these are the familiar CPE forms ((1-q)^2 / q^2 for sq and
// sqh, -ln q / -ln(1-q) for log).
inline LossSpec cpe_presentation(const CompositeLoss& cl) {
  LossSpec l;
  l.name = cl.loss.name + "-cpe";
  const LossSpec base = cl.loss;
  const LinkFunction link = cl.link;
  l.partial_pos = [base, link](double q) { return base.partial_pos(link.forward(q)); };
  l.partial_neg = [base, link](double q) { return base.partial_neg(link.forward(q)); };
  l.space = {0.0, 1.0};
  const std::string& n = cl.loss.name;
  if (n == "sq" || n == "log" || n == "sqh") {
    // a proper link attains the same optimum, and v*(eta) = {eta}
    l.optimal_risk_closed = base.optimal_risk_closed;
    l.optimal_set_closed = [](double e) { return OptimalSet::at(e); };
  }
  return l;
}

// Composite excess risk at probability scale. Closed forms for the built-in
// strictly proper composites; otherwise the risk difference through the link.
inline double composite_excess(const CompositeLoss& cl, double eta, double etahat) {
  const std::string& n = cl.loss.name;
  if (n == "sq" || n == "sqh") {
    const double d = eta - etahat;
    return d * d;
  }
  if (n == "log") return kl_bernoulli(eta, etahat);
  return conditional_excess_risk(cl.loss, Probability(eta),
                                 cl.link.forward(Probability(etahat).value()));
}

inline double composite_risk(const CompositeLoss& cl, Probability eta, Probability q) {
  return conditional_risk(cl.loss, eta, cl.link.forward(q.value()));
}

// ---------------------------------------------------------------------------
// User losses from tabulated partials (piecewise linear interpolation).

inline LossSpec tabulated_loss(std::string name, std::vector<double> v,
                               std::vector<double> pos, std::vector<double> neg) {
  if (v.size() < 2 || v.size() != pos.size() || v.size() != neg.size())
    throw validation_error("tabulated loss needs >= 2 nodes and matching value arrays");
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]) || !std::isfinite(pos[i]) || !std::isfinite(neg[i]))
      throw validation_error("tabulated loss: non-finite entry at node " + std::to_string(i));
    if (i > 0 && !(v[i] > v[i - 1]))
      throw validation_error("tabulated loss: nodes must be strictly increasing");
  }
  auto nodes = std::make_shared<std::vector<double>>(std::move(v));
  auto interp = [nodes](std::shared_ptr<std::vector<double>> ys) {
    return [nodes, ys](double x) {
      const auto& vs = *nodes;
      auto it = std::upper_bound(vs.begin(), vs.end(), x);
      if (it == vs.begin()) return ys->front();
      if (it == vs.end()) return ys->back();
      const std::size_t j = static_cast<std::size_t>(it - vs.begin());
      const double t = (x - vs[j - 1]) / (vs[j] - vs[j - 1]);
      return (*ys)[j - 1] * (1.0 - t) + (*ys)[j] * t;
    };
  };
  LossSpec l;
  l.name = std::move(name);
  l.space = {nodes->front(), nodes->back()};
  l.partial_pos = interp(std::make_shared<std::vector<double>>(std::move(pos)));
  l.partial_neg = interp(std::make_shared<std::vector<double>>(std::move(neg)));
  return l;
}

}  // namespace cpe
