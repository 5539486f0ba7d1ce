#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cpe/errors.hpp"
#include "cpe/losses.hpp"
#include "cpe/math.hpp"

namespace cpe {

// First violated condition found by the audit scan. eta2/v are filled when
// the condition involves a second grid point or a concrete prediction.
struct PropernessWitness {
  std::string condition;  // "properness" | "psi-not-in-optimal-set" | "overlap" | "degenerate"
  double eta1 = 0.0;
  std::optional<double> eta2;
  std::optional<double> v;
};

struct DeltaSample {
  double eps = 0.0;
  double delta = 0.0;
};

struct PropernessReport {
  std::string loss;
  std::string link;
  double grid_step = 0.0;
  bool is_proper = false;
  bool is_strictly_proper = false;
  bool is_degenerate = false;
  std::optional<PropernessWitness> witness;
  std::vector<DeltaSample> deltas;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["loss"] = loss;
    j["link"] = link;
    j["grid_step"] = grid_step;
    j["is_proper"] = is_proper;
    j["is_strictly_proper"] = is_strictly_proper;
    j["is_degenerate"] = is_degenerate;
    if (witness) {
      nlohmann::ordered_json w;
      w["condition"] = witness->condition;
      w["eta1"] = witness->eta1;
      w["eta2"] = witness->eta2 ? nlohmann::ordered_json(*witness->eta2)
                                : nlohmann::ordered_json(nullptr);
      w["v"] = witness->v ? nlohmann::ordered_json(*witness->v)
                          : nlohmann::ordered_json(nullptr);
      j["witness"] = w;
    } else {
      j["witness"] = nullptr;
    }
    j["deltas"] = nlohmann::ordered_json::array();
    for (const auto& d : deltas) j["deltas"].push_back({{"eps", d.eps}, {"delta", d.delta}});
    return j;
  }
};

namespace detail {

inline std::vector<double> eta_grid(double grid_step) {
  if (!(grid_step > 0.0 && grid_step <= 0.1))
    throw validation_error("grid_step " + format_double(grid_step) + " outside (0, 0.1]");
  const int n = static_cast<int>(std::lround(1.0 / grid_step));
  std::vector<double> g(n + 1);
  for (int i = 0; i <= n; ++i) g[i] = std::min(1.0, i * grid_step);
  g.back() = 1.0;
  return g;
}

}  // namespace detail

// Grid audit of a composite loss. Properness is checked against the
// definition (eta minimizes q -> L(eta, psi(q)) on the grid), so a constant
// link audits proper; strictness uses the optimal-set characterization
// (psi selects from v* and the sets do not overlap on Im psi); degeneracy
// means Im psi misses v*(eta) for some eta. The first violated condition in
// that order becomes the witness.
inline PropernessReport audit_properness(const CompositeLoss& cl, double grid_step) {
  const auto grid = detail::eta_grid(grid_step);
  const int n = static_cast<int>(grid.size());

  std::vector<double> psi(n), ppos(n), pneg(n);
  std::vector<OptimalSet> sets(n);
  for (int i = 0; i < n; ++i) {
    psi[i] = cl.link.forward(grid[i]);
    ppos[i] = cl.loss.partial_pos(psi[i]);
    pneg[i] = cl.loss.partial_neg(psi[i]);
    sets[i] = optimal_set(cl.loss, Probability(grid[i]));
  }

  PropernessReport rep;
  rep.loss = cl.loss.name;
  rep.link = cl.link.name;
  rep.grid_step = grid_step;

  constexpr double risk_tol = 1e-12;
  constexpr double set_tol = 1e-9;
  auto note = [&](PropernessWitness w) {
    if (!rep.witness) rep.witness = std::move(w);
  };

  rep.is_proper = true;
  for (int i = 0; i < n && rep.is_proper; ++i) {
    const double e = grid[i];
    const double self = e * ppos[i] + (1.0 - e) * pneg[i];
    for (int j = 0; j < n; ++j) {
      if (self > e * ppos[j] + (1.0 - e) * pneg[j] + risk_tol) {
        rep.is_proper = false;
        note({"properness", e, grid[j], psi[j]});
        break;
      }
    }
  }

  bool psi_in_vstar = true;
  for (int i = 0; i < n; ++i) {
    if (!sets[i].contains(psi[i], set_tol)) {
      psi_in_vstar = false;
      note({"psi-not-in-optimal-set", grid[i], std::nullopt, psi[i]});
      break;
    }
  }

  bool overlap = false;
  for (int j = 0; j < n && !overlap; ++j) {
    int first_hit = -1;
    for (int i = 0; i < n; ++i) {
      if (!sets[i].contains(psi[j], set_tol)) continue;
      if (first_hit < 0) {
        first_hit = i;
      } else {
        overlap = true;
        note({"overlap", grid[first_hit], grid[i], psi[j]});
        break;
      }
    }
  }

  for (int i = 0; i < n; ++i) {
    bool met = false;
    for (int j = 0; j < n && !met; ++j) met = sets[i].contains(psi[j], set_tol);
    if (!met) {
      rep.is_degenerate = true;
      note({"degenerate", grid[i], std::nullopt, std::nullopt});
      break;
    }
  }

  rep.is_strictly_proper = rep.is_proper && psi_in_vstar && !overlap && !rep.is_degenerate;
  return rep;
}

// v*-derived candidate links for losses without a canonical link; the bias
// picks a selection inside set-valued v*. For an entry with a link, the
// canonical link is the only candidate.
inline std::vector<LinkFunction> candidate_links(const CatalogEntry& entry) {
  if (entry.link) return {*entry.link};
  std::vector<LinkFunction> out;
  const LossSpec loss = entry.loss;
  for (const std::string bias : {"low", "mid", "high"}) {
    auto fwd = [loss, bias](double e) {
      const OptimalSet s = optimal_set(loss, Probability(e));
      switch (s.kind) {
        case OptimalSet::Kind::point: return s.lo;
        case OptimalSet::Kind::interval:
          return bias == "low" ? s.lo : bias == "high" ? s.hi : (s.lo + s.hi) / 2.0;
        case OptimalSet::Kind::half_line:
          // finite end; step one unit inside when that end is excluded
          if (std::isinf(s.hi)) return s.lo_open ? s.lo + 1.0 : s.lo;
          return s.hi_open ? s.hi - 1.0 : s.hi;
        case OptimalSet::Kind::all:
          return bias == "low" ? -1.0 : bias == "high" ? 1.0 : 0.0;
      }
      return 0.0;
    };
    out.push_back({"vstar-" + bias, fwd,
                   [](double) -> double {
                     throw unsupported_loss_error("candidate links have no inverse");
                   }});
  }
  return out;
}

// Audits every candidate link of a catalog entry (the canonical link when
// one exists). Table 2's "-" entries show up as: no candidate audits
// strictly proper.
inline std::vector<PropernessReport> audit_entry(const std::string& name, double grid_step) {
  const auto& entry = catalog_entry(name);
  std::vector<PropernessReport> reports;
  for (const auto& link : candidate_links(entry))
    reports.push_back(audit_properness({entry.loss, link}, grid_step));
  return reports;
}

struct DisjointCoverResult {
  bool disjoint = false;
  bool covers = false;
  std::optional<PropernessWitness> witness;  // "overlap" pair or "gap" with the uncovered v

  bool ok() const { return disjoint && covers; }
};

namespace detail {

enum class SetPos { below, contains, above };

inline SetPos position(const OptimalSet& s, double v, double tol) {
  if (s.contains(v, tol)) return SetPos::contains;
  if (s.hi < v || (s.hi == v && s.hi_open)) return SetPos::below;
  return SetPos::above;
}

// Does some v*(eta), eta in [0,1], contain v? Assumes the family moves
// monotonically with eta (checked by the caller); bisects on eta down to
// adjacent doubles, since the family can be arbitrarily steep (logit near
// its clamp). When no representable eta hits v, the straddle gap between
// the two adjacent-eta sets decides: one quantization step of a continuous
// family passes, a jump of the set-valued map (above 1e-3 relative) fails.
inline bool family_covers(const LossSpec& loss, double v, double tol) {
  auto pos = [&](double e) { return position(optimal_set(loss, Probability(e)), v, tol); };
  SetPos a = pos(0.0), b = pos(1.0);
  if (a == SetPos::contains || b == SetPos::contains) return true;
  if (a == SetPos::above || b == SetPos::below) return false;  // v outside the family's range
  double lo = 0.0, hi = 1.0;
  while (true) {
    const double m = lo + (hi - lo) / 2.0;
    if (m <= lo || m >= hi) break;
    const SetPos p = pos(m);
    if (p == SetPos::contains) return true;
    if (p == SetPos::below) lo = m; else hi = m;
  }
  if (pos(lo) == SetPos::contains || pos(hi) == SetPos::contains) return true;
  const OptimalSet below_set = optimal_set(loss, Probability(lo));
  const OptimalSet above_set = optimal_set(loss, Probability(hi));
  return above_set.lo - below_set.hi <= 1e-3 * (1.0 + std::abs(v));
}

}  // namespace detail

// Checks that the optimal sets tile the prediction space: pairwise disjoint
// across the eta-grid, and jointly covering. Coverage is certified on a
// value mesh (set endpoints, their midpoints, and a uniform mesh over the
// space clipped to [-50, 50]); each mesh point is matched to a continuum eta
// by monotone bisection, so steep families (logit near the ends) resolve
// correctly. Requires the set family to move monotonically with eta.
inline DisjointCoverResult check_disjoint_cover(const LossSpec& loss, double grid_step) {
  const auto grid = detail::eta_grid(grid_step);
  const int n = static_cast<int>(grid.size());
  std::vector<OptimalSet> sets(n);
  for (int i = 0; i < n; ++i) sets[i] = optimal_set(loss, Probability(grid[i]));

  constexpr double set_tol = 1e-9;
  for (int i = 1; i < n; ++i)
    if (sets[i].lo < sets[i - 1].lo - set_tol || sets[i].hi < sets[i - 1].hi - set_tol)
      throw numeric_error(loss.name + ": optimal sets are not monotone in eta; "
                          "cover check unsupported");

  DisjointCoverResult res;
  res.disjoint = true;
  for (int i = 0; i < n && res.disjoint; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (sets[i].intersects(sets[j], 0.0)) {
        res.disjoint = false;
        const double a = std::max(sets[i].lo, sets[j].lo);
        const double v = std::isfinite(a) ? a : std::min(sets[i].hi, sets[j].hi);
        res.witness = PropernessWitness{"overlap", grid[i], grid[j], v};
        break;
      }
    }
  }

  const double lo = std::max(loss.space.lower, -50.0);
  const double hi = std::min(loss.space.upper, 50.0);
  std::vector<double> mesh;
  constexpr int kMesh = 2000;
  for (int k = 0; k <= kMesh; ++k) mesh.push_back(lo + (hi - lo) * k / kMesh);
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(sets[i].lo)) mesh.push_back(sets[i].lo);
    if (std::isfinite(sets[i].hi)) mesh.push_back(sets[i].hi);
    if (i + 1 < n && std::isfinite(sets[i].hi) && std::isfinite(sets[i + 1].lo))
      mesh.push_back((sets[i].hi + sets[i + 1].lo) / 2.0);
  }

  res.covers = true;
  for (double v : mesh) {
    if (v < lo || v > hi) continue;
    if (!detail::family_covers(loss, v, set_tol)) {
      res.covers = false;
      if (!res.witness) res.witness = PropernessWitness{"gap", -1.0, std::nullopt, v};
      break;
    }
  }
  return res;
}

namespace detail {

inline bool builtin_strict(const std::string& name) {
  return name == "sq" || name == "log" || name == "sqh";
}

// The closed-form shortcuts assume the canonical link, not just the loss.
inline bool builtin_strict(const CompositeLoss& cl) {
  return (cl.loss.name == "sq" && cl.link.name == "2eta-1") ||
         (cl.loss.name == "log" && cl.link.name == "logit") ||
         (cl.loss.name == "sqh" && cl.link.name == "2eta-1-trunc");
}

inline void require_strictly_proper(const CompositeLoss& cl, double audit_step) {
  if (builtin_strict(cl)) return;
  const auto rep = audit_properness(cl, std::max(audit_step, 1e-3));
  if (!rep.is_strictly_proper)
    throw unsupported_loss_error(cl.loss.name +
                                 " is not strictly proper under link " + cl.link.name);
}

// Excess risk of predicting psi(q) against eta, at probability scale.
struct PairExcess {
  const CompositeLoss* cl;
  bool closed;

  explicit PairExcess(const CompositeLoss& c)
      : cl(&c), closed(builtin_strict(c)) {}

  double operator()(double eta, double q) const {
    if (closed) return composite_excess(*cl, eta, q);
    return conditional_risk(cl->loss, Probability(eta), cl->link.forward(q)) -
           optimal_conditional_risk(cl->loss, Probability(eta));
  }
};

}  // namespace detail

// Largest admissible delta(eps) on the grid: the smallest excess risk among
// pairs separated by at least eps. For the built-ins the excess is monotone
// in |eta - etahat| for fixed eta, so only the boundary separation needs
// scanning; user composites get the full pair scan.
inline double estimate_delta(const CompositeLoss& cl, double eps, double grid_step) {
  if (!(eps > 0.0 && eps <= 1.0))
    throw validation_error("eps " + format_double(eps) + " outside (0, 1]");
  if (!(grid_step > 0.0) || grid_step > eps / 10.0 + 1e-18)
    throw validation_error("grid_step " + format_double(grid_step) +
                           " must be positive and at most eps/10");
  detail::require_strictly_proper(cl, grid_step);

  const auto grid = detail::eta_grid(grid_step);
  const int n = static_cast<int>(grid.size());
  const int k_min = static_cast<int>(std::ceil(eps / grid_step - 1e-9));
  const detail::PairExcess excess(cl);

  double best = kInf;
  if (excess.closed) {
    for (int i = 0; i + k_min < n; ++i) {
      best = std::min(best, excess(grid[i], grid[i + k_min]));
      best = std::min(best, excess(grid[i + k_min], grid[i]));
    }
  } else {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (std::abs(grid[i] - grid[j]) >= eps - 1e-12)
          best = std::min(best, excess(grid[i], grid[j]));
  }
  if (!std::isfinite(best))
    throw validation_error("no grid pair with separation >= eps; check eps and grid_step");
  if (best < -1e-9)
    throw numeric_error("negative excess " + format_double(best) + " in delta estimation");
  return std::max(best, 0.0);
}

// Paired (eps, delta) samples. estimate_delta fills eps -> delta(eps);
// estimate_modulus fills omega(t) -> t. In both orientations the pair
// (epsilons[k], deltas[k]) reads: excess below deltas[k] forces a
// probability error below epsilons[k] (up to grid error).
struct ModulusEstimate {
  std::vector<double> epsilons;
  std::vector<double> deltas;
  double grid_step = 0.0;
};

inline ModulusEstimate estimate_deltas(const CompositeLoss& cl,
                                       const std::vector<double>& epsilons,
                                       double grid_step) {
  ModulusEstimate m;
  m.grid_step = grid_step;
  for (double eps : epsilons) {
    m.epsilons.push_back(eps);
    m.deltas.push_back(estimate_delta(cl, eps, grid_step));
  }
  return m;
}

// Empirical modulus of continuity: for each threshold t, the largest
// |eta - etahat| among grid pairs whose excess risk stays within t.
inline ModulusEstimate estimate_modulus(const CompositeLoss& cl,
                                        const std::vector<double>& t_grid,
                                        double grid_step = 1e-3) {
  for (double t : t_grid)
    if (!(t >= 0.0) || !std::isfinite(t))
      throw validation_error("modulus threshold " + format_double(t) + " must be >= 0");
  detail::require_strictly_proper(cl, grid_step);

  const auto grid = detail::eta_grid(grid_step);
  const int n = static_cast<int>(grid.size());
  const detail::PairExcess excess(cl);

  ModulusEstimate m;
  m.grid_step = grid_step;
  for (double t : t_grid) {
    double omega = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (excess(grid[i], grid[j]) <= t + 1e-15)
          omega = std::max(omega, std::abs(grid[i] - grid[j]));
    m.epsilons.push_back(omega);
    m.deltas.push_back(t);
  }
  return m;
}

// sup over pairs of (eta - etahat)^2 / excess. The supremum is approached
// only in the limit eta -> etahat -> 1/2 for log, so the argmax neighborhood
// is refined three times by a factor 10; excess risks are evaluated in long
// double to keep the ratio meaningful at 1e-6 separations.
inline double verify_strong_constant(const CompositeLoss& cl, double grid_step) {
  if (!(grid_step > 0.0 && grid_step <= 1e-3))
    throw validation_error("grid_step " + format_double(grid_step) + " outside (0, 1e-3]");
  if (!detail::builtin_strict(cl))
    throw unsupported_loss_error("strong-constant check supports the built-in strictly "
                                 "proper losses under their canonical links only");
  const bool is_log = cl.loss.name == "log";

  auto ratio = [&](double eta, double etahat) -> long double {
    const long double d = static_cast<long double>(eta) - etahat;
    if (d == 0.0L) return -1.0L;
    const long double ex =
        is_log ? kl_bernoulli_l(eta, etahat) : d * d;  // sq/sqh: ratio is identically 1
    if (!(ex > 0.0L)) return -1.0L;
    return d * d / ex;
  };

  long double best = -1.0L;
  double be = 0.5, bh = 0.5;
  // pairs closer than the current resolution are excluded: rounding can
  // produce near-coincident points whose excess risk cancels to nothing,
  // and they belong to a deeper refinement level anyway
  auto scan = [&](double lo_e, double lo_h, int count, double step) {
    for (int i = 0; i < count; ++i) {
      const double ec = std::clamp(lo_e + i * step, 0.0, 1.0);
      for (int j = 0; j < count; ++j) {
        const double hc = std::clamp(lo_h + j * step, 0.0, 1.0);
        if (std::abs(ec - hc) < 0.5 * step) continue;
        const long double r = ratio(ec, hc);
        if (r > best) { best = r; be = ec; bh = hc; }
      }
    }
  };

  scan(0.0, 0.0, static_cast<int>(std::lround(1.0 / grid_step)) + 1, grid_step);
  double step = grid_step;
  for (int level = 0; level < 3; ++level) {
    step /= 10.0;
    scan(be - 10.0 * step, bh - 10.0 * step, 21, step);
  }
  return static_cast<double>(best);
}

// Bregman divergence of the generator -L* evaluated at probability scale.
// Closed forms for the built-ins; central finite difference (h = 1e-6) on
// the generator derivative otherwise.
inline double bregman_divergence(const CompositeLoss& cl, Probability eta, Probability eta_hat) {
  const double e = eta.value();
  const double h = eta_hat.value();
  const std::string& n = cl.loss.name;
  if (n == "sq" || n == "sqh") {
    const double d = e - h;
    return d * d;
  }
  if (n == "log") {
    if (h <= 0.0 || h >= 1.0)
      throw domain_error("log Bregman generator is not differentiable at eta_hat = " +
                         format_double(h));
    return kl_bernoulli(e, h);
  }
  constexpr double fd = 1e-6;
  if (h < fd || h > 1.0 - fd)
    throw domain_error("finite-difference Bregman needs eta_hat in [" + format_double(fd) +
                       ", " + format_double(1.0 - fd) + "]");
  auto gen = [&](double q) { return -optimal_conditional_risk(cl.loss, Probability(q)); };
  const double slope = (gen(h + fd) - gen(h - fd)) / (2.0 * fd);
  const double d = gen(e) - gen(h) - slope * (e - h);
  return std::max(d, 0.0);
}

// Max absolute gap between the composite excess risk (margin route, through
// the link) and the Bregman divergence of -L* (closed route) on an interior
// grid. Numerically verifies the identity between the two.
inline double bregman_identity_gap(const CompositeLoss& cl, double grid_step = 1e-2,
                                   double lo = 0.01, double hi = 0.99) {
  if (!(grid_step > 0.0 && lo < hi))
    throw validation_error("bad Bregman grid parameters");
  double worst = 0.0;
  for (double e = lo; e <= hi + 1e-12; e += grid_step) {
    const double L_star = optimal_conditional_risk(cl.loss, Probability(e));
    for (double q = lo; q <= hi + 1e-12; q += grid_step) {
      const double margin_excess =
          conditional_risk(cl.loss, Probability(e), cl.link.forward(q)) - L_star;
      const double breg = bregman_divergence(cl, Probability(e), Probability(q));
      worst = std::max(worst, std::abs(margin_excess - breg));
    }
  }
  return worst;
}

}  // namespace cpe
