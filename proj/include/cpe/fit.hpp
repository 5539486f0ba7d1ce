#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "cpe/errors.hpp"
#include "cpe/losses.hpp"
#include "cpe/math.hpp"
#include "cpe/problem.hpp"

namespace cpe {

// Squared loss fits in two modes: truncated leaves the linear model
// unconstrained and clamps only at inversion (Table-1 reading, reproduces
// the truncation pathology); constrained minimizes the risk of the
// box-clipped predictions so the fit honors V = [-1, 1].
enum class SqMode { truncated, constrained };

inline std::string to_string(SqMode m) {
  return m == SqMode::truncated ? "truncated" : "constrained";
}

inline SqMode sq_mode_from_string(const std::string& s) {
  if (s == "truncated") return SqMode::truncated;
  if (s == "constrained") return SqMode::constrained;
  throw validation_error("unknown sq mode \"" + s + "\" (truncated | constrained)");
}

struct SolverReport {
  std::string method;
  int iterations = 0;
  double final_gradient_norm = 0.0;  // sup-norm of the risk gradient (or normal-equation residual)
  std::vector<std::string> warnings;
};

struct FittedModel {
  std::vector<double> weights;
  std::string loss_name;
  std::string feature_map_name = "affine";
  SqMode sq_mode = SqMode::truncated;
  SolverReport solver;

  double predict(const std::vector<double>& x) const {
    const auto phi = feature_map(feature_map_name).apply(x);
    if (phi.size() != weights.size())
      throw validation_error("feature dimension " + std::to_string(phi.size()) +
                             " does not match weight dimension " +
                             std::to_string(weights.size()));
    double f = 0.0;
    for (std::size_t i = 0; i < phi.size(); ++i) f += weights[i] * phi[i];
    return f;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["weights"] = weights;
    j["loss"] = loss_name;
    j["feature_map"] = feature_map_name;
    if (loss_name == "sq") j["mode"] = to_string(sq_mode);
    return j;
  }

  static FittedModel from_json(const nlohmann::ordered_json& j) {
    FittedModel m;
    try {
      m.weights = j.at("weights").get<std::vector<double>>();
      m.loss_name = j.at("loss").get<std::string>();
      m.feature_map_name = j.value("feature_map", "affine");
      if (j.contains("mode")) {
        if (m.loss_name != "sq")
          throw validation_error("\"mode\" applies to the sq loss only");
        m.sq_mode = sq_mode_from_string(j.at("mode").get<std::string>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw validation_error(std::string("malformed model JSON: ") + e.what());
    }
    composite(m.loss_name);  // rejects unknown and linkless losses
    feature_map(m.feature_map_name);
    for (double w : m.weights)
      if (!std::isfinite(w)) throw validation_error("model weights must be finite");
    return m;
  }

  static FittedModel load(const std::string& path) {
    return from_json(load_json_file(path));
  }
};

namespace detail {

constexpr double kGradTol = 1e-10;
constexpr int kMaxIter = 100000;
constexpr double kWeightNormCap = 1e3;
constexpr double kRidge = 1e-10;

// Weighted CPE data: minimize sum_i p_i [eta_i l(+1, f_i) + (1-eta_i) l(-1, f_i)]
// over linear models f = Phi w. Both the true risk (problem marginals and
// posteriors) and the empirical risk (aggregated sample frequencies) land in
// this form.
struct WeightedCpe {
  Eigen::MatrixXd Phi;
  Eigen::VectorXd p;
  Eigen::VectorXd eta;
};

inline WeightedCpe assemble(const DiscreteProblem& problem) {
  problem.validate();
  const auto& fm = feature_map(problem.feature_map_name);
  const auto n = static_cast<Eigen::Index>(problem.support.size());
  WeightedCpe d;
  d.p.resize(n);
  d.eta.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto phi = fm.apply(problem.support[i].x);
    if (i == 0) d.Phi.resize(n, static_cast<Eigen::Index>(phi.size()));
    for (Eigen::Index k = 0; k < d.Phi.cols(); ++k) d.Phi(i, k) = phi[k];
    d.p(i) = problem.support[i].p;
    d.eta(i) = problem.support[i].eta;
  }
  return d;
}

inline WeightedCpe aggregate(const LabeledSample& sample, const std::string& feature_map_name) {
  if (sample.pairs.empty()) throw validation_error("sample is empty");
  std::map<std::vector<double>, std::pair<std::size_t, std::size_t>> groups;  // x -> (count, positives)
  for (const auto& [x, y] : sample.pairs) {
    if (y != 1 && y != -1) throw validation_error("labels must be +1 or -1");
    auto& g = groups[x];
    ++g.first;
    if (y == 1) ++g.second;
  }
  const auto& fm = feature_map(feature_map_name);
  const auto n = static_cast<Eigen::Index>(groups.size());
  const double total = static_cast<double>(sample.pairs.size());
  WeightedCpe d;
  d.p.resize(n);
  d.eta.resize(n);
  Eigen::Index i = 0;
  for (const auto& [x, g] : groups) {
    const auto phi = fm.apply(x);
    if (i == 0) d.Phi.resize(n, static_cast<Eigen::Index>(phi.size()));
    if (static_cast<Eigen::Index>(phi.size()) != d.Phi.cols())
      throw validation_error("sample points have mismatched dimensions");
    for (Eigen::Index k = 0; k < d.Phi.cols(); ++k) d.Phi(i, k) = phi[k];
    d.p(i) = g.first / total;
    d.eta(i) = static_cast<double>(g.second) / static_cast<double>(g.first);
    ++i;
  }
  return d;
}

// Largest curvature of the weighted quadratic part; the composite sq/sqh
// risks have per-point second derivative at most 1/2 in f.
inline double quadratic_lipschitz(const WeightedCpe& d) {
  const Eigen::MatrixXd gram =
      d.Phi.transpose() * d.p.asDiagonal() * d.Phi;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  return 0.5 * std::max(es.eigenvalues().maxCoeff(), 1e-12);
}

inline std::pair<Eigen::VectorXd, SolverReport> solve_sq(const WeightedCpe& d) {
  const Eigen::VectorXd z = 2.0 * d.eta.array() - 1.0;
  const Eigen::VectorXd sqrt_p = d.p.array().sqrt();
  const Eigen::MatrixXd A = sqrt_p.asDiagonal() * d.Phi;
  const Eigen::VectorXd b = sqrt_p.cwiseProduct(z);
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
  const Eigen::VectorXd w = cod.solve(b);  // minimum-norm least squares

  SolverReport rep;
  rep.method = "wls-closed-form";
  if (cod.rank() < d.Phi.cols())
    rep.warnings.push_back("rank-deficient design (rank " + std::to_string(cod.rank()) +
                           " of " + std::to_string(d.Phi.cols()) +
                           "); returning the minimum-norm solution");
  const Eigen::VectorXd grad =
      0.5 * d.Phi.transpose() * d.p.cwiseProduct(Eigen::VectorXd(d.Phi * w - z));
  rep.final_gradient_norm = grad.lpNorm<Eigen::Infinity>();
  if (rep.final_gradient_norm > kGradTol)
    throw numeric_error("sq normal equations violated: residual " +
                        format_double(rep.final_gradient_norm));
  return {w, rep};
}

inline std::pair<Eigen::VectorXd, SolverReport> solve_log(const WeightedCpe& d) {
  const Eigen::Index dim = d.Phi.cols();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(dim);

  auto risk = [&](const Eigen::VectorXd& wt) {
    const Eigen::VectorXd f = d.Phi * wt;
    double r = 0.0;
    for (Eigen::Index i = 0; i < f.size(); ++i)
      r += d.p(i) * (d.eta(i) * softplus(-f(i)) + (1.0 - d.eta(i)) * softplus(f(i)));
    return r;
  };

  SolverReport rep;
  rep.method = "damped-newton";
  for (int it = 0; it < kMaxIter; ++it) {
    const Eigen::VectorXd f = d.Phi * w;
    Eigen::VectorXd sig(f.size()), hw(f.size());
    for (Eigen::Index i = 0; i < f.size(); ++i) {
      sig(i) = sigmoid(f(i));
      hw(i) = d.p(i) * sig(i) * (1.0 - sig(i));
    }
    const Eigen::VectorXd grad =
        d.Phi.transpose() * d.p.cwiseProduct(Eigen::VectorXd(sig - d.eta));
    rep.iterations = it;
    rep.final_gradient_norm = grad.lpNorm<Eigen::Infinity>();
    if (rep.final_gradient_norm <= kGradTol) return {w, rep};

    Eigen::MatrixXd hess = d.Phi.transpose() * hw.asDiagonal() * d.Phi;
    hess.diagonal().array() += kRidge;
    const Eigen::VectorXd step = hess.ldlt().solve(-grad);
    const double slope = grad.dot(step);

    const double base = risk(w);
    double t = 1.0;
    // Once the required Armijo decrease falls below value rounding the test
    // is noise; the full Newton step is contractive in that terminal regime.
    if (1e-4 * std::abs(slope) > 1e-14 * std::abs(base)) {
      while (t > 1e-12 && risk(w + t * step) > base + 1e-4 * t * slope) t *= 0.5;
      if (t <= 1e-12) t = 1.0;
    }
    w += t * step;

    if (w.norm() > kWeightNormCap) {
      w *= kWeightNormCap / w.norm();
      rep.iterations = it + 1;
      rep.final_gradient_norm =
          (d.Phi.transpose() *
           d.p.cwiseProduct(Eigen::VectorXd((d.Phi * w).unaryExpr([](double v) {
             return sigmoid(v);
           }) - d.eta)))
              .lpNorm<Eigen::Infinity>();
      rep.warnings.push_back("weight norm capped at 1e3 (risk decreases toward infinity; "
                             "probability estimates saturate)");
      return {w, rep};
    }
  }
  throw numeric_error("log solver did not reach gradient norm 1e-10 in 1e5 iterations "
                      "(achieved " + format_double(rep.final_gradient_norm) + ")");
}

// Plain gradient descent with the Lipschitz step; shared by sqh and the
// constrained sq mode, whose gradients only differ in the active-set rule.
template <class GradFn>
std::pair<Eigen::VectorXd, SolverReport> descend(const WeightedCpe& d, Eigen::VectorXd w,
                                                 const std::string& method, GradFn&& grad_at) {
  const double step = 1.0 / quadratic_lipschitz(d);
  SolverReport rep;
  rep.method = method;
  for (int it = 0; it < kMaxIter; ++it) {
    const Eigen::VectorXd grad = grad_at(w);
    rep.iterations = it;
    rep.final_gradient_norm = grad.lpNorm<Eigen::Infinity>();
    if (rep.final_gradient_norm <= kGradTol) return {w, rep};
    w -= step * grad;
  }
  throw numeric_error(method + " did not reach gradient norm 1e-10 in 1e5 iterations "
                      "(achieved " + format_double(rep.final_gradient_norm) + ")");
}

inline std::pair<Eigen::VectorXd, SolverReport> solve_sqh(const WeightedCpe& d) {
  auto grad_at = [&](const Eigen::VectorXd& w) {
    const Eigen::VectorXd f = d.Phi * w;
    Eigen::VectorXd g(f.size());
    for (Eigen::Index i = 0; i < f.size(); ++i)
      g(i) = d.p(i) * 0.5 *
             ((1.0 - d.eta(i)) * std::max(0.0, 1.0 + f(i)) -
              d.eta(i) * std::max(0.0, 1.0 - f(i)));
    return Eigen::VectorXd(d.Phi.transpose() * g);
  };
  return descend(d, Eigen::VectorXd::Zero(d.Phi.cols()), "sqh-lipschitz-gd", grad_at);
}

inline std::pair<Eigen::VectorXd, SolverReport> solve_sq_constrained(const WeightedCpe& d) {
  auto [w0, rep0] = solve_sq(d);
  const Eigen::VectorXd z = 2.0 * d.eta.array() - 1.0;
  auto grad_at = [&](const Eigen::VectorXd& w) {
    const Eigen::VectorXd f = d.Phi * w;
    Eigen::VectorXd g(f.size());
    for (Eigen::Index i = 0; i < f.size(); ++i) {
      const double c = std::clamp(f(i), -1.0, 1.0);
      g(i) = std::abs(f(i)) <= 1.0 ? d.p(i) * 0.5 * (c - z(i)) : 0.0;
    }
    return Eigen::VectorXd(d.Phi.transpose() * g);
  };
  // started from the truncated solution the clipped objective descends into
  // the optimal face; from afar it has flat saturated regions
  auto [w, rep] = descend(d, w0, "sq-clipped-gd", grad_at);
  for (const auto& warning : rep0.warnings) rep.warnings.push_back(warning);
  return {std::move(w), std::move(rep)};
}

inline FittedModel fit_weighted(const WeightedCpe& data, const std::string& loss_name,
                                const std::string& feature_map_name, SqMode mode) {
  composite(loss_name);  // rejects hinge/zero-one and unknown names up front
  std::pair<Eigen::VectorXd, SolverReport> solved;
  if (loss_name == "sq")
    solved = mode == SqMode::truncated ? detail::solve_sq(data)
                                       : detail::solve_sq_constrained(data);
  else if (loss_name == "log")
    solved = detail::solve_log(data);
  else
    solved = detail::solve_sqh(data);

  FittedModel m;
  m.weights.assign(solved.first.data(), solved.first.data() + solved.first.size());
  m.loss_name = loss_name;
  m.feature_map_name = feature_map_name;
  m.sq_mode = mode;
  m.solver = std::move(solved.second);
  return m;
}

}  // namespace detail

// Exact minimizer of the population risk over the linear hypothesis class.
inline FittedModel true_risk_minimizer(const DiscreteProblem& problem,
                                       const std::string& loss_name,
                                       SqMode mode = SqMode::truncated) {
  return detail::fit_weighted(detail::assemble(problem), loss_name,
                              problem.feature_map_name, mode);
}

inline FittedModel empirical_risk_minimizer(const LabeledSample& sample,
                                            const std::string& loss_name,
                                            const std::string& feature_map_name = "affine",
                                            SqMode mode = SqMode::truncated) {
  return detail::fit_weighted(detail::aggregate(sample, feature_map_name), loss_name,
                              feature_map_name, mode);
}

// The class-probability estimate psi^{-1}(f(x)). Both sq modes clamp at
// inversion; constrained mode honors the box only at the fitted support.
inline double estimate_eta(const FittedModel& model, const std::vector<double>& x) {
  const double f = model.predict(x);
  if (model.loss_name == "sq" || model.loss_name == "sqh")
    return clamp_unit((f + 1.0) / 2.0);
  if (model.loss_name == "log") return sigmoid(f);
  throw unsupported_loss_error(model.loss_name + " has no probability estimator");
}

// Population excess risk of the estimator at probability scale, relative to
// the pointwise Bayes optimum.
inline double exact_excess_risk(const DiscreteProblem& problem, const FittedModel& model) {
  const CompositeLoss cl = composite(model.loss_name);
  double total = 0.0;
  for (const auto& s : problem.support)
    total += s.p * composite_excess(cl, s.eta, estimate_eta(model, s.x));
  return total;
}

inline double exact_tail_probability(const DiscreteProblem& problem, const FittedModel& model,
                                     double eps) {
  if (!(eps > 0.0)) throw validation_error("eps must be > 0");
  double total = 0.0;
  for (const auto& s : problem.support)
    if (std::abs(s.eta - estimate_eta(model, s.x)) > eps) total += s.p;
  return total;
}

}  // namespace cpe
