#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cpe/errors.hpp"
#include "cpe/io.hpp"
#include "cpe/math.hpp"

namespace cpe {

struct SupportPoint {
  std::vector<double> x;
  double p = 0.0;    // marginal mass
  double eta = 0.0;  // P(Y = +1 | X = x)
};

// Feature maps are named and versioned so reports can state the hypothesis
// class unambiguously.
struct FeatureMap {
  std::string name;
  int version = 1;
  std::function<std::vector<double>(const std::vector<double>&)> apply;
};

inline const FeatureMap& feature_map(const std::string& name) {
  static const FeatureMap affine{"affine", 1, [](const std::vector<double>& x) {
                                   std::vector<double> f(x);
                                   f.push_back(1.0);
                                   return f;
                                 }};
  static const FeatureMap constant{"constant", 1, [](const std::vector<double>&) {
                                     return std::vector<double>{1.0};
                                   }};
  if (name == "affine") return affine;
  if (name == "constant") return constant;
  throw validation_error("unknown feature map \"" + name + "\" (known: affine, constant)");
}

// Finite-support distribution: points, marginals, true posteriors.
struct DiscreteProblem {
  std::vector<SupportPoint> support;
  std::string feature_map_name = "affine";

  void validate() const {
    if (support.empty()) throw validation_error("problem has no support points");
    feature_map(feature_map_name);
    const std::size_t dim = support.front().x.size();
    double total = 0.0;
    for (std::size_t i = 0; i < support.size(); ++i) {
      const auto& s = support[i];
      if (s.x.size() != dim)
        throw validation_error("support point " + std::to_string(i) +
                               " has mismatched dimension");
      for (double c : s.x)
        if (!std::isfinite(c))
          throw validation_error("support point " + std::to_string(i) + " is not finite");
      if (!(s.p > 0.0 && s.p <= 1.0))
        throw validation_error("marginal p at point " + std::to_string(i) +
                               " outside (0, 1]: " + format_double(s.p));
      if (!(s.eta >= 0.0 && s.eta <= 1.0))
        throw validation_error("eta at point " + std::to_string(i) +
                               " outside [0, 1]: " + format_double(s.eta));
      total += s.p;
      for (std::size_t j = 0; j < i; ++j)
        if (support[j].x == s.x)
          throw validation_error("support points " + std::to_string(j) + " and " +
                                 std::to_string(i) + " coincide");
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw validation_error("marginals sum to " + format_double(total) +
                             ", expected 1 within 1e-9");
  }

  std::size_t x_dim() const { return support.empty() ? 0 : support.front().x.size(); }

  std::size_t feature_dim() const {
    return feature_map(feature_map_name).apply(support.front().x).size();
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["support"] = nlohmann::ordered_json::array();
    for (const auto& s : support)
      j["support"].push_back({{"x", s.x}, {"p", s.p}, {"eta", s.eta}});
    j["feature_map"] = feature_map_name;
    return j;
  }

  static DiscreteProblem from_json(const nlohmann::ordered_json& j) {
    DiscreteProblem prob;
    try {
      for (const auto& sj : j.at("support")) {
        SupportPoint s;
        s.x = sj.at("x").get<std::vector<double>>();
        s.p = sj.at("p").get<double>();
        s.eta = sj.at("eta").get<double>();
        prob.support.push_back(std::move(s));
      }
      prob.feature_map_name = j.value("feature_map", "affine");
    } catch (const nlohmann::json::exception& e) {
      throw validation_error(std::string("malformed problem JSON: ") + e.what());
    }
    prob.validate();
    return prob;
  }

  static DiscreteProblem load(const std::string& path) {
    return from_json(load_json_file(path));
  }
};

struct LabeledSample {
  std::vector<std::pair<std::vector<double>, int>> pairs;  // (x, y) with y in {-1, +1}
  std::uint64_t seed = 0;
};

// i.i.d. draw: x by the marginal, then y = +1 with probability eta(x).
// Each draw i consumes the counter pair (i, 0) and (i, 1), so samples are a
// pure function of (problem, n, seed).
inline LabeledSample sample(const DiscreteProblem& problem, std::size_t n, std::uint64_t seed) {
  problem.validate();
  if (n < 1) throw validation_error("sample size must be >= 1");
  LabeledSample s;
  s.seed = seed;
  s.pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double ux = unit_uniform(mix_seed(seed, i, 0));
    double cum = 0.0;
    const SupportPoint* pick = &problem.support.back();
    for (const auto& sp : problem.support) {
      cum += sp.p;
      if (ux < cum) { pick = &sp; break; }
    }
    const double uy = unit_uniform(mix_seed(seed, i, 1));
    s.pairs.emplace_back(pick->x, uy < pick->eta ? +1 : -1);
  }
  return s;
}

}  // namespace cpe
