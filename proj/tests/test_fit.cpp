#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "cpe/experiments.hpp"
#include "cpe/fit.hpp"

using namespace cpe;

namespace {
DiscreteProblem reference_log_problem() {
  DiscreteProblem p;
  p.support = {{{-2.0}, 1.0 / 3, sigmoid(0.8 * -2.0 - 0.3)},
               {{0.5}, 1.0 / 3, sigmoid(0.8 * 0.5 - 0.3)},
               {{3.0}, 1.0 / 3, sigmoid(0.8 * 3.0 - 0.3)}};
  p.feature_map_name = "affine";
  return p;
}
}  // namespace

TEST_CASE("truncated squared fit reproduces the worked three-point problem", "[fit]") {
  const DiscreteProblem prob = sec65_problem();
  const FittedModel m = true_risk_minimizer(prob, "sq");

  REQUIRE(m.weights.size() == 2);
  CHECK(m.weights[0] == Catch::Approx(19.0 / 39.0).margin(1e-9));
  CHECK(m.weights[1] == Catch::Approx(-17.0 / 39.0).margin(1e-9));
  CHECK(m.solver.method == "wls-closed-form");
  CHECK(m.solver.final_gradient_norm <= 1e-10);
  CHECK(m.solver.warnings.empty());

  CHECK(estimate_eta(m, {-1.0}) == Catch::Approx(1.0 / 26.0).margin(1e-9));
  CHECK(estimate_eta(m, {0.0}) == Catch::Approx(11.0 / 39.0).margin(1e-9));
  CHECK(estimate_eta(m, {3.0}) == 1.0);  // f(3) = 40/39 clamps

  // frozen: (1/676 + 4/1521) / 3
  CHECK(exact_excess_risk(prob, m) ==
        Catch::Approx(0.0013697129081744466).margin(1e-12));
  CHECK(exact_tail_probability(prob, m, 0.05) ==
        Catch::Approx(1.0 / 3.0).margin(1e-12));
  // only the middle point errs by 2/39 > 0.05; endpoints by 1/26 < 0.05
  CHECK(exact_tail_probability(prob, m, 0.06) == 0.0);
  CHECK_THROWS_AS(exact_tail_probability(prob, m, 0.0), validation_error);
}

TEST_CASE("squared-hinge descent recovers the probabilities truncation loses", "[fit]") {
  const DiscreteProblem prob = sec65_problem();
  const FittedModel m = true_risk_minimizer(prob, "sqh");
  CHECK(m.solver.final_gradient_norm <= 1e-10);
  CHECK(estimate_eta(m, {-1.0}) == Catch::Approx(0.0).margin(1e-6));
  CHECK(estimate_eta(m, {0.0}) == Catch::Approx(1.0 / 3.0).margin(1e-6));
  CHECK(estimate_eta(m, {3.0}) == Catch::Approx(1.0).margin(1e-6));
  // optimal face pins the intercept at -1/3
  CHECK(m.weights[1] == Catch::Approx(-1.0 / 3.0).margin(1e-6));
}

TEST_CASE("constrained squared mode matches the face as well", "[fit]") {
  const DiscreteProblem prob = sec65_problem();
  const FittedModel m = true_risk_minimizer(prob, "sq", SqMode::constrained);
  CHECK(m.solver.method == "sq-clipped-gd");
  CHECK(estimate_eta(m, {-1.0}) == Catch::Approx(0.0).margin(1e-6));
  CHECK(estimate_eta(m, {0.0}) == Catch::Approx(1.0 / 3.0).margin(1e-6));
  CHECK(estimate_eta(m, {3.0}) == Catch::Approx(1.0).margin(1e-6));
  CHECK(exact_excess_risk(prob, m) <= 1e-12);
}

TEST_CASE("newton recovers a representable logistic model exactly", "[fit]") {
  const DiscreteProblem prob = reference_log_problem();
  const FittedModel m = true_risk_minimizer(prob, "log");
  CHECK(m.solver.method == "damped-newton");
  CHECK(m.solver.warnings.empty());
  CHECK(m.solver.final_gradient_norm <= 1e-10);
  CHECK(m.weights[0] == Catch::Approx(0.8).margin(1e-9));
  CHECK(m.weights[1] == Catch::Approx(-0.3).margin(1e-9));
  for (const auto& s : prob.support)
    CHECK(estimate_eta(m, s.x) == Catch::Approx(s.eta).margin(1e-9));
  CHECK(exact_excess_risk(prob, m) <= 1e-15);
}

TEST_CASE("empirical fit approaches the true minimizer at n = 1e5", "[fit]") {
  const DiscreteProblem prob = reference_log_problem();
  const LabeledSample s = sample(prob, 100000, 42);
  const FittedModel m = empirical_risk_minimizer(s, "log");
  CHECK(std::abs(m.weights[0] - 0.8) <= 0.05);
  CHECK(std::abs(m.weights[1] + 0.3) <= 0.05);
}

TEST_CASE("exact-proportion samples reproduce the true minimizer", "[fit]") {
  DiscreteProblem prob;
  prob.support = {{{-1.0}, 0.5, 0.25}, {{1.0}, 0.5, 0.75}};
  prob.feature_map_name = "affine";

  LabeledSample s;
  for (int i = 0; i < 4; ++i) s.pairs.push_back({{-1.0}, i < 1 ? 1 : -1});
  for (int i = 0; i < 4; ++i) s.pairs.push_back({{1.0}, i < 3 ? 1 : -1});

  for (const char* loss : {"sq", "log", "sqh"}) {
    const FittedModel trm = true_risk_minimizer(prob, loss);
    const FittedModel erm = empirical_risk_minimizer(s, loss);
    INFO(loss);
    const double wtol = std::string(loss) == "sq" ? 1e-8 : 1e-6;
    REQUIRE(erm.weights.size() == trm.weights.size());
    for (std::size_t k = 0; k < trm.weights.size(); ++k)
      CHECK(std::abs(erm.weights[k] - trm.weights[k]) <= wtol);
    for (const auto& pt : prob.support)
      CHECK(std::abs(estimate_eta(erm, pt.x) - pt.eta) <= 1e-6);
    // empirical equals true minimizer, so the tail is empty at any eps
    for (double eps : {1e-5, 0.01, 0.1})
      CHECK(exact_tail_probability(prob, erm, eps) == 0.0);
  }
}

TEST_CASE("rank-deficient designs fall back to the minimum-norm fit", "[fit]") {
  DiscreteProblem prob;
  prob.support = {{{1.0, 1.0}, 0.5, 0.3}, {{2.0, 2.0}, 0.5, 0.7}};
  prob.feature_map_name = "affine";
  const FittedModel m = true_risk_minimizer(prob, "sq");
  REQUIRE_FALSE(m.solver.warnings.empty());
  CHECK(m.solver.warnings[0].find("rank") != std::string::npos);
  CHECK(m.solver.final_gradient_norm <= 1e-10);
  // duplicated coordinate splits its coefficient evenly under minimum norm
  CHECK(m.weights[0] == Catch::Approx(0.4).margin(1e-9));
  CHECK(m.weights[1] == Catch::Approx(0.4).margin(1e-9));
  CHECK(m.weights[2] == Catch::Approx(-1.2).margin(1e-9));
  for (const auto& pt : prob.support)
    CHECK(estimate_eta(m, pt.x) == Catch::Approx(pt.eta).margin(1e-12));
}

TEST_CASE("a single positive example pins the prediction at one", "[fit]") {
  LabeledSample s;
  s.pairs = {{{0.0}, 1}};
  const FittedModel m = empirical_risk_minimizer(s, "sq");
  CHECK(m.predict({0.0}) == Catch::Approx(1.0).margin(1e-12));
  CHECK(estimate_eta(m, {0.0}) == Catch::Approx(1.0).margin(1e-12));
  REQUIRE_FALSE(m.solver.warnings.empty());  // 1 observation, 2 features
}

TEST_CASE("separable logistic fits cap the weight norm with a warning", "[fit]") {
  DiscreteProblem prob;
  prob.support = {{{-0.01}, 0.5, 0.0}, {{0.01}, 0.5, 1.0}};
  prob.feature_map_name = "affine";
  const FittedModel m = true_risk_minimizer(prob, "log");
  REQUIRE_FALSE(m.solver.warnings.empty());
  CHECK(m.solver.warnings[0].find("capped") != std::string::npos);
  double norm = 0.0;
  for (double w : m.weights) norm += w * w;
  CHECK(std::sqrt(norm) == Catch::Approx(1e3).margin(1e-6));
  // estimates saturate toward the degenerate posteriors
  CHECK(estimate_eta(m, {0.01}) >= 0.999);
  CHECK(estimate_eta(m, {-0.01}) <= 0.001);
}

TEST_CASE("aggregation is order independent", "[fit]") {
  const DiscreteProblem prob = reference_log_problem();
  LabeledSample s = sample(prob, 5000, 7);
  LabeledSample shuffled = s;
  std::mt19937 rng(123);
  std::shuffle(shuffled.pairs.begin(), shuffled.pairs.end(), rng);
  const FittedModel a = empirical_risk_minimizer(s, "log");
  const FittedModel b = empirical_risk_minimizer(shuffled, "log");
  REQUIRE(a.weights == b.weights);  // bitwise: same groups, same order
}

TEST_CASE("sampler is seeded and matches the marginals", "[fit]") {
  const DiscreteProblem prob = reference_log_problem();
  const LabeledSample a = sample(prob, 1000, 99);
  const LabeledSample b = sample(prob, 1000, 99);
  REQUIRE(a.pairs == b.pairs);
  const LabeledSample c = sample(prob, 1000, 100);
  CHECK(a.pairs != c.pairs);

  const LabeledSample big = sample(prob, 50000, 1);
  for (const auto& pt : prob.support) {
    std::size_t count = 0, pos = 0;
    for (const auto& [x, y] : big.pairs)
      if (x == pt.x) {
        ++count;
        if (y == 1) ++pos;
      }
    CHECK(std::abs(count / 50000.0 - pt.p) <= 0.02);
    CHECK(std::abs(static_cast<double>(pos) / count - pt.eta) <= 0.03);
  }
}

TEST_CASE("model JSON round trips and validates", "[fit]") {
  const FittedModel m = true_risk_minimizer(sec65_problem(), "sq", SqMode::constrained);
  const auto j = m.to_json();
  CHECK(j.at("mode") == "constrained");
  const FittedModel back = FittedModel::from_json(j);
  CHECK(back.weights == m.weights);
  CHECK(back.loss_name == "sq");
  CHECK(back.sq_mode == SqMode::constrained);

  const FittedModel lg = true_risk_minimizer(reference_log_problem(), "log");
  CHECK_FALSE(lg.to_json().contains("mode"));

  auto bad = lg.to_json();
  bad["mode"] = "truncated";
  CHECK_THROWS_AS(FittedModel::from_json(bad), validation_error);

  auto hinge = lg.to_json();
  hinge["loss"] = "hinge";
  CHECK_THROWS_AS(FittedModel::from_json(hinge), unsupported_loss_error);

  auto inf = lg.to_json();
  inf["weights"][0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(FittedModel::from_json(inf), validation_error);

  CHECK_THROWS_AS(FittedModel::from_json(nlohmann::ordered_json::object()),
                  validation_error);
}

TEST_CASE("fitting rejects bad inputs", "[fit]") {
  CHECK_THROWS_AS(true_risk_minimizer(sec65_problem(), "hinge"), unsupported_loss_error);
  CHECK_THROWS_AS(true_risk_minimizer(sec65_problem(), "nope"), validation_error);

  LabeledSample empty;
  CHECK_THROWS_AS(empirical_risk_minimizer(empty, "sq"), validation_error);

  LabeledSample bad_label;
  bad_label.pairs = {{{0.0}, 2}};
  CHECK_THROWS_AS(empirical_risk_minimizer(bad_label, "sq"), validation_error);

  LabeledSample ragged;
  ragged.pairs = {{{0.0}, 1}, {{0.0, 1.0}, -1}};
  CHECK_THROWS_AS(empirical_risk_minimizer(ragged, "sq"), validation_error);

  FittedModel hinge_model;
  hinge_model.weights = {1.0, 0.0};
  hinge_model.loss_name = "hinge";
  CHECK_THROWS_AS(estimate_eta(hinge_model, {0.0}), unsupported_loss_error);

  const FittedModel m = true_risk_minimizer(sec65_problem(), "sq");
  CHECK_THROWS_AS(m.predict({1.0, 2.0}), validation_error);
}

TEST_CASE("problem JSON round trips and validates", "[fit]") {
  const DiscreteProblem prob = reference_log_problem();
  const auto j = prob.to_json();
  REQUIRE(j.contains("support"));
  CHECK(j.at("feature_map") == "affine");
  const DiscreteProblem back = DiscreteProblem::from_json(j);
  REQUIRE(back.support.size() == prob.support.size());
  for (std::size_t i = 0; i < prob.support.size(); ++i) {
    CHECK(back.support[i].x == prob.support[i].x);
    CHECK(back.support[i].p == prob.support[i].p);
    CHECK(back.support[i].eta == prob.support[i].eta);
  }

  DiscreteProblem bad = prob;
  bad.support[0].p = 0.9;  // masses no longer sum to one
  CHECK_THROWS_AS(bad.validate(), validation_error);

  DiscreteProblem dup = prob;
  dup.support[1].x = dup.support[0].x;
  CHECK_THROWS_AS(dup.validate(), validation_error);

  DiscreteProblem eta_out = prob;
  eta_out.support[0].eta = 1.5;
  CHECK_THROWS_AS(eta_out.validate(), validation_error);

  CHECK_THROWS_AS(DiscreteProblem::from_json(nlohmann::ordered_json::object()),
                  validation_error);
  CHECK_THROWS_AS(feature_map("mystery"), validation_error);
}
