#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "cpe/experiments.hpp"

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

DiscreteProblem constant_misspec_problem() {
  DiscreteProblem p;
  p.support = {{{-1.0}, 1.0 / 3, 0.2}, {{0.0}, 1.0 / 3, 0.5}, {{1.0}, 1.0 / 3, 0.8}};
  p.feature_map_name = "constant";
  return p;
}

ConvergenceConfig reference_config() {
  ConvergenceConfig c;
  c.problem = reference_log_problem();
  c.loss_name = "log";
  c.ns = {100, 10000};
  c.epsilons = {0.05, 0.2};
  c.reps = 200;
  c.seed = 42;
  return c;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}
}  // namespace

TEST_CASE("the worked example reproduces and the claimed weights do not", "[experiments]") {
  const Sec65Report r = repro_sec65();
  CHECK(r.sq_ok);
  CHECK(r.sqh_ok);
  CHECK_FALSE(r.claimed_recovers);
  REQUIRE(r.claimed_eta.size() == 3);
  CHECK(r.claimed_eta[0] == Catch::Approx(0.0).margin(1e-12));
  CHECK(r.claimed_eta[1] == Catch::Approx(0.375).margin(1e-12));  // != 1/3
  CHECK(r.claimed_eta[2] == Catch::Approx(1.0).margin(1e-12));

  const auto j = r.to_json();
  CHECK(j.at("claimed").at("recovers") == false);
  CHECK(j.at("sq").at("ok") == true);
  CHECK(j.at("sqh").at("ok") == true);
}

TEST_CASE("convergence run satisfies the tail and decay invariants", "[experiments]") {
  const ConvergenceConfig config = reference_config();
  const ConvergenceReport rep = run_convergence(config);

  REQUIRE(rep.rows.size() == config.ns.size() * config.epsilons.size());
  CHECK(rep.markov_violations == 0);
  CHECK(rep.solver_failures == 0);

  double l1_small = 0.0, l1_big = 0.0, excess_big = 0.0;
  for (const auto& row : rep.rows) {
    if (row.n == 100) l1_small = row.mean_l1;
    if (row.n == 10000) {
      l1_big = row.mean_l1;
      excess_big = row.mean_excess_risk;
    }
    REQUIRE(row.mean_tail >= 0.0);
    REQUIRE(row.mean_tail <= 1.0);
    REQUIRE(row.median_tail <= row.q90_tail + 1e-15);  // quantiles are ordered
    // the reported delta really controls the tail through the excess
    std::size_t k = 0;
    while (rep.epsilons[k] != row.eps) ++k;
    REQUIRE(row.mean_tail <= row.mean_excess_risk / rep.deltas[k] + 1e-6);
  }
  CHECK(l1_big < l1_small);           // strict decay, comfortably beyond noise
  CHECK(excess_big <= 1e-2);          // solver-tolerance ceiling at n = 1e4
  CHECK(rep.excess_slope < -0.5);     // roughly 1/n decay, diagnostic only

  const std::string csv = to_csv(rep);
  CHECK(csv.rfind("n,eps,mean_tail,median_tail,q90_tail,mean_l1,mean_excess_risk\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + static_cast<long>(rep.rows.size()));
}

TEST_CASE("reports are byte-identical across runs and round trip", "[experiments]") {
  ConvergenceConfig config = reference_config();
  config.ns = {100};
  config.reps = 40;
  const ConvergenceReport a = run_convergence(config);
  const ConvergenceReport b = run_convergence(config);
  CHECK(a.to_json().dump(2) == b.to_json().dump(2));
  CHECK(to_csv(a) == to_csv(b));

  const ConvergenceReport back = ConvergenceReport::from_json(a.to_json());
  CHECK(back.to_json().dump(2) == a.to_json().dump(2));

  const auto dir = std::filesystem::temp_directory_path();
  const std::string p1 = (dir / "cpe_rep_a.json").string();
  const std::string p2 = (dir / "cpe_rep_b.json").string();
  emit_report(a, p1, "json");
  emit_report(b, p2, "json");
  CHECK(slurp(p1) == slurp(p2));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("per-repetition seeds decorrelate by repetition and size", "[experiments]") {
  CHECK(mix_seed(42, 0, 100) != mix_seed(42, 1, 100));
  CHECK(mix_seed(42, 0, 100) != mix_seed(42, 0, 1000));
  CHECK(mix_seed(42, 0, 100) != mix_seed(43, 0, 100));
  CHECK(mix_seed(42, 5, 100) == mix_seed(42, 5, 100));
}

TEST_CASE("misspecified problems need the explicit flag", "[experiments]") {
  ConvergenceConfig config;
  config.problem = sec65_problem();
  config.loss_name = "sq";
  config.ns = {200};
  config.epsilons = {0.1};
  config.reps = 30;
  CHECK_THROWS_AS(run_convergence(config), validation_error);

  config.misspecified = true;
  const ConvergenceReport rep = run_convergence(config);
  REQUIRE(rep.rows.size() == 1);
  CHECK(rep.markov_violations == 0);
  // excess settles at the truncation floor, not at zero
  CHECK(rep.rows[0].mean_excess_risk >= 0.0013697129081744466 * 0.9);
}

TEST_CASE("misspecified fits land on the constant Bregman projection", "[experiments]") {
  const DiscreteProblem prob = constant_misspec_problem();
  for (const char* loss : {"sq", "log"}) {
    INFO(loss);
    const MisspecificationResult r = run_misspecification(prob, loss, 2000, 50, 42);
    REQUIRE(r.eta_hats.size() == 3);
    for (double e : r.eta_hats) CHECK(e == Catch::Approx(0.5).margin(1e-6));
    REQUIRE(r.oracle_available);
    CHECK(r.oracle_eta == Catch::Approx(0.5).margin(1e-6));
    CHECK(std::abs(r.eta_hats[0] - r.oracle_eta) <= 1e-6);
    CHECK(std::abs(r.floor_excess - r.oracle_floor) <= 1e-9);
    CHECK(r.floor_reached);
    CHECK(r.mean_excess >= 0.9 * r.floor_excess);  // not collapsing to zero
  }
  const MisspecificationResult sq = run_misspecification(prob, "sq", 2000, 50, 42);
  CHECK(sq.floor_excess == Catch::Approx(0.06).margin(1e-12));
  const MisspecificationResult lg = run_misspecification(prob, "log", 2000, 50, 42);
  CHECK(lg.floor_excess == Catch::Approx(0.12849650468117162).margin(1e-9));
}

TEST_CASE("a representable posterior passes through the misspec path untouched",
          "[experiments]") {
  DiscreteProblem prob;
  prob.support = {{{-1.0}, 0.5, 0.3}, {{1.0}, 0.5, 0.3}};
  prob.feature_map_name = "constant";
  const MisspecificationResult r = run_misspecification(prob, "sq", 500, 20, 7);
  for (double e : r.eta_hats) CHECK(e == Catch::Approx(0.3).margin(1e-9));
  CHECK(r.floor_excess <= 1e-12);
  CHECK(r.oracle_floor <= 1e-9);
}

TEST_CASE("report emission covers formats and failure paths", "[experiments]") {
  ConvergenceReport empty;
  empty.loss_name = "log";
  CHECK(to_csv(empty) == "n,eps,mean_tail,median_tail,q90_tail,mean_l1,mean_excess_risk\n");

  ConvergenceReport small;
  small.loss_name = "log";
  small.feature_map_name = "affine";
  small.epsilons = {0.1, 0.2};
  small.deltas = {0.02, 0.08};
  for (std::size_t n : {100u, 200u})
    for (double eps : {0.1, 0.2})
      small.rows.push_back({n, eps, 0.1, 0.0, 0.3, 0.05, 0.01});
  const std::string small_csv = to_csv(small);
  CHECK(std::count(small_csv.begin(), small_csv.end(), '\n') == 5);

  const auto path = (std::filesystem::temp_directory_path() / "cpe_small.csv").string();
  emit_report(small, path, "csv");
  CHECK(slurp(path) == to_csv(small));
  std::filesystem::remove(path);

  CHECK_THROWS_AS(emit_report(small, path, "yaml"), validation_error);
  CHECK_THROWS_AS(emit_report(small, "/nonexistent-dir/x.csv", "csv"), io_error);
}

TEST_CASE("convergence config parses, defaults, and validates", "[experiments]") {
  ConvergenceConfig config = reference_config();
  const auto j = config.to_json();
  const ConvergenceConfig back = ConvergenceConfig::from_json(j);
  CHECK(back.loss_name == "log");
  CHECK(back.ns == config.ns);
  CHECK(back.epsilons == config.epsilons);
  CHECK(back.reps == 200);
  CHECK(back.seed == 42);
  CHECK(back.grid_step == 1e-3);

  auto defaults = j;
  defaults.erase("reps");
  defaults.erase("seed");
  defaults.erase("grid_step");
  defaults.erase("misspecified");
  const ConvergenceConfig d = ConvergenceConfig::from_json(defaults);
  CHECK(d.reps == 200);
  CHECK(d.seed == 42);
  CHECK(d.grid_step == 1e-3);
  CHECK_FALSE(d.misspecified);

  // problem by reference instead of inline
  const auto dir = std::filesystem::temp_directory_path();
  const std::string ppath = (dir / "cpe_problem.json").string();
  write_text_atomic(ppath, config.problem.to_json().dump(2));
  auto by_path = j;
  by_path.erase("problem");
  by_path["problem_path"] = ppath;
  const ConvergenceConfig p = ConvergenceConfig::from_json(by_path);
  CHECK(p.problem.support.size() == 3);
  std::filesystem::remove(ppath);

  auto bad_eps = j;
  bad_eps["epsilons"] = {0.0};
  CHECK_THROWS_AS(ConvergenceConfig::from_json(bad_eps), validation_error);

  auto bad_mode = j;
  bad_mode["mode"] = "truncated";  // mode belongs to sq only
  CHECK_THROWS_AS(ConvergenceConfig::from_json(bad_mode), validation_error);

  auto no_ns = j;
  no_ns["ns"] = nlohmann::ordered_json::array();
  CHECK_THROWS_AS(ConvergenceConfig::from_json(no_ns), validation_error);
}
