// cpe: catalog inspection, properness audits, delta/modulus estimation,
// fitting, convergence experiments, and the worked reproduction.
// Exit codes: 0 ok, 1 validation/usage, 2 numeric failure, 3 invariant violation.

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cpe/experiments.hpp"

using namespace cpe;

namespace {

struct invariant_violation : error {
  using error::error;
};

std::string fmt(double v) { return format_double(v); }

void print_or_write(const std::string& text, const std::string& out_path) {
  if (out_path.empty())
    std::fputs(text.c_str(), stdout);
  else
    write_text_atomic(out_path, text);
}

// ---- loss-eval ------------------------------------------------------------

void cmd_loss_eval(const std::string& loss_name, double eta, double pred, bool margin) {
  const auto& entry = catalog_entry(loss_name);
  const bool linked = entry.link.has_value();
  const LossSpec spec =
      (linked && !margin) ? cpe_presentation(composite(loss_name)) : entry.loss;
  const Probability e(eta);
  const double risk = conditional_risk(spec, e, pred);
  const double best = optimal_conditional_risk(spec, e);
  const double excess = conditional_excess_risk(spec, e, pred);
  std::printf("loss=%s scale=%s eta=%s pred=%s risk=%s optimal=%s excess=%s\n",
              loss_name.c_str(), (linked && !margin) ? "probability" : "margin",
              fmt(eta).c_str(), fmt(pred).c_str(), fmt(risk).c_str(), fmt(best).c_str(),
              fmt(excess).c_str());
}

// ---- loss-table -----------------------------------------------------------

void cmd_loss_table(const std::string& loss_name, double grid, const std::string& out) {
  const auto& entry = catalog_entry(loss_name);
  const int n = static_cast<int>(std::lround(1.0 / grid));
  const double vlo = std::max(entry.loss.space.lower, -10.0);
  const double vhi = std::min(entry.loss.space.upper, 10.0);

  std::string csv = "eta,psi,vstar_lo,vstar_hi,v,inv_link\n";
  auto endpoint = [](double x) {
    if (std::isinf(x)) return std::string(x > 0 ? "inf" : "-inf");
    return format_double(x);
  };
  for (int i = 0; i <= n; ++i) {
    const double eta = static_cast<double>(i) / n;
    const OptimalSet s = optimal_set(entry.loss, Probability(eta));
    const double v = vlo + (vhi - vlo) * i / n;
    csv += fmt(eta) + ',';
    if (entry.link) csv += fmt(link_forward(*entry.link, Probability(eta)));
    csv += ',' + endpoint(s.lo) + ',' + endpoint(s.hi) + ',' + fmt(v) + ',';
    if (entry.link) csv += fmt(link_inverse(*entry.link, v));
    csv += '\n';
  }
  print_or_write(csv, out);
}

// ---- check-properness -----------------------------------------------------

void cmd_check_properness(const std::string& loss_name, double grid,
                          const std::string& out) {
  const auto reports = audit_entry(loss_name, grid);
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (PropernessReport rep : reports) {
    if (rep.is_strictly_proper)
      for (double eps : {0.05, 0.1, 0.2, 0.5})
        rep.deltas.push_back({eps, estimate_delta(composite(loss_name), eps, grid)});
    std::printf("loss=%s link=%s proper=%d strictly_proper=%d degenerate=%d", rep.loss.c_str(),
                rep.link.c_str(), rep.is_proper ? 1 : 0, rep.is_strictly_proper ? 1 : 0,
                rep.is_degenerate ? 1 : 0);
    if (rep.witness) {
      std::printf(" witness=%s at eta1=%s", rep.witness->condition.c_str(),
                  fmt(rep.witness->eta1).c_str());
      if (rep.witness->eta2) std::printf(" eta2=%s", fmt(*rep.witness->eta2).c_str());
      if (rep.witness->v) std::printf(" v=%s", fmt(*rep.witness->v).c_str());
    }
    std::printf("\n");
    arr.push_back(rep.to_json());
  }
  const auto cover = check_disjoint_cover(catalog_entry(loss_name).loss, grid);
  std::printf("disjoint=%d covers=%d\n", cover.disjoint ? 1 : 0, cover.covers ? 1 : 0);
  if (!out.empty())
    write_text_atomic(out, (arr.size() == 1 ? arr[0] : arr).dump(2) + "\n");
}

// ---- check-modulus --------------------------------------------------------

void cmd_check_modulus(const std::string& loss_name, const std::vector<double>& epsilons,
                       const std::vector<double>& thresholds, double grid) {
  const CompositeLoss cl = composite(loss_name);
  for (double eps : epsilons)
    std::printf("eps=%s delta=%s\n", fmt(eps).c_str(),
                fmt(estimate_delta(cl, eps, grid)).c_str());
  if (!thresholds.empty()) {
    const ModulusEstimate m = estimate_modulus(cl, thresholds, grid);
    for (std::size_t i = 0; i < thresholds.size(); ++i)
      std::printf("t=%s omega=%s\n", fmt(m.deltas[i]).c_str(), fmt(m.epsilons[i]).c_str());
  }
}

// ---- check-bregman --------------------------------------------------------

void cmd_check_bregman(const std::string& loss_name, std::optional<double> eta,
                       std::optional<double> eta_hat, double grid) {
  const CompositeLoss cl = composite(loss_name);
  if (eta && eta_hat) {
    std::printf("bregman=%s\n",
                fmt(bregman_divergence(cl, Probability(*eta), Probability(*eta_hat))).c_str());
    return;
  }
  const double gap = bregman_identity_gap(cl, grid);
  std::printf("max_gap=%s tol=1e-08\n", fmt(gap).c_str());
  if (gap > 1e-8) throw invariant_violation("Bregman identity gap exceeds 1e-8");
}

// ---- fit ------------------------------------------------------------------

void cmd_fit(const std::string& problem_path, const std::string& loss_name,
             const std::string& mode, std::size_t n, std::uint64_t seed,
             const std::string& out) {
  const DiscreteProblem prob = DiscreteProblem::load(problem_path);
  const SqMode sq_mode = sq_mode_from_string(mode);
  const FittedModel m = n == 0 ? true_risk_minimizer(prob, loss_name, sq_mode)
                               : empirical_risk_minimizer(sample(prob, n, seed), loss_name,
                                                          prob.feature_map_name, sq_mode);
  std::printf("method=%s iterations=%d gradient_norm=%s\n", m.solver.method.c_str(),
              m.solver.iterations, fmt(m.solver.final_gradient_norm).c_str());
  for (const auto& w : m.solver.warnings) std::printf("warning: %s\n", w.c_str());
  std::string ws;
  for (double w : m.weights) ws += (ws.empty() ? "" : ", ") + fmt(w);
  std::printf("weights=(%s)\n", ws.c_str());
  for (const auto& s : prob.support)
    std::printf("x=%s eta=%s eta_hat=%s\n", fmt(s.x[0]).c_str(), fmt(s.eta).c_str(),
                fmt(estimate_eta(m, s.x)).c_str());
  std::printf("excess_risk=%s\n", fmt(exact_excess_risk(prob, m)).c_str());
  if (!out.empty()) write_text_atomic(out, m.to_json().dump(2) + "\n");
}

// ---- converge -------------------------------------------------------------

void cmd_converge(const std::string& config_path, const std::string& out,
                  std::string format, std::optional<std::size_t> reps,
                  std::optional<std::uint64_t> seed) {
  ConvergenceConfig config = ConvergenceConfig::load(config_path);
  if (reps) config.reps = *reps;
  if (seed) config.seed = *seed;
  config.validate();
  const ConvergenceReport rep = run_convergence(config);
  if (format.empty())
    format = out.ends_with(".json") ? "json" : "csv";
  if (out.empty())
    std::fputs(format == "json" ? (rep.to_json().dump(2) + "\n").c_str()
                                : to_csv(rep).c_str(),
               stdout);
  else
    emit_report(rep, out, format);
  std::printf("rows=%zu markov_violations=%zu solver_failures=%zu slope=%s\n",
              rep.rows.size(), rep.markov_violations, rep.solver_failures,
              fmt(rep.excess_slope).c_str());
  if (rep.markov_violations > 0)
    throw invariant_violation("Markov tail bound violated in convergence run");
}

// ---- misspec --------------------------------------------------------------

void cmd_misspec(const std::string& problem_path, const std::string& loss_name,
                 std::size_t n, std::size_t reps, std::uint64_t seed) {
  const DiscreteProblem prob = DiscreteProblem::load(problem_path);
  const MisspecificationResult r = run_misspecification(prob, loss_name, n, reps, seed);
  std::string es;
  for (double e : r.eta_hats) es += (es.empty() ? "" : ", ") + fmt(e);
  std::printf("eta_hat=(%s)\n", es.c_str());
  std::printf("floor_excess=%s mean_excess=%s sd=%s floor_reached=%d\n",
              fmt(r.floor_excess).c_str(), fmt(r.mean_excess).c_str(),
              fmt(r.sd_excess).c_str(), r.floor_reached ? 1 : 0);
  if (r.oracle_available) {
    std::printf("oracle_eta=%s oracle_floor=%s\n", fmt(r.oracle_eta).c_str(),
                fmt(r.oracle_floor).c_str());
    for (double e : r.eta_hats)
      if (std::abs(e - r.oracle_eta) > 1e-6)
        throw invariant_violation("fit disagrees with the Bregman-projection oracle");
  }
}

// ---- repro-sec65 ----------------------------------------------------------

void cmd_repro_sec65(const std::string& out) {
  const Sec65Report r = repro_sec65();
  std::printf("sq weights=(%s, %s) %s\n", fmt(r.sq_model.weights[0]).c_str(),
              fmt(r.sq_model.weights[1]).c_str(), r.sq_ok ? "PASS" : "FAIL");
  std::string es;
  for (double e : r.sqh_eta) es += (es.empty() ? "" : ", ") + fmt(e);
  std::printf("sqh eta_hat=(%s) %s\n", es.c_str(), r.sqh_ok ? "PASS" : "FAIL");
  std::printf("claimed (2, -0.25) eta_hat(0)=%s recovers=%s\n", fmt(r.claimed_eta[1]).c_str(),
              r.claimed_recovers ? "yes" : "no (flagged)");
  if (!out.empty()) write_text_atomic(out, r.to_json().dump(2) + "\n");
  if (!(r.sq_ok && r.sqh_ok && !r.claimed_recovers))
    throw invariant_violation("worked-example reproduction failed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"class-probability estimation with proper composite losses"};
  app.require_subcommand(1);

  std::string loss_name, problem_path, config_path, out, mode = "truncated", format;
  double eta = 0.5, pred = 0.5, grid = 1e-3;
  bool margin = false;
  std::optional<double> breg_eta, breg_eta_hat;
  std::vector<double> epsilons, thresholds;
  std::size_t fit_n = 0, misspec_n = 2000, reps = 200;
  std::uint64_t seed = 42;
  std::optional<std::size_t> reps_override;
  std::optional<std::uint64_t> seed_override;

  auto* eval = app.add_subcommand("loss-eval", "evaluate one conditional risk");
  eval->add_option("--loss", loss_name)->required();
  eval->add_option("--eta", eta)->required();
  eval->add_option("--pred", pred)->required();
  eval->add_flag("--margin", margin, "interpret --pred at margin scale");

  auto* table = app.add_subcommand("loss-table", "emit psi, v*, inverse link as CSV");
  table->add_option("--loss", loss_name)->required();
  table->add_option("--grid", grid);
  table->add_option("--out", out);

  auto* properness = app.add_subcommand("check-properness", "audit a catalog loss");
  properness->add_option("--loss", loss_name)->required();
  properness->add_option("--grid", grid);
  properness->add_option("--out", out);

  auto* modulus = app.add_subcommand("check-modulus", "estimate delta(eps) and omega(t)");
  modulus->add_option("--loss", loss_name)->required();
  modulus->add_option("--eps", epsilons);
  modulus->add_option("--t", thresholds);
  modulus->add_option("--grid", grid);

  auto* bregman = app.add_subcommand("check-bregman", "Bregman divergence or identity gap");
  bregman->add_option("--loss", loss_name)->required();
  bregman->add_option("--eta", breg_eta);
  bregman->add_option("--etahat", breg_eta_hat);
  bregman->add_option("--grid", grid);

  auto* fit = app.add_subcommand("fit", "true or empirical risk minimization");
  fit->add_option("--problem", problem_path)->required();
  fit->add_option("--loss", loss_name)->required();
  fit->add_option("--mode", mode)->check(CLI::IsMember({"truncated", "constrained"}));
  fit->add_option("--n", fit_n, "sample size; 0 fits the true risk");
  fit->add_option("--seed", seed);
  fit->add_option("--out", out);

  auto* converge = app.add_subcommand("converge", "run a convergence experiment");
  converge->add_option("--config", config_path)->required();
  converge->add_option("--out", out);
  converge->add_option("--format", format)->check(CLI::IsMember({"csv", "json"}));
  converge->add_option("--reps", reps_override);
  converge->add_option("--seed", seed_override);

  auto* misspec = app.add_subcommand("misspec", "misspecified-fit probe with oracle check");
  misspec->add_option("--problem", problem_path)->required();
  misspec->add_option("--loss", loss_name)->required();
  misspec->add_option("--n", misspec_n);
  misspec->add_option("--reps", reps);
  misspec->add_option("--seed", seed);

  auto* sec65 = app.add_subcommand("repro-sec65", "reproduce the worked truncation example");
  sec65->add_option("--out", out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (eval->parsed()) cmd_loss_eval(loss_name, eta, pred, margin);
    if (table->parsed()) cmd_loss_table(loss_name, grid, out);
    if (properness->parsed()) cmd_check_properness(loss_name, grid, out);
    if (modulus->parsed()) {
      if (epsilons.empty() && thresholds.empty())
        throw validation_error("check-modulus needs --eps and/or --t values");
      cmd_check_modulus(loss_name, epsilons, thresholds, grid);
    }
    if (bregman->parsed()) {
      if (breg_eta.has_value() != breg_eta_hat.has_value())
        throw validation_error("--eta and --etahat must be given together");
      cmd_check_bregman(loss_name, breg_eta, breg_eta_hat, grid);
    }
    if (fit->parsed()) cmd_fit(problem_path, loss_name, mode, fit_n, seed, out);
    if (converge->parsed()) cmd_converge(config_path, out, format, reps_override, seed_override);
    if (misspec->parsed()) cmd_misspec(problem_path, loss_name, misspec_n, reps, seed);
    if (sec65->parsed()) cmd_repro_sec65(out);
  } catch (const invariant_violation& e) {
    std::fprintf(stderr, "invariant violation: %s\n", e.what());
    return 3;
  } catch (const numeric_error& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 2;
  } catch (const error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
