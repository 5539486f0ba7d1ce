// Small end-to-end convergence run on a three-point logistic problem.
// Prints the per-(n, eps) table as CSV and a one-line summary.

#include <cstdio>

#include "cpe/experiments.hpp"

int main() {
  using namespace cpe;
  ConvergenceConfig config;
  config.problem.support = {{{-2.0}, 1.0 / 3, 0.13010847436299785},
                            {{0.5}, 1.0 / 3, 0.52497918747893999},
                            {{3.0}, 1.0 / 3, 0.89090317880438706}};
  config.problem.feature_map_name = "affine";
  config.loss_name = "log";
  config.ns = {100, 1000};
  config.epsilons = {0.05, 0.2};
  config.reps = 50;
  config.seed = 42;

  const ConvergenceReport report = run_convergence(config);
  std::fputs(to_csv(report).c_str(), stdout);
  std::printf("excess_slope=%s markov_violations=%zu solver_failures=%zu\n",
              format_double(report.excess_slope).c_str(), report.markov_violations,
              report.solver_failures);
  return report.markov_violations == 0 ? 0 : 1;
}
