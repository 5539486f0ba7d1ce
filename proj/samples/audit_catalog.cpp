// Audits every catalog loss: properness of the canonical or candidate links,
// and the disjoint-cover structure of the optimal sets.

#include <cstdio>

#include "cpe/properness.hpp"

int main() {
  using namespace cpe;
  std::printf("%-10s %-12s %-7s %-7s %-10s %s\n", "loss", "link", "proper", "strict",
              "degenerate", "witness");
  for (const auto& entry : catalog()) {
    for (const auto& rep : audit_entry(entry.name, 1e-2)) {
      std::printf("%-10s %-12s %-7s %-7s %-10s %s\n", rep.loss.c_str(), rep.link.c_str(),
                  rep.is_proper ? "yes" : "no", rep.is_strictly_proper ? "yes" : "no",
                  rep.is_degenerate ? "yes" : "no",
                  rep.witness ? rep.witness->condition.c_str() : "-");
    }
    const auto cover = check_disjoint_cover(entry.loss, 1e-2);
    std::printf("  optimal sets: disjoint=%s covers=%s\n", cover.disjoint ? "yes" : "no",
                cover.covers ? "yes" : "no");
  }
  return 0;
}
