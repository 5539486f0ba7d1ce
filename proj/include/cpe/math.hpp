#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>

#include "cpe/errors.hpp"

namespace cpe {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Probabilities passed through the logit are clamped to [kEtaClamp, 1 - kEtaClamp]
// so the link stays finite at the endpoints.
inline constexpr double kEtaClamp = 1e-12;

inline double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// log(1 + e^v), stable for large |v|.
inline double softplus(double v) {
  if (v > 0.0) return v + std::log1p(std::exp(-v));
  return std::log1p(std::exp(v));
}

inline double clamp_unit(double q) { return q < 0.0 ? 0.0 : (q > 1.0 ? 1.0 : q); }

inline double clamp_eta(double e) {
  return e < kEtaClamp ? kEtaClamp : (e > 1.0 - kEtaClamp ? 1.0 - kEtaClamp : e);
}

inline double logit(double e) {
  e = clamp_eta(e);
  return std::log(e) - std::log1p(-e);
}

inline double binary_entropy(double e) {
  double s = 0.0;
  if (e > 0.0) s -= e * std::log(e);
  if (e < 1.0) s -= (1.0 - e) * std::log(1.0 - e);
  return s;
}

// KL divergence between Bernoulli(eta) and Bernoulli(q), in nats.
// Written through log1p of the increment so nearby arguments keep their
// O(d^2) tail instead of losing it to cancellation; accumulated in long
// double so ratios against (eta-q)^2 stay on the correct side of 1/2 down
// to separations of 1e-6.
inline long double kl_bernoulli_l(double eta, double q) {
  if (q <= 0.0) return eta <= 0.0 ? 0.0L : std::numeric_limits<long double>::infinity();
  if (q >= 1.0) return eta >= 1.0 ? 0.0L : std::numeric_limits<long double>::infinity();
  const long double e = eta;
  const long double d = static_cast<long double>(q) - e;
  const long double one_m = 1.0L - e;  // must be subtracted in long double
  long double s = 0.0L;
  if (eta > 0.0) s -= e * std::log1p(d / e);
  if (eta < 1.0) s -= one_m * std::log1p(-d / one_m);
  return s < 0.0L ? 0.0L : s;
}

inline double kl_bernoulli(double eta, double q) {
  return static_cast<double>(kl_bernoulli_l(eta, q));
}

struct ScalarMinimum {
  double argmin = 0.0;
  double value = 0.0;
  double width = 0.0;  // final bracket width, the achieved tolerance
  bool converged = false;
};

// Golden-section search for a unimodal f on [lo, hi].
inline ScalarMinimum golden_section_minimize(const std::function<double(double)>& f,
                                             double lo, double hi,
                                             double tol = 1e-10, int max_iter = 400) {
  static const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = f(c), fd = f(d);
  for (int i = 0; i < max_iter && (b - a) > tol; ++i) {
    if (fc < fd) {
      b = d; d = c; fd = fc;
      c = b - invphi * (b - a);
      fc = f(c);
    } else {
      a = c; c = d; fc = fd;
      d = a + invphi * (b - a);
      fd = f(d);
    }
  }
  ScalarMinimum m;
  m.argmin = (a + b) / 2.0;
  m.value = f(m.argmin);
  m.width = b - a;
  m.converged = std::isfinite(m.value) && m.width <= tol * (1.0 + std::abs(a) + std::abs(b));
  return m;
}

// SplitMix64 mixing step. Draw streams are derived by chaining it, so every
// sample is a pure function of (root seed, counter) with no generator state.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(root ^ 0x243F6A8885A308D3ull);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  return h;
}

// Uniform in [0, 1) from 64 random bits.
inline double unit_uniform(std::uint64_t bits) { return (bits >> 11) * 0x1.0p-53; }

// Shortest round-trip decimal representation; reports and CSV files are
// byte-reproducible because of this.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace cpe
