#pragma once

#include <stdexcept>
#include <string>

namespace cpe {

// Base class for everything thrown by this library.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad user input: unknown names, malformed files or configs, out-of-range flags.
struct validation_error : error {
  using error::error;
};

// A value lies outside the domain it is defined on (prediction space,
// probability range, boundary of a derivative).
struct domain_error : error {
  using error::error;
};

// The operation needs a link or a strictly proper composite that the
// argument does not provide (hinge and 0-1 have no inverse link).
struct unsupported_loss_error : error {
  using error::error;
};

// Numerical failure: solver out of iterations, rank-deficient design with
// inconsistent targets, non-unimodal conditional risk, gross negative excess.
struct numeric_error : error {
  using error::error;
};

// File I/O failure; the message carries the path.
struct io_error : error {
  using error::error;
};

}  // namespace cpe
