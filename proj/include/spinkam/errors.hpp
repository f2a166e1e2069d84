// Copyright 2026 The spinkam Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace spinkam {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Lattice geometry.
struct SteinerLimitExceeded : Error { using Error::Error; };

// Operator algebra.
struct SupportNotContained : Error { using Error::Error; };

// Flow.
struct GapClosed : Error { using Error::Error; };
struct NotFrustrationFree : Error { using Error::Error; };
struct NotNonDiagonal : Error { using Error::Error; };
struct GeneratorTooLarge : Error { using Error::Error; };
struct NotConverged : Error { using Error::Error; };

// Checks: the drawn instance misses a hypothesis and must be skipped, not failed.
struct HypothesisViolated : Error { using Error::Error; };

// Markov embedding.
struct DegenerateKernel : Error { using Error::Error; };
struct NotSelfAdjointGenerator : Error { using Error::Error; };

// Configuration and I/O.
struct SchemaError : Error {
  std::string field;
  SchemaError(const std::string& f, const std::string& reason)
      : Error("config field '" + f + "': " + reason), field(f) {}
};
struct IoError : Error { using Error::Error; };

}  // namespace spinkam
