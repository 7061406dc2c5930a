// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef CASNET_GRADSUITE_H_
#define CASNET_GRADSUITE_H_

#include <cstdint>
#include <string>
#include <vector>

#include "casnet/gradcheck.h"

namespace casnet {

struct GradSuiteCase {
  std::string name;
  bool composite = false;
  double tolerance = 0.0;
  GradCheckResult result;
  bool passed() const { return result.max_rel_error < tolerance; }
};

inline constexpr double kPrimitiveTolerance = 1e-4;
inline constexpr double kCompositeTolerance = 1e-3;

// Finite-difference checks of every primitive op (tolerance 1e-4, linear
// 1e-6) and of the encoder, dual-path, Post-Net, decoder, channel-encoder,
// FiLM and loss composites (1e-3). Deterministic in `seed`.
std::vector<GradSuiteCase> RunGradSuite(uint64_t seed = 0);

}  // namespace casnet

#endif  // CASNET_GRADSUITE_H_
