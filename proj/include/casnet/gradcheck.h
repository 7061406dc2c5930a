// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef CASNET_GRADCHECK_H_
#define CASNET_GRADCHECK_H_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "casnet/tensor.h"

namespace casnet {

struct GradCheckOptions {
  double step = 1e-5;
  // At least 32 coordinates are always probed (or all of them, if fewer).
  int coordinates = 48;
  uint64_t seed = 0;
  // Denominator floor of the relative error, for coordinates whose true
  // derivative is ~0.
  double floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  int coordinates_checked = 0;
  std::string worst;  // "input#i[j]: analytic a vs numeric n"
};

using GradCheckFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Compares reverse-mode gradients of sum(fn(inputs) * R), R a fixed random
// probe, against central differences on a random subsample of coordinates of
// every input that requires grad. Relative error per coordinate is
// |a - n| / max(|a|, |n|, floor). Inputs must be leaves.
GradCheckResult GradCheck(const GradCheckFn& fn, std::vector<Tensor> inputs,
                          const GradCheckOptions& options = {});

// Leaf filled with U(lo, hi) draws, requires_grad set.
Tensor RandomLeaf(Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0);

}  // namespace casnet

#endif  // CASNET_GRADCHECK_H_
