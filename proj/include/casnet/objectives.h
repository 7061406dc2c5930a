// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef CASNET_OBJECTIVES_H_
#define CASNET_OBJECTIVES_H_

#include <span>
#include <vector>

#include "casnet/tensor.h"

namespace casnet {

// SI-SNR in dB of one estimate against one target; both are zero-meaned,
// the result is capped to [-60, 60]. A zero-energy target is rejected.
double SiSnr(std::span<const double> estimate, std::span<const double> target);

// All n! assignments of estimates to targets in lexicographic order.
std::vector<std::vector<int>> Permutations(int n);

struct PitResult {
  // Scalar: minus the batch mean of the best per-item mean SI-SNR.
  Tensor loss;
  // perms[b][i] = target index assigned to estimate i for item b.
  std::vector<std::vector<int>> perms;
  // Best mean SI-SNR (dB) per batch item.
  std::vector<double> best_sisnr;
};

// est, tgt [B, n, L]. Gradient flows through the selected assignment only.
PitResult PitLoss(const Tensor& estimates, const Tensor& targets);

// Mean softmax cross-entropy over the batch, nats.
Tensor ChannelIdLoss(const Tensor& logits, std::span<const int> labels);

struct LossBreakdown {
  double l_rc = 0.0;
  double l_ci = 0.0;
  double gamma = 0.0;
  double l_total = 0.0;
  std::vector<std::vector<int>> perms;
  Tensor total;  // graph node to differentiate
};

// l_total = l_rc + gamma * l_ci. `l_ci` may be undefined (no classifier),
// which counts as 0. The l_ci branch stays in the graph for gamma == 0, so
// the classifier receives an exactly zero gradient.
LossBreakdown TotalLoss(const PitResult& pit, const Tensor& l_ci, double gamma);

}  // namespace casnet

#endif  // CASNET_OBJECTIVES_H_
