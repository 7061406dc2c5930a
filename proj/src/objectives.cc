// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "casnet/objectives.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "casnet/errors.h"
#include "casnet/ops.h"

namespace casnet {

double SiSnr(std::span<const double> estimate, std::span<const double> target) {
  CASNET_CHECK(estimate.size() == target.size(), "SI-SNR: length mismatch ", estimate.size(),
               " vs ", target.size());
  CASNET_CHECK(!target.empty(), "SI-SNR: empty signals");
  const double mean = std::accumulate(target.begin(), target.end(), 0.0) / target.size();
  double energy = 0.0;
  for (double v : target) energy += (v - mean) * (v - mean);
  CASNET_CHECK(energy > 0.0, "SI-SNR: target has zero energy");
  return SiSnrValue(estimate, target);
}

std::vector<std::vector<int>> Permutations(int n) {
  CASNET_CHECK(n >= 1 && n <= 8, "Permutations: n must be in [1, 8], got ", n);
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::vector<std::vector<int>> out;
  do {
    out.push_back(p);
  } while (std::next_permutation(p.begin(), p.end()));
  return out;
}

PitResult PitLoss(const Tensor& estimates, const Tensor& targets) {
  CASNET_CHECK(estimates.defined() && estimates.ndim() == 3,
               "PIT: expected estimates [batch, sources, time]");
  Tensor pair = PairwiseSiSnr(estimates, targets);  // [B, n, n]
  const int64_t batch = pair.dim(0), n = pair.dim(1);
  const auto perms = Permutations(static_cast<int>(n));
  const auto values = pair.data();

  PitResult res;
  std::vector<int64_t> picks;
  picks.reserve(static_cast<size_t>(batch * n));
  for (int64_t b = 0; b < batch; ++b) {
    double best = -std::numeric_limits<double>::infinity();
    size_t best_p = 0;
    for (size_t p = 0; p < perms.size(); ++p) {
      double sum = 0.0;
      for (int64_t i = 0; i < n; ++i) sum += values[(b * n + i) * n + perms[p][i]];
      const double mean = sum / static_cast<double>(n);
      // Strict comparison keeps the first (lexicographically smallest) tie.
      if (mean > best) {
        best = mean;
        best_p = p;
      }
    }
    res.perms.push_back(perms[best_p]);
    res.best_sisnr.push_back(best);
    for (int64_t i = 0; i < n; ++i) picks.push_back((b * n + i) * n + perms[best_p][i]);
  }
  res.loss = MulScalar(Mean(Pick(pair, std::move(picks))), -1.0);
  return res;
}

Tensor ChannelIdLoss(const Tensor& logits, std::span<const int> labels) {
  return SoftmaxCrossEntropy(logits, labels);
}

LossBreakdown TotalLoss(const PitResult& pit, const Tensor& l_ci, double gamma) {
  CASNET_CHECK(gamma >= 0.0 && std::isfinite(gamma), "gamma must be >= 0, got ", gamma);
  LossBreakdown out;
  out.gamma = gamma;
  out.perms = pit.perms;
  out.l_rc = pit.loss.item();
  if (l_ci.defined()) {
    out.l_ci = l_ci.item();
    out.total = Add(pit.loss, MulScalar(l_ci, gamma));
  } else {
    out.total = pit.loss;
  }
  out.l_total = out.total.item();
  return out;
}

}  // namespace casnet
