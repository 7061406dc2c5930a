// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "casnet/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "casnet/errors.h"
#include "casnet/ops.h"

namespace casnet {

namespace {

double ProbeLoss(const GradCheckFn& fn, const std::vector<Tensor>& inputs,
                 const std::vector<double>& probe) {
  NoGradGuard guard;
  Tensor out = fn(inputs);
  CASNET_CHECK(static_cast<size_t>(out.numel()) == probe.size(),
               "GradCheck: output size changed between evaluations");
  double total = 0.0;
  const auto d = out.data();
  for (size_t i = 0; i < probe.size(); ++i) total += d[i] * probe[i];
  return total;
}

}  // namespace

Tensor RandomLeaf(Shape shape, uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> data(static_cast<size_t>(NumElements(shape)));
  for (double& v : data) v = dist(rng);
  return Tensor::FromData(std::move(shape), std::move(data), true);
}

GradCheckResult GradCheck(const GradCheckFn& fn, std::vector<Tensor> inputs,
                          const GradCheckOptions& options) {
  std::mt19937_64 rng(options.seed);
  for (auto& t : inputs) {
    CASNET_CHECK(t.defined() && t.node()->is_leaf(), "GradCheck: inputs must be leaves");
    t.ZeroGrad();
  }

  Tensor out = fn(inputs);
  std::vector<double> probe(static_cast<size_t>(out.numel()));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (double& v : probe) v = unit(rng);
  Tensor loss = Sum(Mul(out, Tensor::FromData(out.shape(), probe)));
  Backward(loss);

  // (input, flat index) for every differentiable coordinate.
  std::vector<std::pair<size_t, int64_t>> all;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) continue;
    for (int64_t j = 0; j < inputs[i].numel(); ++j) all.emplace_back(i, j);
  }
  const size_t want = static_cast<size_t>(std::max(options.coordinates, 32));
  if (all.size() > want) {
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(want);
  }

  GradCheckResult result;
  for (const auto& [i, j] : all) {
    Tensor& t = inputs[i];
    const double analytic = t.has_grad() ? t.grad()[j] : 0.0;
    auto data = t.mutable_data();
    const double orig = data[j];
    data[j] = orig + options.step;
    const double plus = ProbeLoss(fn, inputs, probe);
    data[j] = orig - options.step;
    const double minus = ProbeLoss(fn, inputs, probe);
    data[j] = orig;
    const double numeric = (plus - minus) / (2.0 * options.step);
    const double denom =
        std::max({std::fabs(analytic), std::fabs(numeric), options.floor});
    const double rel = std::fabs(analytic - numeric) / denom;
    ++result.coordinates_checked;
    if (rel > result.max_rel_error || !std::isfinite(rel)) {
      result.max_rel_error = std::isfinite(rel) ? rel : HUGE_VAL;
      std::ostringstream os;
      os << "input#" << i << "[" << j << "]: analytic " << analytic
         << " vs numeric " << numeric;
      result.worst = os.str();
    }
  }
  return result;
}

}  // namespace casnet
