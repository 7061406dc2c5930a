// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef CASNET_PARAMS_H_
#define CASNET_PARAMS_H_

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "casnet/tensor.h"

namespace casnet {

using Rng = std::mt19937_64;

struct Parameter {
  std::string name;
  Tensor tensor;
  // Buffers (batch-norm running statistics) are saved but never optimized.
  bool trainable = true;
};

// Named parameters of one model. Names are unique; insertion order is the
// checkpoint order.
class ParameterSet {
 public:
  // U(-bound, bound) initialization.
  Tensor AddUniform(const std::string& name, Shape shape, double bound, Rng& rng);
  Tensor AddConstant(const std::string& name, Shape shape, double value);
  Tensor AddBuffer(const std::string& name, Shape shape, double value);

  const std::vector<Parameter>& entries() const { return entries_; }
  std::vector<Tensor> Trainable() const;
  const Parameter* Find(const std::string& name) const;
  bool Contains(const std::string& name) const { return Find(name) != nullptr; }
  int64_t CountTrainable() const;

  void ZeroGrad();
  // L2 norm over all trainable grads (missing grads count as zero).
  double GradNorm() const;

  std::vector<std::vector<double>> Snapshot() const;
  void Restore(const std::vector<std::vector<double>>& snapshot);

 private:
  Tensor Add(const std::string& name, Tensor tensor, bool trainable);

  std::vector<Parameter> entries_;
  std::map<std::string, size_t> index_;
};

// On-disk layout: 8-byte magic "CASNETCK", u64 little-endian header length,
// JSON header {"format_version", "meta", "tensors": [{name, shape, offset}]},
// then every tensor as little-endian IEEE-754 doubles in header order.
inline constexpr int kCheckpointVersion = 1;

struct CheckpointTensor {
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, CheckpointTensor> tensors;
  std::vector<std::string> order;
};

void SaveCheckpoint(const std::string& path, const ParameterSet& params,
                    const nlohmann::json& meta);
Checkpoint LoadCheckpoint(const std::string& path);
// Copies values into `params`; every entry must be present with equal shape.
void ApplyCheckpoint(const Checkpoint& ckpt, ParameterSet& params);

}  // namespace casnet

#endif  // CASNET_PARAMS_H_
