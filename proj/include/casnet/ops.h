// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Differentiable primitives. Layout conventions:
//   conv-style tensors are [batch, channels, time]
//   sequence-style tensors are [batch, frames, features]
// Every op validates shapes and throws ValidationError naming the offending
// shapes.

#ifndef CASNET_OPS_H_
#define CASNET_OPS_H_

#include <cstdint>
#include <span>
#include <vector>

#include "casnet/tensor.h"

namespace casnet {

// Structural and elementwise.
Tensor Add(const Tensor& a, const Tensor& b);
Tensor Sub(const Tensor& a, const Tensor& b);
Tensor Mul(const Tensor& a, const Tensor& b);
Tensor MulScalar(const Tensor& a, double s);
Tensor AddScalar(const Tensor& a, double s);
Tensor Sum(const Tensor& a);
Tensor Mean(const Tensor& a);
Tensor Reshape(const Tensor& a, Shape shape);
Tensor Permute(const Tensor& a, const std::vector<int>& perm);
// Concatenates along the last axis; leading extents must agree.
Tensor ConcatLast(const Tensor& a, const Tensor& b);
// Crops or zero-pads the last axis on the right to `length`.
Tensor ResizeLast(const Tensor& a, int64_t length);
// Flat gather; result is 1-D.
Tensor Pick(const Tensor& a, std::vector<int64_t> flat_indices);

// Activations. The derivative of Relu/PRelu at exactly 0 is the negative-side
// slope (0 for Relu, the learned slope for PRelu).
Tensor Relu(const Tensor& x);
Tensor Sigmoid(const Tensor& x);
Tensor Tanh(const Tensor& x);
// x is [batch, channels, ...]; slope is [1] (shared) or [channels].
Tensor PRelu(const Tensor& x, const Tensor& slope);

// input [B, Cin, T], kernel [Cout, Cin, K], bias [Cout] or undefined.
// Output time = floor((T + 2 * padding - K) / stride) + 1.
Tensor Conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding);
// input [B, Cin, F], kernel [Cin, Cout, K]. Output time = (F - 1) * stride + K,
// overlapping contributions summed.
Tensor ConvTranspose1d(const Tensor& input, const Tensor& kernel, int stride);
// Affine map over the trailing axis. weight [out, in], bias [out] or undefined.
Tensor Linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

enum class NormMode { kTrain, kEval };

// Running statistics of a batch-norm layer. The tensors are non-trainable
// leaves so they can live in a ParameterSet and a checkpoint.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

// x [B, C, T]; statistics per channel over (batch, time). Train mode needs at
// least two elements per channel and updates the running statistics.
Tensor BatchNorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, NormMode mode);
// x [B, C, T]; zero mean, unit variance over time per (sample, channel).
Tensor InstanceNorm(const Tensor& x, double eps = 1e-8);
// Normalizes over the trailing axis, then applies gamma/beta.
Tensor LayerNorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = 1e-5);
// x [B, C, T] -> [B, C].
Tensor AvgPoolTime(const Tensor& x);
// y[b, c, t] = x[b, c, t] * scale[b, c] + shift[b, c]. shift may be undefined.
Tensor ChannelAffine(const Tensor& x, const Tensor& scale, const Tensor& shift);
// x [M, C, T], scores [M, T] (positive). Weights are scores normalized to sum
// to one over time; result [M, C] is the weighted mean over time.
Tensor AttentionPool(const Tensor& x, const Tensor& scores);
// masks [B, n, F, T] times features [B, F, T] broadcast over n.
Tensor ApplyMasks(const Tensor& masks, const Tensor& features);

// One LSTM direction. Gate order in the stacked weights is i, f, g, o.
struct LstmWeights {
  Tensor w_ih;  // [4H, D]
  Tensor w_hh;  // [4H, H]
  Tensor bias;  // [4H]
};

// input [B, T, D] -> [B, T, H], zero initial state.
Tensor Lstm(const Tensor& input, const LstmWeights& weights, bool reverse);
// One direction (uni) or two (bi, forward and backward outputs concatenated).
Tensor RecurrentLayer(const Tensor& input,
                      std::span<const LstmWeights> directions);

// Chunking used by dual-path separators. The sequence is padded by `hop`
// frames at the front and at least `hop` at the back so every real frame is
// covered by the same number of chunks.
struct ChunkLayout {
  int64_t front = 0;
  int64_t padded = 0;
  int64_t chunks = 0;
};
ChunkLayout MakeChunkLayout(int64_t frames, int64_t chunk, int64_t hop);
// x [B, T, F] -> [B, S, K, F].
Tensor Segment(const Tensor& x, int64_t chunk, int64_t hop);
// x [B, S, K, F] -> [B, frames, F]; each frame is the mean of its chunk copies.
Tensor OverlapAdd(const Tensor& x, int64_t frames, int64_t hop);

// Scale-invariant SNR in dB with both signals zero-meaned, eps 1e-8 in the
// denominator and the result clamped to [-kSiSnrCap, kSiSnrCap].
inline constexpr double kSiSnrCap = 60.0;
inline constexpr double kSiSnrEps = 1e-8;
double SiSnrValue(std::span<const double> estimate,
                  std::span<const double> target);
// est, tgt [B, n, L] -> [B, n, n] with out[b, i, j] = SI-SNR(est_i, tgt_j).
// Gradient flows into `est` only; targets must not require grad.
Tensor PairwiseSiSnr(const Tensor& est, const Tensor& tgt);
// logits [M, K]; mean softmax cross-entropy in nats.
Tensor SoftmaxCrossEntropy(const Tensor& logits, std::span<const int> labels);

}  // namespace casnet

#endif  // CASNET_OPS_H_
