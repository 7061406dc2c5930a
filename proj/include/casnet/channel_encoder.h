// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Channel encoder: a residual SE network over the shared waveform-encoder
// features, attentive time pooling and a projection to the embedding C. A
// linear classifier on C predicts the recording channel.

#ifndef CASNET_CHANNEL_ENCODER_H_
#define CASNET_CHANNEL_ENCODER_H_

#include <vector>

#include "json.hpp"

#include "casnet/ops.h"
#include "casnet/params.h"
#include "casnet/separator.h"

namespace casnet {

struct ChannelEncoderConfig {
  int blocks = 4;
  int width = 64;
  int embed_dim = 128;
  int n_classes = 4;
  // Bottleneck of the squeeze-and-excitation FC pair is width / se_reduction.
  int se_reduction = 4;

  void Validate() const;
  nlohmann::json ToJson() const;
  static ChannelEncoderConfig FromJson(const nlohmann::json& j);
};

// Conv1d (kernel 3, same padding) -> ReLU -> BatchNorm.
struct ConvBlock {
  Tensor kernel;  // [width, in, 3]
  Tensor bias;    // [width]
  Tensor gamma, beta;
  BatchNormState state;

  Tensor Forward(const Tensor& x, NormMode mode);
};

// Two ConvBlocks, a sigmoid gate per feature map from the time-averaged
// activations, and the identity shortcut: y = gate(h) * h + x, h = convs(x).
struct SeResBlock {
  ConvBlock conv1, conv2;
  Tensor fc1_w, fc1_b;  // [width / r, width]
  Tensor fc2_w, fc2_b;  // [width, width / r]

  Tensor Gate(const Tensor& h) const;  // [M, width]
  Tensor Forward(const Tensor& x, NormMode mode);
};

class ChannelEncoder {
 public:
  // `input_dim` is the feature count of the shared waveform encoder.
  ChannelEncoder(const ChannelEncoderConfig& config, int input_dim, ParameterSet& params,
                 Rng& rng);

  const ChannelEncoderConfig& config() const { return config_; }
  void set_mode(NormMode mode) { mode_ = mode; }
  NormMode mode() const { return mode_; }

  Tensor ConvBlockForward(const Tensor& x0);                 // [M, in, T] -> [M, width, T]
  Tensor SeResBlockForward(int index, const Tensor& x);     // [M, width, T]
  Tensor AttentionScores(const Tensor& xb) const;           // [M, T] in (0, 1)
  Tensor AttentivePool(const Tensor& xb) const;             // [M, width]
  Tensor Project(const Tensor& z) const;                    // [M, embed_dim]
  Tensor Classify(const Tensor& c) const;                   // [M, n_classes]
  // Encoder features of the auxiliary mixture -> embedding C.
  Tensor Embed(const Tensor& x0);
  // Waveforms [M, L] through the shared encoder, then Embed.
  Tensor EncodeChannel(const Separator& separator, const Tensor& aux);

  ConvBlock& conv_block() { return conv_; }
  SeResBlock& se_block(int index) { return se_blocks_.at(index); }
  Tensor attention_w() const { return att_w_; }
  Tensor attention_b() const { return att_b_; }
  Tensor proj_w() const { return proj_w_; }
  Tensor proj_b() const { return proj_b_; }
  Tensor classifier_w() const { return cls_w_; }
  Tensor classifier_b() const { return cls_b_; }

 private:
  ChannelEncoderConfig config_;
  NormMode mode_ = NormMode::kTrain;
  ConvBlock conv_;
  std::vector<SeResBlock> se_blocks_;
  Tensor att_w_, att_b_;    // [1, width], [1]
  Tensor proj_w_, proj_b_;  // [embed_dim, width]
  Tensor cls_w_, cls_b_;    // [n_classes, embed_dim]
};

}  // namespace casnet

#endif  // CASNET_CHANNEL_ENCODER_H_
