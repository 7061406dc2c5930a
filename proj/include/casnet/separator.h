// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Time-domain mask-based separator: learned encoder, dual-path recurrent
// stack, Post-Net mask estimation and learned decoder.

#ifndef CASNET_SEPARATOR_H_
#define CASNET_SEPARATOR_H_

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "casnet/ops.h"
#include "casnet/params.h"
#include "casnet/tensor.h"

namespace casnet {

struct SeparatorConfig {
  int enc_dim = 64;
  int win = 16;
  int stride = 8;
  int n_blocks = 4;
  int chunk_size = 50;
  int hidden = 64;
  int n_sources = 2;

  void Validate() const;
  nlohmann::json ToJson() const;
  static SeparatorConfig FromJson(const nlohmann::json& j);
};

class Separator {
 public:
  // Registers its parameters in `params` under "sep.".
  Separator(const SeparatorConfig& config, ParameterSet& params, Rng& rng);

  const SeparatorConfig& config() const { return config_; }

  // Frames produced by the encoder for `length` samples.
  int64_t Frames(int64_t length) const;
  // Smallest length >= `length` whose frame grid is exact and holds at least
  // one chunk.
  int64_t PaddedLength(int64_t length) const;

  // waveforms [B, L] -> non-negative features [B, enc_dim, frames].
  Tensor Encode(const Tensor& waveforms) const;
  // [B, enc_dim, T] -> same shape. `num_blocks` < 0 runs every block; 0 turns
  // the stack into segmentation followed by overlap-add.
  Tensor DprnnStack(const Tensor& features, int num_blocks = -1) const;
  // [B, enc_dim, T] -> masks in [0, 1) shaped [B, n_sources, enc_dim, T].
  Tensor PostnetMasks(const Tensor& features) const;
  // [B, n_sources, enc_dim, T] -> [B, n_sources, original_length].
  Tensor Decode(const Tensor& masked, int64_t original_length) const;

  // Pads, encodes and runs the separation blocks. Returns [B, enc_dim, T] for
  // the padded mixture; `encoded` receives the raw encoder output.
  Tensor Features(const Tensor& mixture, Tensor* encoded) const;
  // Masks `encoded` with PostnetMasks(features) and decodes to `length`.
  Tensor MaskAndDecode(const Tensor& features, const Tensor& encoded,
                       int64_t length) const;
  // Full mask-based path without conditioning: [B, L] -> [B, n_sources, L].
  Tensor Forward(const Tensor& mixture) const;

 private:
  struct Path {
    LstmWeights fwd;
    LstmWeights bwd;
    Tensor proj_w, proj_b;
    Tensor norm_gamma, norm_beta;
  };
  struct Block {
    Path intra;
    Path inter;
  };

  Tensor RunPath(const Tensor& x, const Path& path) const;

  SeparatorConfig config_;
  Tensor enc_kernel_;   // [enc_dim, 1, win]
  Tensor dec_kernel_;   // [enc_dim, 1, win]
  std::vector<Block> blocks_;
  Tensor post_slope_;   // [enc_dim]
  Tensor post_w_, post_b_;            // [n * enc_dim, enc_dim]
  Tensor gate_out_w_, gate_out_b_;    // tanh branch
  Tensor gate_sig_w_, gate_sig_b_;    // sigmoid branch
};

// LSTM direction registered as <prefix>.w_ih / .w_hh / .bias.
LstmWeights AddLstm(ParameterSet& params, const std::string& prefix, int input_dim,
                    int hidden, Rng& rng);

}  // namespace casnet

#endif  // CASNET_SEPARATOR_H_
