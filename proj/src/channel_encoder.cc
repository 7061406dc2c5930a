// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "casnet/channel_encoder.h"

#include <cmath>
#include <set>
#include <string>

#include "casnet/errors.h"

namespace casnet {

void ChannelEncoderConfig::Validate() const {
  CASNET_CHECK(blocks >= 1, "channel encoder: blocks must be >= 1, got ", blocks);
  CASNET_CHECK(width >= 1, "channel encoder: width must be >= 1, got ", width);
  CASNET_CHECK(embed_dim >= 1, "channel encoder: embed_dim must be >= 1, got ", embed_dim);
  CASNET_CHECK(n_classes >= 2, "channel encoder: n_classes must be >= 2, got ", n_classes);
  CASNET_CHECK(se_reduction >= 1 && se_reduction <= width,
               "channel encoder: se_reduction must be in [1, width], got ", se_reduction);
}

nlohmann::json ChannelEncoderConfig::ToJson() const {
  return {{"blocks", blocks},
          {"width", width},
          {"embed_dim", embed_dim},
          {"n_classes", n_classes},
          {"se_reduction", se_reduction}};
}

ChannelEncoderConfig ChannelEncoderConfig::FromJson(const nlohmann::json& j) {
  static const std::set<std::string> kKeys = {"blocks", "width", "embed_dim", "n_classes",
                                              "se_reduction"};
  for (const auto& [key, _] : j.items()) {
    CASNET_CHECK(kKeys.count(key), "channel encoder config: unknown key '", key, "'");
  }
  ChannelEncoderConfig c;
  c.blocks = j.value("blocks", c.blocks);
  c.width = j.value("width", c.width);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.n_classes = j.value("n_classes", c.n_classes);
  c.se_reduction = j.value("se_reduction", c.se_reduction);
  c.Validate();
  return c;
}

Tensor ConvBlock::Forward(const Tensor& x, NormMode mode) {
  Tensor h = Relu(Conv1d(x, kernel, bias, 1, 1));
  return BatchNorm1d(h, gamma, beta, state, mode);
}

Tensor SeResBlock::Gate(const Tensor& h) const {
  Tensor squeeze = AvgPoolTime(h);
  Tensor hidden = Relu(Linear(squeeze, fc1_w, fc1_b));
  return Sigmoid(Linear(hidden, fc2_w, fc2_b));
}

Tensor SeResBlock::Forward(const Tensor& x, NormMode mode) {
  Tensor h = conv2.Forward(conv1.Forward(x, mode), mode);
  return Add(ChannelAffine(h, Gate(h), Tensor()), x);
}

namespace {

ConvBlock MakeConvBlock(ParameterSet& params, const std::string& prefix, int in, int out,
                        Rng& rng) {
  ConvBlock b;
  const double bound = 1.0 / std::sqrt(3.0 * in);
  b.kernel = params.AddUniform(prefix + ".conv.kernel", {out, in, 3}, bound, rng);
  b.bias = params.AddUniform(prefix + ".conv.bias", {out}, bound, rng);
  b.gamma = params.AddConstant(prefix + ".bn.gamma", {out}, 1.0);
  b.beta = params.AddConstant(prefix + ".bn.beta", {out}, 0.0);
  b.state.running_mean = params.AddBuffer(prefix + ".bn.running_mean", {out}, 0.0);
  b.state.running_var = params.AddBuffer(prefix + ".bn.running_var", {out}, 1.0);
  return b;
}

}  // namespace

ChannelEncoder::ChannelEncoder(const ChannelEncoderConfig& config, int input_dim,
                               ParameterSet& params, Rng& rng)
    : config_(config) {
  config_.Validate();
  CASNET_CHECK(input_dim >= 1, "channel encoder: input_dim must be >= 1");
  const int w = config_.width;
  const int r = std::max(1, w / config_.se_reduction);
  conv_ = MakeConvBlock(params, "chan.conv_block", input_dim, w, rng);
  for (int i = 0; i < config_.blocks; ++i) {
    const std::string prefix = "chan.se" + std::to_string(i);
    SeResBlock blk;
    blk.conv1 = MakeConvBlock(params, prefix + ".conv1", w, w, rng);
    blk.conv2 = MakeConvBlock(params, prefix + ".conv2", w, w, rng);
    const double b1 = 1.0 / std::sqrt(static_cast<double>(w));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(r));
    blk.fc1_w = params.AddUniform(prefix + ".fc1.weight", {r, w}, b1, rng);
    blk.fc1_b = params.AddUniform(prefix + ".fc1.bias", {r}, b1, rng);
    blk.fc2_w = params.AddUniform(prefix + ".fc2.weight", {w, r}, b2, rng);
    blk.fc2_b = params.AddUniform(prefix + ".fc2.bias", {w}, b2, rng);
    se_blocks_.push_back(std::move(blk));
  }
  const double bw = 1.0 / std::sqrt(static_cast<double>(w));
  att_w_ = params.AddUniform("chan.attention.weight", {1, w}, bw, rng);
  att_b_ = params.AddUniform("chan.attention.bias", {1}, bw, rng);
  proj_w_ = params.AddUniform("chan.proj.weight", {config_.embed_dim, w}, bw, rng);
  proj_b_ = params.AddUniform("chan.proj.bias", {config_.embed_dim}, bw, rng);
  const double bd = 1.0 / std::sqrt(static_cast<double>(config_.embed_dim));
  cls_w_ = params.AddUniform("classifier.weight", {config_.n_classes, config_.embed_dim}, bd,
                             rng);
  cls_b_ = params.AddUniform("classifier.bias", {config_.n_classes}, bd, rng);
}

Tensor ChannelEncoder::ConvBlockForward(const Tensor& x0) { return conv_.Forward(x0, mode_); }

Tensor ChannelEncoder::SeResBlockForward(int index, const Tensor& x) {
  return se_blocks_.at(index).Forward(x, mode_);
}

Tensor ChannelEncoder::AttentionScores(const Tensor& xb) const {
  CASNET_CHECK(xb.defined() && xb.ndim() == 3, "AttentionScores: expected [M, C, T]");
  const int64_t m = xb.dim(0), t = xb.dim(2);
  Tensor logits = Linear(Permute(xb, {0, 2, 1}), att_w_, att_b_);  // [M, T, 1]
  return Sigmoid(Reshape(logits, {m, t}));
}

Tensor ChannelEncoder::AttentivePool(const Tensor& xb) const {
  return AttentionPool(xb, AttentionScores(xb));
}

Tensor ChannelEncoder::Project(const Tensor& z) const { return Linear(z, proj_w_, proj_b_); }

Tensor ChannelEncoder::Classify(const Tensor& c) const { return Linear(c, cls_w_, cls_b_); }

Tensor ChannelEncoder::Embed(const Tensor& x0) {
  Tensor x = ConvBlockForward(x0);
  for (int i = 0; i < config_.blocks; ++i) x = SeResBlockForward(i, x);
  return Project(AttentivePool(x));
}

Tensor ChannelEncoder::EncodeChannel(const Separator& separator, const Tensor& aux) {
  return Embed(separator.Encode(aux));
}

}  // namespace casnet
