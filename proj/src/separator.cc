// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "casnet/separator.h"

#include <cmath>
#include <set>

#include "casnet/errors.h"

namespace casnet {

void SeparatorConfig::Validate() const {
  CASNET_CHECK(enc_dim >= 1, "separator: enc_dim must be >= 1, got ", enc_dim);
  CASNET_CHECK(win >= 1, "separator: win must be >= 1, got ", win);
  CASNET_CHECK(stride >= 1 && stride <= win, "separator: stride must be in [1, win=", win,
               "], got ", stride);
  CASNET_CHECK(n_blocks >= 1, "separator: n_blocks must be >= 1, got ", n_blocks);
  CASNET_CHECK(chunk_size >= 2, "separator: chunk_size must be >= 2, got ", chunk_size);
  CASNET_CHECK(hidden >= 1, "separator: hidden must be >= 1, got ", hidden);
  CASNET_CHECK(n_sources >= 2, "separator: n_sources must be >= 2, got ", n_sources);
}

nlohmann::json SeparatorConfig::ToJson() const {
  return {{"enc_dim", enc_dim},       {"win", win},       {"stride", stride},
          {"n_blocks", n_blocks},     {"chunk_size", chunk_size},
          {"hidden", hidden},         {"n_sources", n_sources}};
}

SeparatorConfig SeparatorConfig::FromJson(const nlohmann::json& j) {
  static const std::set<std::string> kKeys = {"enc_dim",    "win",    "stride",   "n_blocks",
                                              "chunk_size", "hidden", "n_sources"};
  for (const auto& [key, _] : j.items()) {
    CASNET_CHECK(kKeys.count(key), "separator config: unknown key '", key, "'");
  }
  SeparatorConfig c;
  c.enc_dim = j.value("enc_dim", c.enc_dim);
  c.win = j.value("win", c.win);
  c.stride = j.value("stride", c.stride);
  c.n_blocks = j.value("n_blocks", c.n_blocks);
  c.chunk_size = j.value("chunk_size", c.chunk_size);
  c.hidden = j.value("hidden", c.hidden);
  c.n_sources = j.value("n_sources", c.n_sources);
  c.Validate();
  return c;
}

LstmWeights AddLstm(ParameterSet& params, const std::string& prefix, int input_dim,
                    int hidden, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  LstmWeights w;
  w.w_ih = params.AddUniform(prefix + ".w_ih", {4 * hidden, input_dim}, bound, rng);
  w.w_hh = params.AddUniform(prefix + ".w_hh", {4 * hidden, hidden}, bound, rng);
  w.bias = params.AddUniform(prefix + ".bias", {4 * hidden}, bound, rng);
  return w;
}

Separator::Separator(const SeparatorConfig& config, ParameterSet& params, Rng& rng)
    : config_(config) {
  config_.Validate();
  const int f = config_.enc_dim, h = config_.hidden, n = config_.n_sources;
  const double enc_bound = 1.0 / std::sqrt(static_cast<double>(config_.win));
  enc_kernel_ = params.AddUniform("sep.encoder.kernel", {f, 1, config_.win}, enc_bound, rng);

  auto make_path = [&](const std::string& prefix) {
    Path p;
    p.fwd = AddLstm(params, prefix + ".lstm_fwd", f, h, rng);
    p.bwd = AddLstm(params, prefix + ".lstm_bwd", f, h, rng);
    const double b = 1.0 / std::sqrt(2.0 * h);
    p.proj_w = params.AddUniform(prefix + ".proj.weight", {f, 2 * h}, b, rng);
    p.proj_b = params.AddUniform(prefix + ".proj.bias", {f}, b, rng);
    p.norm_gamma = params.AddConstant(prefix + ".norm.gamma", {f}, 1.0);
    p.norm_beta = params.AddConstant(prefix + ".norm.beta", {f}, 0.0);
    return p;
  };
  for (int i = 0; i < config_.n_blocks; ++i) {
    const std::string prefix = "sep.block" + std::to_string(i);
    Block blk;
    blk.intra = make_path(prefix + ".intra");
    blk.inter = make_path(prefix + ".inter");
    blocks_.push_back(std::move(blk));
  }

  const double fb = 1.0 / std::sqrt(static_cast<double>(f));
  post_slope_ = params.AddConstant("sep.postnet.prelu", {f}, 0.25);
  post_w_ = params.AddUniform("sep.postnet.proj.weight", {n * f, f}, fb, rng);
  post_b_ = params.AddUniform("sep.postnet.proj.bias", {n * f}, fb, rng);
  gate_out_w_ = params.AddUniform("sep.postnet.tanh.weight", {f, f}, fb, rng);
  gate_out_b_ = params.AddUniform("sep.postnet.tanh.bias", {f}, fb, rng);
  gate_sig_w_ = params.AddUniform("sep.postnet.sigmoid.weight", {f, f}, fb, rng);
  gate_sig_b_ = params.AddUniform("sep.postnet.sigmoid.bias", {f}, fb, rng);
  dec_kernel_ = params.AddUniform("sep.decoder.kernel", {f, 1, config_.win}, fb, rng);
}

int64_t Separator::Frames(int64_t length) const {
  return (length - config_.win) / config_.stride + 1;
}

int64_t Separator::PaddedLength(int64_t length) const {
  CASNET_CHECK(length >= config_.win, "mixture has ", length,
               " samples; the encoder needs at least win=", config_.win);
  const int64_t span = length - config_.win;
  int64_t frames = (span + config_.stride - 1) / config_.stride + 1;
  frames = std::max<int64_t>(frames, config_.chunk_size);
  return (frames - 1) * config_.stride + config_.win;
}

Tensor Separator::Encode(const Tensor& waveforms) const {
  CASNET_CHECK(waveforms.defined() && waveforms.ndim() == 2,
               "Encode: expected waveforms [batch, time], got ",
               waveforms.defined() ? ShapeToString(waveforms.shape()) : "undefined");
  const int64_t batch = waveforms.dim(0), len = waveforms.dim(1);
  CASNET_CHECK(len >= config_.win, "Encode: input has ", len,
               " samples; the minimum length is win=", config_.win);
  Tensor x = Reshape(waveforms, {batch, 1, len});
  return Relu(Conv1d(x, enc_kernel_, Tensor(), config_.stride, 0));
}

Tensor Separator::RunPath(const Tensor& x, const Path& path) const {
  const LstmWeights dirs[2] = {path.fwd, path.bwd};
  Tensor h = RecurrentLayer(x, dirs);
  h = Linear(h, path.proj_w, path.proj_b);
  h = LayerNorm(h, path.norm_gamma, path.norm_beta);
  return Add(x, h);
}

Tensor Separator::DprnnStack(const Tensor& features, int num_blocks) const {
  CASNET_CHECK(features.defined() && features.ndim() == 3 &&
                   features.dim(1) == config_.enc_dim,
               "DprnnStack: expected [batch, ", config_.enc_dim, ", frames], got ",
               features.defined() ? ShapeToString(features.shape()) : "undefined");
  const int64_t batch = features.dim(0), f = features.dim(1), frames = features.dim(2);
  const int64_t k = config_.chunk_size, hop = k / 2;
  CASNET_CHECK(frames >= k, "DprnnStack: ", frames, " frames is fewer than chunk_size=", k);
  const int run = num_blocks < 0 ? config_.n_blocks : std::min(num_blocks, config_.n_blocks);

  Tensor seg = Segment(Permute(features, {0, 2, 1}), k, hop);  // [B, S, K, F]
  const int64_t s = seg.dim(1);
  for (int i = 0; i < run; ++i) {
    const Block& blk = blocks_[i];
    Tensor intra = RunPath(Reshape(seg, {batch * s, k, f}), blk.intra);
    seg = Reshape(intra, {batch, s, k, f});
    Tensor across = Reshape(Permute(seg, {0, 2, 1, 3}), {batch * k, s, f});
    Tensor inter = RunPath(across, blk.inter);
    seg = Permute(Reshape(inter, {batch, k, s, f}), {0, 2, 1, 3});
  }
  return Permute(OverlapAdd(seg, frames, hop), {0, 2, 1});
}

Tensor Separator::PostnetMasks(const Tensor& features) const {
  CASNET_CHECK(features.defined() && features.ndim() == 3 &&
                   features.dim(1) == config_.enc_dim,
               "PostnetMasks: expected [batch, ", config_.enc_dim, ", frames], got ",
               features.defined() ? ShapeToString(features.shape()) : "undefined");
  const int64_t batch = features.dim(0), f = features.dim(1), frames = features.dim(2);
  const int64_t n = config_.n_sources;
  Tensor h = Permute(PRelu(features, post_slope_), {0, 2, 1});        // [B, T, F]
  h = Reshape(Linear(h, post_w_, post_b_), {batch, frames, n, f});    // [B, T, n, F]
  Tensor gated = Mul(Tanh(Linear(h, gate_out_w_, gate_out_b_)),
                     Sigmoid(Linear(h, gate_sig_w_, gate_sig_b_)));
  return Permute(Relu(gated), {0, 2, 3, 1});  // [B, n, F, T]
}

Tensor Separator::Decode(const Tensor& masked, int64_t original_length) const {
  CASNET_CHECK(masked.defined() && masked.ndim() == 4 && masked.dim(2) == config_.enc_dim,
               "Decode: expected [batch, sources, ", config_.enc_dim, ", frames], got ",
               masked.defined() ? ShapeToString(masked.shape()) : "undefined");
  CASNET_CHECK(original_length >= 1, "Decode: original length must be positive");
  const int64_t batch = masked.dim(0), n = masked.dim(1), frames = masked.dim(3);
  Tensor flat = Reshape(masked, {batch * n, config_.enc_dim, frames});
  Tensor wav = ConvTranspose1d(flat, dec_kernel_, config_.stride);  // [B*n, 1, L']
  wav = Reshape(wav, {batch, n, wav.dim(2)});
  return ResizeLast(wav, original_length);
}

Tensor Separator::Features(const Tensor& mixture, Tensor* encoded) const {
  CASNET_CHECK(mixture.defined() && mixture.ndim() == 2,
               "separator: expected mixture [batch, time]");
  const int64_t len = mixture.dim(1);
  Tensor padded = ResizeLast(mixture, PaddedLength(len));
  Tensor enc = Encode(padded);
  if (encoded != nullptr) *encoded = enc;
  return DprnnStack(enc);
}

Tensor Separator::MaskAndDecode(const Tensor& features, const Tensor& encoded,
                                int64_t length) const {
  return Decode(ApplyMasks(PostnetMasks(features), encoded), length);
}

Tensor Separator::Forward(const Tensor& mixture) const {
  Tensor encoded;
  Tensor features = Features(mixture, &encoded);
  return MaskAndDecode(features, encoded, mixture.dim(1));
}

}  // namespace casnet
