// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Full conditioned separator. A channel embedding C modulates the separation
// features between the dual-path stack and the Post-Net:
//
//   W = Linear_w(C), b = Linear_b(C)
//   S' = PReLU(W * InstanceNorm(S) + b)     (W, b broadcast over time)
//
// C comes from the channel encoder run on an auxiliary mixture, or is
// replaced by ones or by standard-normal draws. Bypass skips the modulation
// and is exactly the unconditioned separator.

#ifndef CASNET_CASNET_H_
#define CASNET_CASNET_H_

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"

#include "casnet/channel_encoder.h"
#include "casnet/params.h"
#include "casnet/separator.h"

namespace casnet {

enum class EmbeddingSource {
  kSameMixture,
  kOtherMixtureSameChannel,
  kOtherChannel,
  kAllOnes,
  kGaussianNoise,
  kBypass,
};

// CLI spellings: same, other-same-channel, other-channel, all-ones, gaussian,
// no-film.
std::string EmbeddingSourceName(EmbeddingSource source);
EmbeddingSource ParseEmbeddingSource(const std::string& name);
// True when C is computed by the channel encoder from an auxiliary mixture.
bool NeedsAux(EmbeddingSource source);

struct ModelConfig {
  SeparatorConfig separator;
  ChannelEncoderConfig channel;
  // Baseline models own only separator parameters.
  bool baseline = false;

  void Validate() const;
  nlohmann::json ToJson() const;
  static ModelConfig FromJson(const nlohmann::json& j);
};

struct FilmParams {
  Tensor w;  // [M, enc_dim]
  Tensor b;  // [M, enc_dim]
};

struct ForwardOutput {
  Tensor estimates;  // [B, n_sources, L]
  Tensor embedding;  // [B, D]; undefined for Bypass
  Tensor logits;     // [B, n_classes]; defined only when C was encoded
};

class CasNet {
 public:
  // Parameters are drawn from one stream seeded with `seed`, separator
  // first, so a baseline and a full model with equal seeds share their
  // separator initialization.
  CasNet(const ModelConfig& config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  bool baseline() const { return config_.baseline; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const Separator& separator() const { return *separator_; }
  ChannelEncoder& channel_encoder();

  // Batch-norm layers use batch statistics when training, running ones
  // otherwise.
  void SetTraining(bool training);

  FilmParams ComputeFilmParams(const Tensor& embedding) const;
  Tensor FilmApply(const Tensor& features, const FilmParams& film) const;

  // Resolves C for `source`. `aux` is [B, L'] for aux-driven sources; `rng`
  // is required for Gaussian noise. Returns undefined for Bypass.
  Tensor ResolveEmbedding(EmbeddingSource source, int64_t batch, const Tensor& aux,
                          Rng* rng, Tensor* logits);

  // mixture [B, L]. aux is required iff NeedsAux(source); for kSameMixture
  // the caller passes the mixture itself.
  ForwardOutput Forward(const Tensor& mixture, EmbeddingSource source, const Tensor& aux,
                        Rng* rng = nullptr);

  // Saves parameters with {"model": config} in the header.
  void Save(const std::string& path, const nlohmann::json& extra_meta = {}) const;
  // Builds a model from a checkpoint's stored config and values.
  static std::unique_ptr<CasNet> Load(const std::string& path);

  Tensor film_w_weight() const { return film_w_w_; }
  Tensor film_w_bias() const { return film_w_b_; }
  Tensor film_b_weight() const { return film_b_w_; }
  Tensor film_b_bias() const { return film_b_b_; }
  Tensor film_slope() const { return film_slope_; }

 private:
  ModelConfig config_;
  ParameterSet params_;
  std::unique_ptr<Separator> separator_;
  std::unique_ptr<ChannelEncoder> channel_encoder_;
  Tensor film_w_w_, film_w_b_;  // C -> W
  Tensor film_b_w_, film_b_b_;  // C -> b
  Tensor film_slope_;           // [enc_dim]
};

}  // namespace casnet

#endif  // CASNET_CASNET_H_
