// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "casnet/casnet.h"

#include <cmath>
#include <random>
#include <set>

#include "casnet/errors.h"

namespace casnet {

namespace {

struct SourceName {
  EmbeddingSource source;
  const char* name;
};

constexpr SourceName kSourceNames[] = {
    {EmbeddingSource::kSameMixture, "same"},
    {EmbeddingSource::kOtherMixtureSameChannel, "other-same-channel"},
    {EmbeddingSource::kOtherChannel, "other-channel"},
    {EmbeddingSource::kAllOnes, "all-ones"},
    {EmbeddingSource::kGaussianNoise, "gaussian"},
    {EmbeddingSource::kBypass, "no-film"},
};

}  // namespace

std::string EmbeddingSourceName(EmbeddingSource source) {
  for (const auto& s : kSourceNames)
    if (s.source == source) return s.name;
  return "unknown";
}

EmbeddingSource ParseEmbeddingSource(const std::string& name) {
  for (const auto& s : kSourceNames)
    if (name == s.name) return s.source;
  throw ValidationError("unknown embedding source '" + name +
                        "' (expected same, other-same-channel, other-channel, all-ones, "
                        "gaussian or no-film)");
}

bool NeedsAux(EmbeddingSource source) {
  return source == EmbeddingSource::kSameMixture ||
         source == EmbeddingSource::kOtherMixtureSameChannel ||
         source == EmbeddingSource::kOtherChannel;
}

void ModelConfig::Validate() const {
  separator.Validate();
  if (!baseline) channel.Validate();
}

nlohmann::json ModelConfig::ToJson() const {
  nlohmann::json j = {{"separator", separator.ToJson()}, {"baseline", baseline}};
  if (!baseline) j["channel_encoder"] = channel.ToJson();
  return j;
}

ModelConfig ModelConfig::FromJson(const nlohmann::json& j) {
  static const std::set<std::string> kKeys = {"separator", "channel_encoder", "baseline"};
  for (const auto& [key, _] : j.items()) {
    CASNET_CHECK(kKeys.count(key), "model config: unknown key '", key, "'");
  }
  ModelConfig c;
  if (j.contains("separator")) c.separator = SeparatorConfig::FromJson(j.at("separator"));
  if (j.contains("channel_encoder"))
    c.channel = ChannelEncoderConfig::FromJson(j.at("channel_encoder"));
  c.baseline = j.value("baseline", false);
  c.Validate();
  return c;
}

CasNet::CasNet(const ModelConfig& config, uint64_t seed) : config_(config) {
  config_.Validate();
  Rng rng(seed);
  separator_ = std::make_unique<Separator>(config_.separator, params_, rng);
  if (config_.baseline) return;
  const int f = config_.separator.enc_dim, d = config_.channel.embed_dim;
  channel_encoder_ = std::make_unique<ChannelEncoder>(config_.channel, f, params_, rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  film_w_w_ = params_.AddUniform("film.w.weight", {f, d}, bound, rng);
  film_w_b_ = params_.AddConstant("film.w.bias", {f}, 1.0);
  film_b_w_ = params_.AddUniform("film.b.weight", {f, d}, bound, rng);
  film_b_b_ = params_.AddConstant("film.b.bias", {f}, 0.0);
  film_slope_ = params_.AddConstant("film.prelu", {f}, 0.25);
}

ChannelEncoder& CasNet::channel_encoder() {
  CASNET_CHECK(!config_.baseline, "baseline models have no channel encoder");
  return *channel_encoder_;
}

void CasNet::SetTraining(bool training) {
  if (channel_encoder_) channel_encoder_->set_mode(training ? NormMode::kTrain : NormMode::kEval);
}

FilmParams CasNet::ComputeFilmParams(const Tensor& embedding) const {
  CASNET_CHECK(!config_.baseline, "baseline models have no FiLM layer");
  return {Linear(embedding, film_w_w_, film_w_b_), Linear(embedding, film_b_w_, film_b_b_)};
}

Tensor CasNet::FilmApply(const Tensor& features, const FilmParams& film) const {
  CASNET_CHECK(!config_.baseline, "baseline models have no FiLM layer");
  return PRelu(ChannelAffine(InstanceNorm(features), film.w, film.b), film_slope_);
}

Tensor CasNet::ResolveEmbedding(EmbeddingSource source, int64_t batch, const Tensor& aux,
                                Rng* rng, Tensor* logits) {
  const int64_t d = config_.channel.embed_dim;
  switch (source) {
    case EmbeddingSource::kBypass:
      return Tensor();
    case EmbeddingSource::kAllOnes:
      return Tensor::Full({batch, d}, 1.0);
    case EmbeddingSource::kGaussianNoise: {
      CASNET_CHECK(rng != nullptr, "gaussian embedding source needs a random generator");
      std::normal_distribution<double> gauss(0.0, 1.0);
      std::vector<double> values(static_cast<size_t>(batch * d));
      for (double& v : values) v = gauss(*rng);
      return Tensor::FromData({batch, d}, std::move(values));
    }
    default: {
      CASNET_CHECK(aux.defined(), "embedding source '", EmbeddingSourceName(source),
                   "' needs an auxiliary mixture");
      CASNET_CHECK(aux.ndim() == 2 && aux.dim(0) == batch, "auxiliary mixtures must be [",
                   batch, ", time], got ", ShapeToString(aux.shape()));
      Tensor c = channel_encoder_->EncodeChannel(*separator_, aux);
      if (logits != nullptr) *logits = channel_encoder_->Classify(c);
      return c;
    }
  }
}

ForwardOutput CasNet::Forward(const Tensor& mixture, EmbeddingSource source, const Tensor& aux,
                              Rng* rng) {
  CASNET_CHECK(mixture.defined() && mixture.ndim() == 2,
               "Forward: expected mixture [batch, time]");
  ForwardOutput out;
  if (source == EmbeddingSource::kBypass) {
    out.estimates = separator_->Forward(mixture);
    return out;
  }
  CASNET_CHECK(!config_.baseline, "baseline models only support the no-film source, got '",
               EmbeddingSourceName(source), "'");
  Tensor encoded;
  Tensor features = separator_->Features(mixture, &encoded);
  out.embedding = ResolveEmbedding(source, mixture.dim(0), aux, rng, &out.logits);
  Tensor modulated = FilmApply(features, ComputeFilmParams(out.embedding));
  out.estimates = separator_->MaskAndDecode(modulated, encoded, mixture.dim(1));
  return out;
}

void CasNet::Save(const std::string& path, const nlohmann::json& extra_meta) const {
  nlohmann::json meta = extra_meta.is_object() ? extra_meta : nlohmann::json::object();
  meta["model"] = config_.ToJson();
  SaveCheckpoint(path, params_, meta);
}

std::unique_ptr<CasNet> CasNet::Load(const std::string& path) {
  Checkpoint ckpt = LoadCheckpoint(path);
  if (!ckpt.meta.contains("model")) {
    throw IoError("checkpoint '" + path + "' has no model config in its header");
  }
  ModelConfig config;
  try {
    config = ModelConfig::FromJson(ckpt.meta.at("model"));
  } catch (const ValidationError& e) {
    throw IoError("checkpoint '" + path + "': " + e.what());
  }
  auto model = std::make_unique<CasNet>(config, 0);
  try {
    ApplyCheckpoint(ckpt, model->params());
  } catch (const ValidationError& e) {
    throw IoError("checkpoint '" + path + "': " + e.what());
  }
  model->SetTraining(false);
  return model;
}

}  // namespace casnet
