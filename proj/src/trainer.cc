// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "casnet/trainer.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "casnet/errors.h"
#include "casnet/evalkit.h"
#include "casnet/objectives.h"

namespace casnet {

std::string StrategyName(Strategy s) {
  switch (s) {
    case Strategy::kGuideSame: return "guide-same";
    case Strategy::kGuideDiff: return "guide-diff";
    case Strategy::kPerturb: return "perturb";
  }
  return "unknown";
}

Strategy ParseStrategy(const std::string& name) {
  if (name == "guide-same") return Strategy::kGuideSame;
  if (name == "guide-diff") return Strategy::kGuideDiff;
  if (name == "perturb") return Strategy::kPerturb;
  throw ValidationError("unknown strategy '" + name +
                        "' (expected guide-same, guide-diff or perturb)");
}

void TrainConfig::Validate() const {
  CASNET_CHECK(gamma >= 0.0 && std::isfinite(gamma), "gamma must be >= 0, got ", gamma);
  CASNET_CHECK(epochs >= 1, "epochs must be >= 1, got ", epochs);
  CASNET_CHECK(batch_size >= 1, "batch_size must be >= 1, got ", batch_size);
  CASNET_CHECK(segment_s > 0.0, "segment_s must be positive, got ", segment_s);
  CASNET_CHECK(lr_init > 0.0, "lr_init must be positive, got ", lr_init);
  CASNET_CHECK(plateau_patience >= 1, "plateau_patience must be >= 1, got ", plateau_patience);
  CASNET_CHECK(clip_norm > 0.0, "clip_norm must be positive, got ", clip_norm);
  CASNET_CHECK(extra_blocks >= 0, "extra_blocks must be >= 0, got ", extra_blocks);
  CASNET_CHECK(steps_per_epoch >= 0 && max_steps >= 0 && valid_items >= 0,
               "step and item limits must be >= 0");
  CASNET_CHECK(valid_segment_s >= 0.0, "valid_segment_s must be >= 0");
  model.separator.Validate();
  if (!baseline) model.channel.Validate();
}

nlohmann::json TrainConfig::ToJson() const {
  ModelConfig m = model;
  m.baseline = baseline;
  return {{"strategy", StrategyName(strategy)},
          {"gamma", gamma},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"segment_s", segment_s},
          {"lr_init", lr_init},
          {"plateau_patience", plateau_patience},
          {"clip_norm", clip_norm},
          {"seed", seed},
          {"baseline", baseline},
          {"extra_blocks", extra_blocks},
          {"steps_per_epoch", steps_per_epoch},
          {"max_steps", max_steps},
          {"valid_items", valid_items},
          {"valid_segment_s", valid_segment_s},
          {"model", m.ToJson()}};
}

TrainConfig TrainConfig::FromJson(const nlohmann::json& j) {
  static const std::set<std::string> kKeys = {
      "strategy",   "gamma",       "epochs",          "batch_size", "segment_s",
      "lr_init",    "plateau_patience", "clip_norm",  "seed",       "baseline",
      "extra_blocks", "steps_per_epoch", "max_steps", "valid_items", "valid_segment_s",
      "model"};
  CASNET_CHECK(j.is_object(), "train config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    CASNET_CHECK(kKeys.count(key), "train config: unknown key '", key, "'");
  }
  TrainConfig c;
  try {
    if (j.contains("strategy")) c.strategy = ParseStrategy(j.at("strategy").get<std::string>());
    c.gamma = j.value("gamma", c.gamma);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.segment_s = j.value("segment_s", c.segment_s);
    c.lr_init = j.value("lr_init", c.lr_init);
    c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.seed = j.value("seed", c.seed);
    c.baseline = j.value("baseline", c.baseline);
    c.extra_blocks = j.value("extra_blocks", c.extra_blocks);
    c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.valid_items = j.value("valid_items", c.valid_items);
    c.valid_segment_s = j.value("valid_segment_s", c.valid_segment_s);
    if (j.contains("model")) {
      nlohmann::json m = j.at("model");
      m.erase("baseline");
      c.model = ModelConfig::FromJson(m);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  c.model.baseline = c.baseline;
  c.Validate();
  return c;
}

SamplingIndex::SamplingIndex(const Manifest& manifest) : manifest_(&manifest) {
  for (size_t i = 0; i < manifest.records.size(); ++i) {
    by_channel_[manifest.records[i].channel_id].push_back(i);
  }
  for (const auto& [ch, _] : by_channel_) channels_.push_back(ch);
}

void SamplingIndex::CheckSatisfiable(Strategy strategy) const {
  const auto& m = *manifest_;
  std::set<std::string> ids;
  for (const auto& r : m.records) ids.insert(r.mixture_id);
  CASNET_CHECK(ids.size() >= 2, "split '", m.split, "' needs at least 2 mixtures, has ",
               ids.size());
  if (strategy == Strategy::kPerturb) {
    CASNET_CHECK(channels_.size() >= 2, "strategy perturb needs at least 2 training channels, ",
                 "split '", m.split, "' has ", channels_.size());
  }
  if (strategy != Strategy::kGuideSame) {
    for (int ch : channels_) {
      std::set<std::string> on_ch;
      for (size_t i : by_channel_.at(ch)) on_ch.insert(m.records[i].mixture_id);
      CASNET_CHECK(on_ch.size() >= 2, "strategy ", StrategyName(strategy),
                   " needs at least 2 mixtures on every channel; channel ", ch, " has ",
                   on_ch.size());
    }
  }
}

namespace {

size_t Uniform(Rng& rng, size_t n) {
  std::uniform_int_distribution<size_t> d(0, n - 1);
  return d(rng);
}

// Uniform draw from `pool` excluding records whose mixture id is `exclude`.
size_t DrawOtherMixture(const Manifest& m, const std::vector<size_t>& pool,
                        const std::string& exclude, Rng& rng) {
  std::vector<size_t> valid;
  for (size_t i : pool)
    if (m.records[i].mixture_id != exclude) valid.push_back(i);
  CASNET_CHECK(!valid.empty(), "no other mixture available besides '", exclude, "'");
  return valid[Uniform(rng, valid.size())];
}

}  // namespace

TrainingItem SampleTrainingItem(Strategy strategy, const SamplingIndex& index, Rng& rng) {
  const auto& m = index.manifest();
  const auto& channels = index.channels();
  CASNET_CHECK(!channels.empty(), "cannot sample from an empty split");
  const int c = channels[Uniform(rng, channels.size())];
  const auto& pool = index.records_on(c);
  TrainingItem item;
  item.record = pool[Uniform(rng, pool.size())];
  const std::string& id = m.records[item.record].mixture_id;
  switch (strategy) {
    case Strategy::kGuideSame:
      item.aux_record = item.record;
      break;
    case Strategy::kGuideDiff:
      item.aux_record = DrawOtherMixture(m, pool, id, rng);
      break;
    case Strategy::kPerturb: {
      std::vector<int> others;
      for (int ch : channels)
        if (ch != c) others.push_back(ch);
      CASNET_CHECK(!others.empty(), "strategy perturb needs at least 2 channels");
      const int c2 = others[Uniform(rng, others.size())];
      item.aux_record = DrawOtherMixture(m, index.records_on(c2), id, rng);
      break;
    }
  }
  item.label = m.records[item.aux_record].channel_id;
  return item;
}

Adam::Adam(std::vector<Tensor> params, double lr) : params_(std::move(params)), lr_(lr) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::Step() {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ++t_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    if (!params_[k].has_grad()) continue;
    auto w = params_[k].mutable_data();
    const auto g = params_[k].grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (size_t i = 0; i < w.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
    }
  }
}

double ClipGradNorm(const std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    if (p.has_grad())
      for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto p : params)
      if (p.has_grad())
        for (double& g : p.mutable_grad()) g *= scale;
  }
  return norm;
}

ModelConfig ResolveModelConfig(const TrainConfig& config, const Manifest& train) {
  ModelConfig m = config.model;
  m.baseline = config.baseline;
  m.separator.n_blocks += config.extra_blocks;
  int classes = 0;
  for (const auto& p : train.profiles) classes = std::max(classes, p.channel_id + 1);
  for (const auto& r : train.records) classes = std::max(classes, r.channel_id + 1);
  m.channel.n_classes = std::max(classes, 2);
  m.Validate();
  return m;
}

nlohmann::json FitResult::Meta(const TrainConfig& config) const {
  return {{"kind", config.baseline ? "baseline" : "casnet"},
          {"train", config.ToJson()},
          {"best_epoch", best_epoch},
          {"best_val_sisnri", best_val_sisnri},
          {"steps", steps_run}};
}

FitResult Fit(const TrainConfig& config, const CorpusSplit& train, const CorpusSplit& valid,
              const FitCallbacks& callbacks) {
  config.Validate();
  const Manifest& tm = train.manifest;
  CASNET_CHECK(train.audio.size() == tm.records.size(), "train split audio/manifest mismatch");
  CASNET_CHECK(!valid.manifest.records.empty(), "validation split is empty");
  SamplingIndex index(tm);
  const Strategy strategy = config.baseline ? Strategy::kGuideSame : config.strategy;
  index.CheckSatisfiable(strategy);

  int64_t min_len = std::numeric_limits<int64_t>::max();
  for (const auto& a : train.audio) min_len = std::min<int64_t>(min_len, a.mixture.size());
  const int64_t seg =
      std::min<int64_t>(min_len, std::llround(config.segment_s * tm.sample_rate));

  FitResult result;
  result.model = std::make_unique<CasNet>(ResolveModelConfig(config, tm), config.seed);
  CasNet& model = *result.model;
  CASNET_CHECK(seg >= model.config().separator.win, "segment of ", seg,
               " samples is shorter than the encoder window");
  model.SetTraining(true);
  const std::vector<Tensor> trainable = model.params().Trainable();
  Adam adam(trainable, config.lr_init);
  Rng rng(DeriveSeed(config.seed, {0x7EA1}));

  const int batch = config.batch_size;
  const int steps_per_epoch =
      config.steps_per_epoch > 0
          ? config.steps_per_epoch
          : static_cast<int>((tm.records.size() + batch - 1) / batch);
  const EmbeddingSource train_source =
      config.baseline ? EmbeddingSource::kBypass
      : strategy == Strategy::kGuideSame ? EmbeddingSource::kSameMixture
      : strategy == Strategy::kGuideDiff ? EmbeddingSource::kOtherMixtureSameChannel
                                                : EmbeddingSource::kOtherChannel;

  EvalOptions val_opts;
  val_opts.source = config.baseline ? EmbeddingSource::kBypass : EmbeddingSource::kSameMixture;
  val_opts.seed = config.seed;
  val_opts.channels = valid.manifest.ChannelIds();
  val_opts.max_items = config.valid_items;
  val_opts.segment_s = config.valid_segment_s;

  std::vector<std::vector<double>> best_snapshot = model.params().Snapshot();
  PlateauSchedule schedule(config.lr_init, config.plateau_patience);
  double best_val = -std::numeric_limits<double>::infinity();
  int step = 0;
  bool done = false;
  for (int epoch = 1; epoch <= config.epochs && !done; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = adam.lr();
    int epoch_steps = 0;
    for (int s = 0; s < steps_per_epoch; ++s) {
      std::vector<double> mix(batch * seg), aux(batch * seg), tgt(batch * 2 * seg);
      std::vector<int> labels(batch);
      for (int b = 0; b < batch; ++b) {
        const TrainingItem item = SampleTrainingItem(strategy, index, rng);
        const auto& a = train.audio[item.record];
        const auto& x = train.audio[item.aux_record];
        std::uniform_int_distribution<int64_t> off_d(0, a.mixture.size() - seg);
        const int64_t off = off_d(rng);
        int64_t aux_off = off;
        if (item.aux_record != item.record) {
          std::uniform_int_distribution<int64_t> aux_d(0, x.mixture.size() - seg);
          aux_off = aux_d(rng);
        }
        std::copy_n(a.mixture.samples.begin() + off, seg, mix.begin() + b * seg);
        std::copy_n(a.target1.samples.begin() + off, seg, tgt.begin() + (2 * b) * seg);
        std::copy_n(a.target2.samples.begin() + off, seg, tgt.begin() + (2 * b + 1) * seg);
        std::copy_n(x.mixture.samples.begin() + aux_off, seg, aux.begin() + b * seg);
        labels[b] = item.label;
      }
      Tensor mix_t = Tensor::FromData({batch, seg}, std::move(mix));
      Tensor aux_t = Tensor::FromData({batch, seg}, std::move(aux));
      Tensor tgt_t = Tensor::FromData({batch, 2, seg}, std::move(tgt));

      ForwardOutput out = model.Forward(mix_t, train_source, aux_t, &rng);
      PitResult pit = PitLoss(out.estimates, tgt_t);
      Tensor l_ci = out.logits.defined() ? ChannelIdLoss(out.logits, labels) : Tensor();
      LossBreakdown loss = TotalLoss(pit, l_ci, config.baseline ? 0.0 : config.gamma);
      ++step;
      if (!std::isfinite(loss.l_total)) {
        throw NumericError("non-finite loss at step " + std::to_string(step) + " (l_rc " +
                           std::to_string(loss.l_rc) + ", l_ci " + std::to_string(loss.l_ci) +
                           ")");
      }
      model.params().ZeroGrad();
      Backward(loss.total);
      StepRecord sr{step, loss.l_rc, loss.l_ci, loss.l_total,
                    ClipGradNorm(trainable, config.clip_norm), adam.lr()};
      adam.Step();
      result.steps.push_back(sr);
      if (callbacks.on_step) callbacks.on_step(sr);
      rec.l_rc += loss.l_rc;
      rec.l_ci += loss.l_ci;
      rec.l_total += loss.l_total;
      ++epoch_steps;
      if (config.max_steps > 0 && step >= config.max_steps) {
        done = true;
        break;
      }
    }
    rec.l_rc /= epoch_steps;
    rec.l_ci /= epoch_steps;
    rec.l_total /= epoch_steps;

    rec.val_sisnri = Evaluate(model, valid, val_opts).mean_sisnri;
    model.SetTraining(true);
    if (schedule.Observe(rec.val_sisnri)) {
      best_val = rec.val_sisnri;
      best_snapshot = model.params().Snapshot();
      result.best_epoch = epoch;
    }
    adam.set_lr(schedule.lr());
    result.epochs.push_back(rec);
    if (callbacks.on_epoch) callbacks.on_epoch(rec);
  }
  model.params().Restore(best_snapshot);
  model.SetTraining(false);
  result.best_val_sisnri = best_val;
  result.steps_run = step;
  return result;
}

bool PlateauSchedule::Observe(double score) {
  if (score > best_) {
    best_ = score;
    stale_ = 0;
    return true;
  }
  if (++stale_ >= patience_) {
    lr_ /= 2.0;
    stale_ = 0;
  }
  return false;
}

FitResult TrainBaseline(const TrainConfig& config, const CorpusSplit& train,
                        const CorpusSplit& valid, const FitCallbacks& callbacks) {
  TrainConfig c = config;
  c.baseline = true;
  c.model.baseline = true;
  c.gamma = 0.0;
  return Fit(c, train, valid, callbacks);
}

namespace {

std::string Num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string Sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

std::string MetricsCsv(const std::vector<EpochRecord>& epochs) {
  std::string out = "epoch,l_rc,l_ci,l_total,val_sisnri,lr\n";
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch) + "," + Num(e.l_rc) + "," + Num(e.l_ci) + "," +
           Num(e.l_total) + "," + Num(e.val_sisnri) + "," + Sci(e.lr) + "\n";
  }
  return out;
}

std::string StepsCsv(const std::vector<StepRecord>& steps) {
  std::string out = "step,l_rc,l_ci,l_total,grad_norm,lr\n";
  for (const auto& s : steps) {
    out += std::to_string(s.step) + "," + Num(s.l_rc) + "," + Num(s.l_ci) + "," +
           Num(s.l_total) + "," + Num(s.grad_norm) + "," + Sci(s.lr) + "\n";
  }
  return out;
}

}  // namespace casnet
