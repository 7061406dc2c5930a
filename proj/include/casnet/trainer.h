// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Training loop for the conditioned model and the plain baseline.
//
// Each item picks a channel c and a mixture n recorded on it; the auxiliary
// mixture for the channel encoder is chosen by the strategy:
//   guide-same   same mixture, same channel
//   guide-diff   other mixture, same channel
//   perturb      other mixture, other channel
// The classifier target is the channel of the auxiliary mixture.

#ifndef CASNET_TRAINER_H_
#define CASNET_TRAINER_H_

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "casnet/casnet.h"
#include "casnet/corpus.h"

namespace casnet {

enum class Strategy { kGuideSame, kGuideDiff, kPerturb };

std::string StrategyName(Strategy s);  // guide-same, guide-diff, perturb
Strategy ParseStrategy(const std::string& name);

struct TrainConfig {
  Strategy strategy = Strategy::kGuideSame;
  double gamma = 0.0;
  int epochs = 30;
  int batch_size = 4;
  double segment_s = 3.0;
  double lr_init = 1.5e-4;
  int plateau_patience = 2;
  double clip_norm = 5.0;
  uint64_t seed = 0;
  bool baseline = false;
  // Extra separation blocks on top of model.separator.n_blocks.
  int extra_blocks = 0;
  // 0 derives ceil(train records / batch_size).
  int steps_per_epoch = 0;
  // Stop after this many optimizer steps in total (0 = no limit).
  int max_steps = 0;
  // Validation on the first `valid_items` records (0 = all), cropped to
  // `valid_segment_s` seconds (0 = full length).
  int valid_items = 0;
  double valid_segment_s = 0.0;
  ModelConfig model;

  void Validate() const;
  nlohmann::json ToJson() const;
  static TrainConfig FromJson(const nlohmann::json& j);
};

// Records grouped for the sampler; built once per split.
class SamplingIndex {
 public:
  explicit SamplingIndex(const Manifest& manifest);

  const std::vector<int>& channels() const { return channels_; }
  const std::vector<size_t>& records_on(int channel) const { return by_channel_.at(channel); }
  const Manifest& manifest() const { return *manifest_; }
  // Throws ValidationError when `strategy` cannot be satisfied.
  void CheckSatisfiable(Strategy strategy) const;

 private:
  const Manifest* manifest_;
  std::vector<int> channels_;
  std::map<int, std::vector<size_t>> by_channel_;
};

struct TrainingItem {
  size_t record = 0;      // x_n^c
  size_t aux_record = 0;  // x_m^c'
  int label = 0;          // c'
};

TrainingItem SampleTrainingItem(Strategy strategy, const SamplingIndex& index, Rng& rng);

struct StepRecord {
  int step = 0;
  double l_rc = 0.0;
  double l_ci = 0.0;
  double l_total = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double l_rc = 0.0;
  double l_ci = 0.0;
  double l_total = 0.0;
  double val_sisnri = 0.0;
  double lr = 0.0;
};

struct FitResult {
  std::unique_ptr<CasNet> model;  // best-validation parameters
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
  int best_epoch = 0;
  double best_val_sisnri = 0.0;
  int steps_run = 0;

  // Header metadata stored with the checkpoint.
  nlohmann::json Meta(const TrainConfig& config) const;
};

// Adam with (0.9, 0.999) moment coefficients and eps 1e-8.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double lr);
  void Step();
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_;
  int64_t t_ = 0;
};

// Halves the learning rate after `patience` consecutive validation scores
// that fail to beat the best one so far.
class PlateauSchedule {
 public:
  PlateauSchedule(double lr, int patience) : lr_(lr), patience_(patience) {}
  // Records one score; returns true when it is a new best.
  bool Observe(double score);
  double lr() const { return lr_; }

 private:
  double lr_;
  int patience_;
  int stale_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
};

// Scales every grad so the global L2 norm is at most `max_norm`. Returns the
// norm before clipping.
double ClipGradNorm(const std::vector<Tensor>& params, double max_norm);

struct FitCallbacks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const StepRecord&)> on_step;
};

// Trains on `train`, validates on `valid` with SameMixture embeddings (the
// separator path for baselines) and keeps the best-validation parameters.
// The model's classifier size is set to the corpus channel count.
FitResult Fit(const TrainConfig& config, const CorpusSplit& train, const CorpusSplit& valid,
              const FitCallbacks& callbacks = {});
// Fit with config.baseline forced on: no channel encoder, FiLM or L_ci.
FitResult TrainBaseline(const TrainConfig& config, const CorpusSplit& train,
                        const CorpusSplit& valid, const FitCallbacks& callbacks = {});

// Model config actually trained for `config` on a corpus with the given
// channel profiles.
ModelConfig ResolveModelConfig(const TrainConfig& config, const Manifest& train);

// "epoch,l_rc,l_ci,l_total,val_sisnri,lr" rows.
std::string MetricsCsv(const std::vector<EpochRecord>& epochs);
std::string StepsCsv(const std::vector<StepRecord>& steps);

}  // namespace casnet

#endif  // CASNET_TRAINER_H_
