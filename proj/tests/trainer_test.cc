// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "doctest.h"

#include "casnet/corpus.h"
#include "casnet/errors.h"
#include "casnet/objectives.h"
#include "casnet/trainer.h"

using namespace casnet;

namespace {

const Corpus& SmallCorpus() {
  static const Corpus corpus = [] {
    CorpusConfig c;
    c.duration_s = 0.25;
    c.train_count = 6;
    c.valid_count = 2;
    c.test_count = 2;
    c.n_channels = 4;
    c.holdout_channel = 3;
    return BuildCorpus(c);
  }();
  return corpus;
}

TrainConfig TinyTrain() {
  TrainConfig t;
  t.epochs = 2;
  t.batch_size = 2;
  t.segment_s = 0.1;
  t.lr_init = 1e-3;
  t.steps_per_epoch = 3;
  t.seed = 4;
  ModelConfig& m = t.model;
  m.separator.enc_dim = 8;
  m.separator.win = 8;
  m.separator.stride = 4;
  m.separator.n_blocks = 1;
  m.separator.chunk_size = 10;
  m.separator.hidden = 6;
  m.channel.blocks = 1;
  m.channel.width = 6;
  m.channel.embed_dim = 6;
  m.channel.se_reduction = 2;
  return t;
}

double GradNorm(const ParameterSet& ps, const std::string& prefix) {
  double sq = 0;
  for (const auto& p : ps.entries()) {
    if (p.name.rfind(prefix, 0) != 0 || !p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

// Mixture and target batch from the first `batch` train records.
void FixedBatch(int batch, int64_t len, Tensor* mix, Tensor* tgt) {
  const auto& audio = SmallCorpus().train.audio;
  std::vector<double> m, t;
  for (int b = 0; b < batch; ++b) {
    const auto& a = audio[b];
    m.insert(m.end(), a.mixture.samples.begin(), a.mixture.samples.begin() + len);
    t.insert(t.end(), a.target1.samples.begin(), a.target1.samples.begin() + len);
    t.insert(t.end(), a.target2.samples.begin(), a.target2.samples.begin() + len);
  }
  *mix = Tensor::FromData({batch, len}, m);
  *tgt = Tensor::FromData({batch, 2, len}, t);
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("guide-same pairs every item with itself") {
  SamplingIndex index(SmallCorpus().train.manifest);
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const TrainingItem it = SampleTrainingItem(Strategy::kGuideSame, index, rng);
    CHECK(it.aux_record == it.record);
    CHECK(it.label == index.manifest().records[it.record].channel_id);
  }
}

TEST_CASE("guide-diff keeps the channel and changes the mixture") {
  const Manifest& m = SmallCorpus().train.manifest;
  SamplingIndex index(m);
  Rng rng(2);
  for (int i = 0; i < 2000; ++i) {
    const TrainingItem it = SampleTrainingItem(Strategy::kGuideDiff, index, rng);
    CHECK(m.records[it.aux_record].channel_id == m.records[it.record].channel_id);
    CHECK(m.records[it.aux_record].mixture_id != m.records[it.record].mixture_id);
    CHECK(it.label == m.records[it.aux_record].channel_id);
  }
}

TEST_CASE("perturb never shares channel or mixture over 10^4 draws") {
  const Manifest& m = SmallCorpus().train.manifest;
  SamplingIndex index(m);
  Rng rng(3);
  int same_channel = 0;
  std::vector<int> label_counts(3, 0);
  for (int i = 0; i < 10000; ++i) {
    const TrainingItem it = SampleTrainingItem(Strategy::kPerturb, index, rng);
    same_channel += m.records[it.aux_record].channel_id == m.records[it.record].channel_id;
    CHECK(m.records[it.aux_record].mixture_id != m.records[it.record].mixture_id);
    ++label_counts.at(it.label);
  }
  CHECK(same_channel == 0);
  for (int c : label_counts) CHECK(c > 2500);
}

TEST_CASE("sampling streams repeat under a fixed seed") {
  SamplingIndex index(SmallCorpus().train.manifest);
  Rng a(9), b(9);
  for (int i = 0; i < 500; ++i) {
    const TrainingItem x = SampleTrainingItem(Strategy::kPerturb, index, a);
    const TrainingItem y = SampleTrainingItem(Strategy::kPerturb, index, b);
    CHECK(x.record == y.record);
    CHECK(x.aux_record == y.aux_record);
  }
}

TEST_CASE("unsatisfiable strategies are rejected up front") {
  Manifest one_channel = SmallCorpus().train.manifest;
  std::erase_if(one_channel.records, [](const MixtureRecord& r) { return r.channel_id != 0; });
  SamplingIndex idx(one_channel);
  CHECK_THROWS_AS(idx.CheckSatisfiable(Strategy::kPerturb), ValidationError);
  idx.CheckSatisfiable(Strategy::kGuideDiff);
  Manifest one_mixture = SmallCorpus().train.manifest;
  std::erase_if(one_mixture.records, [](const MixtureRecord& r) { return r.mixture_id != "train-0000"; });
  SamplingIndex idx2(one_mixture);
  CHECK_THROWS_AS(idx2.CheckSatisfiable(Strategy::kGuideSame), ValidationError);
}

TEST_CASE("plateau schedule halves after two stale epochs") {
  PlateauSchedule s(1.5e-4, 2);
  CHECK(s.Observe(1.0));
  CHECK_FALSE(s.Observe(0.5));
  CHECK(s.lr() == 1.5e-4);
  CHECK_FALSE(s.Observe(1.0));
  CHECK(s.lr() == 1.5e-4 / 2);
  CHECK(s.Observe(1.2));
  CHECK_FALSE(s.Observe(1.1));
  CHECK(s.lr() == 1.5e-4 / 2);
  CHECK_FALSE(s.Observe(1.1));
  CHECK(s.lr() == 1.5e-4 / 4);
}

TEST_CASE("adam first step moves by the learning rate against the gradient sign") {
  Tensor w = Tensor::FromData({3}, {1.0, -2.0, 0.5}, true);
  Adam adam({w}, 0.01);
  Backward(Sum(Mul(w, Tensor::FromData({3}, {3.0, -0.5, 1e-3}))));
  adam.Step();
  CHECK(w.data()[0] == doctest::Approx(0.99).epsilon(1e-9));
  CHECK(w.data()[1] == doctest::Approx(-1.99).epsilon(1e-9));
  CHECK(w.data()[2] == doctest::Approx(0.49).epsilon(1e-6));
}

TEST_CASE("gradient clipping caps the global norm") {
  Tensor a = Tensor::FromData({2}, {0.0, 0.0}, true), b = Tensor::FromData({1}, {0.0}, true);
  Backward(Add(Sum(Mul(a, Tensor::FromData({2}, {3.0, 0.0}))), Sum(MulScalar(b, 4.0))));
  CHECK(ClipGradNorm({a, b}, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
  CHECK(b.grad()[0] == doctest::Approx(0.8));
  CHECK(ClipGradNorm({a, b}, 10.0) == doctest::Approx(1.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6));
}

TEST_CASE("loss on a fixed batch decreases over 50 steps") {
  const TrainConfig cfg = TinyTrain();
  CasNet model(ResolveModelConfig(cfg, SmallCorpus().train.manifest), 1);
  Tensor mix, tgt;
  FixedBatch(2, 400, &mix, &tgt);
  Adam adam(model.params().Trainable(), 3e-3);
  std::vector<double> losses;
  for (int step = 0; step < 50; ++step) {
    model.params().ZeroGrad();
    ForwardOutput out = model.Forward(mix, EmbeddingSource::kSameMixture, mix);
    PitResult pit = PitLoss(out.estimates, tgt);
    Backward(pit.loss);
    ClipGradNorm(model.params().Trainable(), 5.0);
    adam.Step();
    losses.push_back(pit.loss.item());
  }
  std::vector<double> smooth;
  for (size_t i = 0; i + 5 <= losses.size(); ++i) {
    double s = 0;
    for (size_t k = i; k < i + 5; ++k) s += losses[k];
    smooth.push_back(s / 5);
  }
  std::ostringstream trace;
  for (double l : losses) trace << l << " ";
  INFO(trace.str());
  for (size_t i = 1; i < smooth.size(); ++i) CHECK(smooth[i] < smooth[i - 1]);
  CHECK(losses.back() < losses.front());
}

TEST_CASE("probe step: gradients reach the channel encoder, and gamma 0 spares the classifier") {
  const TrainConfig cfg = TinyTrain();
  CasNet model(ResolveModelConfig(cfg, SmallCorpus().train.manifest), 2);
  Tensor mix, tgt;
  FixedBatch(2, 400, &mix, &tgt);
  const std::vector<int> labels = {0, 1};
  for (double gamma : {0.0, 0.1}) {
    model.params().ZeroGrad();
    ForwardOutput out = model.Forward(mix, EmbeddingSource::kSameMixture, mix);
    LossBreakdown loss = TotalLoss(PitLoss(out.estimates, tgt), ChannelIdLoss(out.logits, labels), gamma);
    Backward(loss.total);
    CHECK(GradNorm(model.params(), "chan.") > 0.0);
    CHECK(GradNorm(model.params(), "film.") > 0.0);
    if (gamma == 0.0) {
      CHECK(GradNorm(model.params(), "classifier.") == 0.0);
    } else {
      CHECK(GradNorm(model.params(), "classifier.") > 0.0);
    }
  }
}

TEST_CASE("fit logs the exact total loss and is reproducible") {
  const Corpus& c = SmallCorpus();
  TrainConfig cfg = TinyTrain();
  cfg.strategy = Strategy::kPerturb;
  cfg.gamma = 0.3;
  const FitResult a = Fit(cfg, c.train, c.valid);
  const FitResult b = Fit(cfg, c.train, c.valid);
  REQUIRE(a.steps.size() == 6);
  for (const auto& s : a.steps) CHECK(s.l_total == s.l_rc + 0.3 * s.l_ci);
  CHECK(a.best_val_sisnri == b.best_val_sisnri);
  CHECK(MetricsCsv(a.epochs) == MetricsCsv(b.epochs));
  CHECK(StepsCsv(a.steps) == StepsCsv(b.steps));
  CHECK(MetricsCsv(a.epochs).rfind("epoch,l_rc,l_ci,l_total,val_sisnri,lr\n", 0) == 0);
  CHECK(a.model->config().channel.n_classes == 4);
}

TEST_CASE("max steps stops training early") {
  TrainConfig cfg = TinyTrain();
  cfg.max_steps = 4;
  const FitResult r = Fit(cfg, SmallCorpus().train, SmallCorpus().valid);
  CHECK(r.steps_run == 4);
  CHECK(r.epochs.size() == 2);
}

TEST_CASE("baseline training owns no channel or FiLM parameters") {
  TrainConfig cfg = TinyTrain();
  cfg.epochs = 1;
  const FitResult r = TrainBaseline(cfg, SmallCorpus().train, SmallCorpus().valid);
  CHECK(r.model->baseline());
  for (const auto& p : r.model->params().entries()) CHECK(p.name.rfind("sep.", 0) == 0);
  for (const auto& s : r.steps) CHECK(s.l_ci == 0.0);
}

TEST_CASE("two extra blocks add parameters") {
  TrainConfig cfg = TinyTrain();
  cfg.baseline = true;
  const Manifest& m = SmallCorpus().train.manifest;
  CasNet base(ResolveModelConfig(cfg, m), 0);
  cfg.extra_blocks = 2;
  CasNet large(ResolveModelConfig(cfg, m), 0);
  CHECK(large.config().separator.n_blocks == base.config().separator.n_blocks + 2);
  CHECK(large.params().CountTrainable() > base.params().CountTrainable());
}

TEST_CASE("a diverging run aborts with the step index") {
  TrainConfig cfg = TinyTrain();
  cfg.baseline = true;
  cfg.lr_init = 1e200;
  try {
    Fit(cfg, SmallCorpus().train, SmallCorpus().valid);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string what = e.what();
    INFO(what);
    CHECK(what.find("non-finite loss at step ") != std::string::npos);
    CHECK(what.find("step 1 ") == std::string::npos);
  }
}

TEST_CASE("non-finite targets are rejected before they reach the optimizer") {
  CorpusSplit bad = SmallCorpus().train;
  for (auto& a : bad.audio)
    std::fill(a.target1.samples.begin(), a.target1.samples.end(), std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(Fit(TinyTrain(), bad, SmallCorpus().valid), ValidationError);
}

TEST_CASE("train config validation and JSON round trip") {
  TrainConfig cfg = TinyTrain();
  cfg.strategy = Strategy::kGuideDiff;
  cfg.gamma = 0.01;
  const TrainConfig back = TrainConfig::FromJson(cfg.ToJson());
  CHECK(back.ToJson() == cfg.ToJson());
  TrainConfig neg = cfg;
  neg.gamma = -1;
  CHECK_THROWS_AS(neg.Validate(), ValidationError);
  TrainConfig zero = cfg;
  zero.batch_size = 0;
  CHECK_THROWS_AS(zero.Validate(), ValidationError);
  auto j = cfg.ToJson();
  j["momentum"] = 0.9;
  CHECK_THROWS_AS(TrainConfig::FromJson(j), ValidationError);
  CHECK(ParseStrategy("perturb") == Strategy::kPerturb);
  CHECK_THROWS_AS(ParseStrategy("mixed"), ValidationError);
  const TrainConfig defaults;
  CHECK(defaults.lr_init == 1.5e-4);
  CHECK(defaults.segment_s == 3.0);
  CHECK(defaults.plateau_patience == 2);
  CHECK(defaults.clip_norm == 5.0);
}

}  // TEST_SUITE
