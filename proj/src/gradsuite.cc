// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "casnet/gradsuite.h"

#include <functional>

#include "casnet/casnet.h"
#include "casnet/corpus.h"
#include "casnet/errors.h"
#include "casnet/objectives.h"
#include "casnet/ops.h"

namespace casnet {

namespace {

class Suite {
 public:
  explicit Suite(uint64_t seed) : seed_(seed) {}

  Tensor Leaf(Shape shape, double lo = -1.0, double hi = 1.0) {
    return RandomLeaf(std::move(shape), DeriveSeed(seed_, {++counter_}), lo, hi);
  }

  Tensor Fixed(Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t = Leaf(std::move(shape), lo, hi);
    t.set_requires_grad(false);
    return t;
  }

  void Check(const std::string& name, bool composite, double tolerance,
             const GradCheckFn& fn, std::vector<Tensor> inputs) {
    GradCheckOptions opts;
    opts.seed = DeriveSeed(seed_, {0xC0DE, cases_.size()});
    GradSuiteCase c;
    c.name = name;
    c.composite = composite;
    c.tolerance = tolerance;
    c.result = GradCheck(fn, std::move(inputs), opts);
    cases_.push_back(std::move(c));
  }

  void Primitive(const std::string& name, const GradCheckFn& fn, std::vector<Tensor> inputs) {
    Check(name, false, kPrimitiveTolerance, fn, std::move(inputs));
  }

  void Composite(const std::string& name, const GradCheckFn& fn, std::vector<Tensor> inputs) {
    Check(name, true, kCompositeTolerance, fn, std::move(inputs));
  }

  std::vector<GradSuiteCase> Take() { return std::move(cases_); }

 private:
  uint64_t seed_;
  uint64_t counter_ = 0;
  std::vector<GradSuiteCase> cases_;
};

using In = const std::vector<Tensor>&;

void Primitives(Suite& s) {
  s.Primitive("add", [](In x) { return Add(x[0], x[1]); }, {s.Leaf({2, 3}), s.Leaf({2, 3})});
  s.Primitive("sub", [](In x) { return Sub(x[0], x[1]); }, {s.Leaf({2, 3}), s.Leaf({2, 3})});
  s.Primitive("mul", [](In x) { return Mul(x[0], x[1]); }, {s.Leaf({2, 3}), s.Leaf({2, 3})});
  s.Primitive("mul_scalar", [](In x) { return MulScalar(AddScalar(x[0], 0.5), -1.7); },
              {s.Leaf({4})});
  s.Primitive("sum_mean", [](In x) { return Add(Sum(x[0]), Mean(Mul(x[0], x[0]))); },
              {s.Leaf({3, 4})});
  s.Primitive("reshape_permute",
              [](In x) { return Permute(Reshape(x[0], {2, 3, 4}), {2, 0, 1}); },
              {s.Leaf({6, 4})});
  s.Primitive("concat_last", [](In x) { return ConcatLast(x[0], x[1]); },
              {s.Leaf({2, 3}), s.Leaf({2, 2})});
  s.Primitive("resize_last",
              [](In x) { return Add(ResizeLast(x[0], 3), ResizeLast(x[1], 3)); },
              {s.Leaf({2, 5}), s.Leaf({2, 2})});
  s.Primitive("pick", [](In x) { return Pick(x[0], {0, 5, 5, 2}); }, {s.Leaf({2, 3})});
  s.Primitive("relu", [](In x) { return Relu(x[0]); }, {s.Leaf({3, 8})});
  s.Primitive("sigmoid", [](In x) { return Sigmoid(x[0]); }, {s.Leaf({3, 8}, -4, 4)});
  s.Primitive("tanh", [](In x) { return Tanh(x[0]); }, {s.Leaf({3, 8}, -2, 2)});
  s.Primitive("prelu", [](In x) { return PRelu(x[0], x[1]); },
              {s.Leaf({2, 3, 5}), s.Leaf({3}, 0.1, 0.4)});
  s.Primitive("prelu_shared", [](In x) { return PRelu(x[0], x[1]); },
              {s.Leaf({2, 3, 5}), s.Leaf({1}, 0.1, 0.4)});
  s.Primitive("conv1d",
              [](In x) { return Conv1d(x[0], x[1], x[2], 2, 1); },
              {s.Leaf({2, 3, 11}), s.Leaf({4, 3, 3}), s.Leaf({4})});
  s.Primitive("conv1d_nobias", [](In x) { return Conv1d(x[0], x[1], Tensor(), 3, 0); },
              {s.Leaf({2, 1, 16}), s.Leaf({5, 1, 4})});
  s.Primitive("transposed_conv1d", [](In x) { return ConvTranspose1d(x[0], x[1], 2); },
              {s.Leaf({2, 3, 6}), s.Leaf({3, 2, 4})});
  s.Check("linear", false, 1e-6, [](In x) { return Linear(x[0], x[1], x[2]); },
          {s.Leaf({2, 3, 4}), s.Leaf({5, 4}), s.Leaf({5})});
  {
    auto state = std::make_shared<BatchNormState>();
    state->running_mean = Tensor::Zeros({3});
    state->running_var = Tensor::Full({3}, 1.0);
    s.Primitive("batch_norm_train",
                [state](In x) { return BatchNorm1d(x[0], x[1], x[2], *state, NormMode::kTrain); },
                {s.Leaf({2, 3, 5}), s.Leaf({3}, 0.5, 1.5), s.Leaf({3})});
    s.Primitive("batch_norm_eval",
                [state](In x) { return BatchNorm1d(x[0], x[1], x[2], *state, NormMode::kEval); },
                {s.Leaf({2, 3, 5}), s.Leaf({3}, 0.5, 1.5), s.Leaf({3})});
  }
  s.Primitive("instance_norm", [](In x) { return InstanceNorm(x[0]); }, {s.Leaf({2, 3, 6})});
  s.Primitive("layer_norm", [](In x) { return LayerNorm(x[0], x[1], x[2]); },
              {s.Leaf({2, 3, 6}), s.Leaf({6}, 0.5, 1.5), s.Leaf({6})});
  s.Primitive("avg_pool_time", [](In x) { return AvgPoolTime(x[0]); }, {s.Leaf({2, 3, 7})});
  s.Primitive("channel_affine", [](In x) { return ChannelAffine(x[0], x[1], x[2]); },
              {s.Leaf({2, 3, 4}), s.Leaf({2, 3}), s.Leaf({2, 3})});
  s.Primitive("attention_pool", [](In x) { return AttentionPool(x[0], x[1]); },
              {s.Leaf({2, 3, 5}), s.Leaf({2, 5}, 0.1, 1.0)});
  s.Primitive("apply_masks", [](In x) { return ApplyMasks(x[0], x[1]); },
              {s.Leaf({2, 2, 3, 4}), s.Leaf({2, 3, 4})});
  s.Primitive("lstm_3_frames",
              [](In x) { return Lstm(x[0], {x[1], x[2], x[3]}, false); },
              {s.Leaf({2, 3, 4}), s.Leaf({12, 4}), s.Leaf({12, 3}), s.Leaf({12})});
  s.Primitive("recurrent_bi",
              [](In x) {
                const LstmWeights dirs[2] = {{x[1], x[2], x[3]}, {x[4], x[5], x[6]}};
                return RecurrentLayer(x[0], dirs);
              },
              {s.Leaf({2, 4, 3}), s.Leaf({8, 3}), s.Leaf({8, 2}), s.Leaf({8}), s.Leaf({8, 3}),
               s.Leaf({8, 2}), s.Leaf({8})});
  s.Primitive("segment_overlap_add",
              [](In x) { return OverlapAdd(Mul(Segment(x[0], 4, 2), Segment(x[0], 4, 2)), 9, 2); },
              {s.Leaf({2, 9, 3})});
  {
    Tensor tgt = s.Fixed({2, 2, 16});
    s.Primitive("pairwise_si_snr", [tgt](In x) { return PairwiseSiSnr(x[0], tgt); },
                {s.Leaf({2, 2, 16})});
  }
  {
    const std::vector<int> labels = {2, 0, 1};
    s.Primitive("softmax_cross_entropy",
                [labels](In x) { return SoftmaxCrossEntropy(x[0], labels); },
                {s.Leaf({3, 4}, -2, 2)});
  }
}

ModelConfig TinyModel() {
  ModelConfig c;
  c.separator.enc_dim = 6;
  c.separator.win = 4;
  c.separator.stride = 2;
  c.separator.n_blocks = 1;
  c.separator.chunk_size = 4;
  c.separator.hidden = 3;
  c.channel.blocks = 2;
  c.channel.width = 5;
  c.channel.embed_dim = 4;
  c.channel.n_classes = 3;
  c.channel.se_reduction = 2;
  return c;
}

Tensor Param(CasNet& net, const std::string& name) {
  const Parameter* p = net.params().Find(name);
  if (p == nullptr) throw ValidationError("grad suite: no parameter '" + name + "'");
  return p->tensor;
}

void Composites(Suite& s, uint64_t seed) {
  auto net = std::make_shared<CasNet>(TinyModel(), seed);
  net->SetTraining(true);
  const Separator& sep = net->separator();
  const int64_t len = 22;  // 10 frames

  s.Composite("separator.encode", [&sep](In x) { return sep.Encode(x[0]); },
              {s.Leaf({2, len}), Param(*net, "sep.encoder.kernel")});
  s.Composite("separator.dprnn_stack", [&sep](In x) { return sep.DprnnStack(x[0]); },
              {s.Leaf({2, 6, 10}, 0, 1), Param(*net, "sep.block0.intra.lstm_fwd.w_ih"),
               Param(*net, "sep.block0.inter.lstm_bwd.w_hh"),
               Param(*net, "sep.block0.inter.proj.weight"),
               Param(*net, "sep.block0.intra.norm.gamma")});
  s.Composite("separator.postnet_masks", [&sep](In x) { return sep.PostnetMasks(x[0]); },
              {s.Leaf({2, 6, 5}), Param(*net, "sep.postnet.prelu"),
               Param(*net, "sep.postnet.proj.weight"), Param(*net, "sep.postnet.tanh.weight"),
               Param(*net, "sep.postnet.sigmoid.bias")});
  s.Composite("separator.decode", [&sep](In x) { return sep.Decode(x[0], 13); },
              {s.Leaf({2, 2, 6, 5}), Param(*net, "sep.decoder.kernel")});

  ChannelEncoder& enc = net->channel_encoder();
  s.Composite("chanenc.conv_block", [net](In x) { return net->channel_encoder().ConvBlockForward(x[0]); },
              {s.Leaf({3, 6, 7}), Param(*net, "chan.conv_block.conv.kernel"),
               Param(*net, "chan.conv_block.bn.gamma")});
  s.Composite("chanenc.se_res_block",
              [net](In x) { return net->channel_encoder().SeResBlockForward(0, x[0]); },
              {s.Leaf({3, 5, 7}), Param(*net, "chan.se0.conv1.conv.kernel"),
               Param(*net, "chan.se0.fc1.weight"), Param(*net, "chan.se0.fc2.bias")});
  s.Composite("chanenc.attentive_pool", [&enc](In x) { return enc.AttentivePool(x[0]); },
              {s.Leaf({3, 5, 7}), Param(*net, "chan.attention.weight"),
               Param(*net, "chan.attention.bias")});
  s.Composite("chanenc.project_classify",
              [&enc](In x) { return enc.Classify(enc.Project(x[0])); },
              {s.Leaf({3, 5}), Param(*net, "chan.proj.weight"),
               Param(*net, "classifier.weight")});
  s.Composite("chanenc.encode_channel",
              [net](In x) { return net->channel_encoder().EncodeChannel(net->separator(), x[0]); },
              {s.Leaf({3, len}), Param(*net, "sep.encoder.kernel"),
               Param(*net, "chan.se1.conv2.conv.kernel"), Param(*net, "chan.se0.fc1.bias"),
               Param(*net, "chan.proj.bias")});

  s.Composite("film.params",
              [net](In x) {
                FilmParams f = net->ComputeFilmParams(x[0]);
                return ConcatLast(f.w, f.b);
              },
              {s.Leaf({2, 4}), Param(*net, "film.w.weight"), Param(*net, "film.b.bias")});
  s.Composite("film.apply",
              [net](In x) { return net->FilmApply(x[0], {x[1], x[2]}); },
              {s.Leaf({2, 6, 5}), s.Leaf({2, 6}), s.Leaf({2, 6}), Param(*net, "film.prelu")});

  {
    Tensor tgt = s.Fixed({2, 2, 16});
    s.Composite("objectives.pit_loss",
                [tgt](In x) { return PitLoss(x[0], tgt).loss; }, {s.Leaf({2, 2, 16})});
  }
  {
    Tensor mix = s.Fixed({2, len});
    Tensor tgt = s.Fixed({2, 2, len});
    const std::vector<int> labels = {1, 2};
    s.Composite("objectives.casnet_total_loss",
                [net, mix, tgt, labels](In) {
                  ForwardOutput out = net->Forward(mix, EmbeddingSource::kSameMixture, mix);
                  PitResult pit = PitLoss(out.estimates, tgt);
                  return TotalLoss(pit, ChannelIdLoss(out.logits, labels), 0.5).total;
                },
                {Param(*net, "sep.encoder.kernel"), Param(*net, "sep.block0.intra.lstm_fwd.bias"),
                 Param(*net, "chan.se0.conv2.conv.kernel"), Param(*net, "chan.proj.weight"),
                 Param(*net, "film.w.weight"), Param(*net, "film.b.weight"),
                 Param(*net, "classifier.bias"), Param(*net, "sep.decoder.kernel")});
  }
}

}  // namespace

std::vector<GradSuiteCase> RunGradSuite(uint64_t seed) {
  Suite s(seed);
  Primitives(s);
  Composites(s, seed);
  return s.Take();
}

}  // namespace casnet
