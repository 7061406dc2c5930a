// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"

#include "casnet/channel_encoder.h"
#include "casnet/errors.h"
#include "casnet/gradcheck.h"
#include "casnet/objectives.h"
#include "casnet/ops.h"
#include "casnet/separator.h"

using namespace casnet;

namespace {

constexpr int kIn = 5;

ChannelEncoderConfig Tiny() {
  ChannelEncoderConfig c;
  c.blocks = 2;
  c.width = kIn;
  c.embed_dim = 4;
  c.n_classes = 3;
  c.se_reduction = 2;
  return c;
}

void Fill(Tensor t, double v) { std::fill(t.mutable_data().begin(), t.mutable_data().end(), v); }

// Centre tap 1 on the diagonal: a same-padded k=3 convolution that copies its input.
void MakeIdentity(ConvBlock& b) {
  Fill(b.kernel, 0.0);
  const int64_t c = b.kernel.dim(0);
  for (int64_t o = 0; o < c; ++o) b.kernel.mutable_data()[(o * c + o) * 3 + 1] = 1.0;
  Fill(b.bias, 0.0);
  Fill(b.gamma, 1.0);
  Fill(b.beta, 0.0);
  Fill(b.state.running_mean, 0.0);
  Fill(b.state.running_var, 1.0);
  b.state.eps = 0.0;
}

struct Fixture {
  ParameterSet params;
  Rng rng{3};
  ChannelEncoder enc{Tiny(), kIn, params, rng};
};

std::vector<double> Values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_SUITE("chanenc") {

TEST_CASE("conv block shape contract") {
  Fixture f;
  CHECK(f.enc.ConvBlockForward(RandomLeaf({3, kIn, 9}, 1)).shape() == Shape{3, kIn, 9});
}

TEST_CASE("identity conv with unit eval statistics collapses to relu") {
  Fixture f;
  MakeIdentity(f.enc.conv_block());
  f.enc.set_mode(NormMode::kEval);
  Tensor x = RandomLeaf({2, kIn, 7}, 2);
  CHECK(Values(f.enc.ConvBlockForward(x)) == Values(Relu(x)));
}

TEST_CASE("zero excitation gives a 1.5x block") {
  Fixture f;
  SeResBlock& b = f.enc.se_block(0);
  MakeIdentity(b.conv1);
  MakeIdentity(b.conv2);
  for (Tensor t : {b.fc1_w, b.fc1_b, b.fc2_w, b.fc2_b}) Fill(t, 0.0);
  f.enc.set_mode(NormMode::kEval);
  Tensor x = RandomLeaf({2, kIn, 6}, 3, 0.0, 1.0);
  Tensor y = f.enc.SeResBlockForward(0, x);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(1.5 * x.data()[i]).epsilon(1e-14));
  Tensor gate = b.Gate(x);
  for (double g : gate.data()) CHECK(g == 0.5);
}

TEST_CASE("excitation gates stay inside (0, 1)") {
  Fixture f;
  for (uint64_t s = 0; s < 5; ++s) {
    Tensor g = f.enc.se_block(1).Gate(RandomLeaf({3, kIn, 8}, s, -4.0, 4.0));
    CHECK(g.shape() == Shape{3, kIn});
    for (double v : g.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("constant attention logits give the time mean") {
  Fixture f;
  Fill(f.enc.attention_w(), 0.0);
  Fill(f.enc.attention_b(), 1.3);
  Tensor x = RandomLeaf({2, kIn, 6}, 4);
  Tensor z = f.enc.AttentivePool(x);
  Tensor mean = AvgPoolTime(x);
  for (int64_t i = 0; i < z.numel(); ++i) CHECK(z.data()[i] == doctest::Approx(mean.data()[i]).epsilon(1e-14));
}

TEST_CASE("one frame pools to that frame") {
  Fixture f;
  Tensor x = RandomLeaf({3, kIn, 1}, 5);
  Tensor z = f.enc.AttentivePool(x);
  for (int64_t i = 0; i < z.numel(); ++i) CHECK(z.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-14));
}

TEST_CASE("attention weights are positive and sum to one") {
  Fixture f;
  Tensor x = RandomLeaf({3, kIn, 10}, 6, -2.0, 2.0);
  Tensor s = f.enc.AttentionScores(x);
  for (int64_t m = 0; m < 3; ++m) {
    double total = 0;
    for (int t = 0; t < 10; ++t) total += s.data()[m * 10 + t];
    std::vector<double> want(kIn, 0.0);
    for (int c = 0; c < kIn; ++c)
      for (int t = 0; t < 10; ++t) want[c] += s.data()[m * 10 + t] / total * x.data()[(m * kIn + c) * 10 + t];
    Tensor z = f.enc.AttentivePool(x);
    for (int c = 0; c < kIn; ++c) CHECK(z.data()[m * kIn + c] == doctest::Approx(want[c]).epsilon(1e-12));
    double wsum = 0;
    for (int t = 0; t < 10; ++t) {
      const double w = s.data()[m * 10 + t] / total;
      CHECK(w >= 0.0);
      wsum += w;
    }
    CHECK(std::abs(wsum - 1.0) < 1e-6);
  }
}

TEST_CASE("square identity projection returns the pooled vector") {
  ChannelEncoderConfig c = Tiny();
  c.embed_dim = kIn;
  ParameterSet ps;
  Rng rng(1);
  ChannelEncoder enc(c, kIn, ps, rng);
  Fill(enc.proj_w(), 0.0);
  for (int i = 0; i < kIn; ++i) enc.proj_w().mutable_data()[i * kIn + i] = 1.0;
  Fill(enc.proj_b(), 0.0);
  Tensor z = RandomLeaf({2, kIn}, 7);
  CHECK(Values(enc.Project(z)) == Values(z));
}

TEST_CASE("default embedding size is 128") {
  ChannelEncoderConfig c;
  ParameterSet ps;
  Rng rng(1);
  ChannelEncoder enc(c, 64, ps, rng);
  CHECK(enc.Project(RandomLeaf({3, 64}, 1)).shape() == Shape{3, 128});
  CHECK(c.blocks == 4);
}

TEST_CASE("zero classifier gives ln(n) cross-entropy") {
  Fixture f;
  Fill(f.enc.classifier_w(), 0.0);
  Fill(f.enc.classifier_b(), 0.0);
  Tensor logits = f.enc.Classify(RandomLeaf({4, 4}, 8));
  CHECK(logits.shape() == Shape{4, 3});
  const std::vector<int> labels = {0, 1, 2, 1};
  CHECK(ChannelIdLoss(logits, labels).item() == doctest::Approx(std::log(3.0)).epsilon(1e-14));
}

TEST_CASE("channel encoding is finite and deterministic in eval mode") {
  ParameterSet ps;
  Rng rng(2);
  SeparatorConfig sc;
  sc.enc_dim = kIn;
  sc.win = 4;
  sc.stride = 2;
  sc.n_blocks = 1;
  sc.chunk_size = 4;
  sc.hidden = 3;
  Separator sep(sc, ps, rng);
  ChannelEncoder enc(Tiny(), kIn, ps, rng);
  enc.set_mode(NormMode::kEval);
  Tensor aux = RandomLeaf({2, 40}, 9);
  Tensor a = enc.EncodeChannel(sep, aux), b = enc.EncodeChannel(sep, aux);
  CHECK(a.shape() == Shape{2, 4});
  CHECK(Values(a) == Values(b));
  for (double v : a.data()) CHECK(std::isfinite(v));
  CHECK_THROWS_AS(enc.EncodeChannel(sep, Tensor::Zeros({1, 3})), ValidationError);
}

TEST_CASE("single-block and pooling gradchecks") {
  Fixture f;
  f.enc.set_mode(NormMode::kEval);
  auto block = [&](const std::vector<Tensor>& in) {
    Tensor y = f.enc.SeResBlockForward(0, in[0]);
    return Sum(Mul(y, y));
  };
  CHECK(GradCheck(block, {RandomLeaf({2, kIn, 6}, 10)}).max_rel_error < 1e-3);
  auto pool = [&](const std::vector<Tensor>& in) { return Sum(Tanh(f.enc.AttentivePool(in[0]))); };
  CHECK(GradCheck(pool, {RandomLeaf({2, kIn, 6}, 11)}).max_rel_error < 1e-4);
  auto cls = [&](const std::vector<Tensor>& in) {
    const std::vector<int> labels = {2, 0};
    return ChannelIdLoss(f.enc.Classify(in[0]), labels);
  };
  CHECK(GradCheck(cls, {RandomLeaf({2, 4}, 12)}).max_rel_error < 1e-4);
}

TEST_CASE("config validation") {
  ChannelEncoderConfig c = Tiny();
  c.blocks = 0;
  CHECK_THROWS_AS(c.Validate(), ValidationError);
  c = Tiny();
  c.embed_dim = 0;
  CHECK_THROWS_AS(c.Validate(), ValidationError);
  c = Tiny();
  CHECK(ChannelEncoderConfig::FromJson(c.ToJson()).ToJson() == c.ToJson());
}

TEST_CASE("batch-norm statistics are buffers, not trainable") {
  Fixture f;
  const Parameter* p = f.params.Find("chan.conv_block.bn.running_mean");
  REQUIRE(p != nullptr);
  CHECK_FALSE(p->trainable);
  CHECK(f.params.Find("chan.se1.fc2.weight")->trainable);
}

}  // TEST_SUITE
