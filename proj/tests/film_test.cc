// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"

#include "casnet/casnet.h"
#include "casnet/errors.h"
#include "casnet/gradcheck.h"
#include "casnet/ops.h"

using namespace casnet;

namespace {

ModelConfig Tiny(bool baseline = false) {
  ModelConfig m;
  m.separator.enc_dim = 6;
  m.separator.win = 4;
  m.separator.stride = 2;
  m.separator.n_blocks = 1;
  m.separator.chunk_size = 4;
  m.separator.hidden = 3;
  m.channel.blocks = 2;
  m.channel.width = 5;
  m.channel.embed_dim = 4;
  m.channel.n_classes = 3;
  m.channel.se_reduction = 2;
  m.baseline = baseline;
  return m;
}

std::vector<double> Values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }
void Fill(Tensor t, double v) { std::fill(t.mutable_data().begin(), t.mutable_data().end(), v); }

}  // namespace

TEST_SUITE("film") {

TEST_CASE("the two FiLM maps are distinct parameters") {
  CasNet net(Tiny(), 1);
  CHECK(net.film_w_weight().node() != net.film_b_weight().node());
  CHECK(Values(net.film_w_weight()) != Values(net.film_b_weight()));
  CHECK(net.film_w_weight().shape() == Shape{6, 4});
  std::set<std::string> names;
  for (const auto& p : net.params().entries()) CHECK(names.insert(p.name).second);
}

TEST_CASE("zero weights with pinned biases give identity conditioning") {
  CasNet net(Tiny(), 1);
  Fill(net.film_w_weight(), 0.0);
  Fill(net.film_b_weight(), 0.0);
  FilmParams p = net.ComputeFilmParams(RandomLeaf({2, 4}, 3));
  for (double v : p.w.data()) CHECK(v == 1.0);
  for (double v : p.b.data()) CHECK(v == 0.0);
}

TEST_CASE("unit scale and zero shift reduce to PReLU of the normalized features") {
  CasNet net(Tiny(), 1);
  Tensor s = RandomLeaf({2, 6, 9}, 4, -2.0, 3.0);
  FilmParams p{Tensor::Full({2, 6}, 1.0), Tensor::Zeros({2, 6})};
  CHECK(Values(net.FilmApply(s, p)) == Values(PRelu(InstanceNorm(s), net.film_slope())));
}

TEST_CASE("zero scale gives a time-constant PReLU of the shift") {
  CasNet net(Tiny(), 1);
  Tensor s = RandomLeaf({1, 6, 7}, 5);
  Tensor b = RandomLeaf({1, 6}, 6);
  Tensor y = net.FilmApply(s, {Tensor::Zeros({1, 6}), b});
  for (int c = 0; c < 6; ++c) {
    const double bc = b.data()[c];
    const double want = bc >= 0 ? bc : 0.25 * bc;
    for (int t = 0; t < 7; ++t) CHECK(y.data()[c * 7 + t] == doctest::Approx(want).epsilon(1e-14));
  }
}

TEST_CASE("bypass equals the plain separator and the seeded baseline") {
  CasNet net(Tiny(), 9);
  CasNet base(Tiny(true), 9);
  Tensor x = RandomLeaf({2, 37}, 7);
  ForwardOutput out = net.Forward(x, EmbeddingSource::kBypass, Tensor());
  CHECK(Values(out.estimates) == Values(net.separator().Forward(x)));
  CHECK(Values(out.estimates) == Values(base.Forward(x, EmbeddingSource::kBypass, Tensor()).estimates));
  CHECK_FALSE(out.embedding.defined());
  CHECK_FALSE(out.logits.defined());
}

TEST_CASE("all-ones source uses a vector of ones without randomness") {
  CasNet net(Tiny(), 2);
  net.SetTraining(false);
  Tensor x = RandomLeaf({2, 30}, 8);
  ForwardOutput a = net.Forward(x, EmbeddingSource::kAllOnes, Tensor(), nullptr);
  ForwardOutput b = net.Forward(x, EmbeddingSource::kAllOnes, Tensor(), nullptr);
  for (double v : a.embedding.data()) CHECK(v == 1.0);
  CHECK(a.embedding.shape() == Shape{2, 4});
  CHECK(Values(a.estimates) == Values(b.estimates));
  CHECK_FALSE(a.logits.defined());
}

TEST_CASE("gaussian source is reproducible under a fixed seed") {
  CasNet net(Tiny(), 2);
  Tensor x = RandomLeaf({1, 30}, 8);
  Rng r1(5), r2(5), r3(6);
  ForwardOutput a = net.Forward(x, EmbeddingSource::kGaussianNoise, Tensor(), &r1);
  ForwardOutput b = net.Forward(x, EmbeddingSource::kGaussianNoise, Tensor(), &r2);
  ForwardOutput c = net.Forward(x, EmbeddingSource::kGaussianNoise, Tensor(), &r3);
  CHECK(Values(a.estimates) == Values(b.estimates));
  CHECK(Values(a.embedding) != Values(c.embedding));
  CHECK_THROWS_AS(net.Forward(x, EmbeddingSource::kGaussianNoise, Tensor(), nullptr), ValidationError);
}

TEST_CASE("aux-driven sources require an auxiliary mixture and return logits") {
  CasNet net(Tiny(), 3);
  net.SetTraining(false);
  Tensor x = RandomLeaf({2, 30}, 9);
  for (EmbeddingSource s : {EmbeddingSource::kSameMixture, EmbeddingSource::kOtherMixtureSameChannel,
                            EmbeddingSource::kOtherChannel}) {
    CHECK(NeedsAux(s));
    CHECK_THROWS_AS(net.Forward(x, s, Tensor()), ValidationError);
    ForwardOutput o = net.Forward(x, s, RandomLeaf({2, 22}, 10));
    CHECK(o.logits.shape() == Shape{2, 3});
    CHECK(o.estimates.shape() == Shape{2, 2, 30});
    for (double v : o.estimates.data()) CHECK(std::isfinite(v));
  }
  for (EmbeddingSource s : {EmbeddingSource::kAllOnes, EmbeddingSource::kGaussianNoise,
                            EmbeddingSource::kBypass})
    CHECK_FALSE(NeedsAux(s));
}

TEST_CASE("source names round trip") {
  for (const std::string name : {"same", "other-same-channel", "other-channel", "all-ones", "gaussian", "no-film"})
    CHECK(EmbeddingSourceName(ParseEmbeddingSource(name)) == name);
  CHECK_THROWS_AS(ParseEmbeddingSource("random"), ValidationError);
}

TEST_CASE("baseline owns only separator parameters and refuses conditioning") {
  CasNet base(Tiny(true), 1);
  for (const auto& p : base.params().entries()) CHECK(p.name.rfind("sep.", 0) == 0);
  CHECK_THROWS_AS(base.Forward(RandomLeaf({1, 20}, 1), EmbeddingSource::kAllOnes, Tensor()), ValidationError);
  CasNet net(Tiny(), 1);
  CHECK(net.params().CountTrainable() > base.params().CountTrainable());
}

TEST_CASE("checkpoint reload reproduces the forward pass") {
  CasNet net(Tiny(), 4);
  net.SetTraining(true);
  Tensor x = RandomLeaf({3, 30}, 11);
  net.Forward(x, EmbeddingSource::kSameMixture, x);  // moves batch-norm statistics
  net.SetTraining(false);
  const std::string path = "film_reload.ckpt";
  net.Save(path, {{"note", "x"}});
  auto back = CasNet::Load(path);
  CHECK(back->config().ToJson() == net.config().ToJson());
  CHECK(Values(back->Forward(x, EmbeddingSource::kSameMixture, x).estimates) ==
        Values(net.Forward(x, EmbeddingSource::kSameMixture, x).estimates));
  std::remove(path.c_str());
}

TEST_CASE("FiLM gradcheck through scale, shift and slope") {
  CasNet net(Tiny(), 1);
  // Random readout weights; a plain sum of squares is nearly flat in the
  // normalized input and leaves only roundoff for the probe to see.
  const Tensor readout = RandomLeaf({2, 6, 5}, 9).Detach();
  auto fn = [&](const std::vector<Tensor>& in) {
    Tensor y = PRelu(ChannelAffine(InstanceNorm(in[0]), in[1], in[2]), net.film_slope());
    return Sum(Mul(y, readout));
  };
  GradCheckResult r = GradCheck(fn, {RandomLeaf({2, 6, 5}, 1), RandomLeaf({2, 6}, 2), RandomLeaf({2, 6}, 3)});
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-4);
  auto params = [&](const std::vector<Tensor>& in) {
    FilmParams p = net.ComputeFilmParams(in[0]);
    return Sum(Mul(p.w, p.b));
  };
  CHECK(GradCheck(params, {RandomLeaf({2, 4}, 4)}).max_rel_error < 1e-4);
}

TEST_CASE("every parameter gets a finite gradient from the conditioned loss") {
  CasNet net(Tiny(), 5);
  Tensor x = RandomLeaf({2, 30}, 12);
  ForwardOutput o = net.Forward(x, EmbeddingSource::kSameMixture, x);
  Backward(Add(Mean(Mul(o.estimates, o.estimates)), Mean(Mul(o.logits, o.logits))));
  for (const auto& p : net.params().entries()) {
    if (!p.trainable) continue;
    INFO(p.name);
    REQUIRE(p.tensor.has_grad());
    for (double g : p.tensor.grad()) CHECK(std::isfinite(g));
  }
}

}  // TEST_SUITE
