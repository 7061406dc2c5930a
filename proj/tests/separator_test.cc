// Copyright 2026 The casnet-cpp Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <vector>

#include "doctest.h"

#include "casnet/errors.h"
#include "casnet/gradcheck.h"
#include "casnet/ops.h"
#include "casnet/separator.h"

using namespace casnet;

namespace {

SeparatorConfig Tiny() {
  SeparatorConfig c;
  c.enc_dim = 6;
  c.win = 4;
  c.stride = 2;
  c.n_blocks = 2;
  c.chunk_size = 4;
  c.hidden = 3;
  return c;
}

struct Fixture {
  ParameterSet params;
  Rng rng{7};
  Separator sep{Tiny(), params, rng};
};

}  // namespace

TEST_SUITE("separator") {

TEST_CASE("frame count formula") {
  ParameterSet ps;
  Rng rng(0);
  SeparatorConfig c;
  Separator sep(c, ps, rng);
  CHECK(sep.Frames(24000) == 2999);
  CHECK(sep.Frames(16) == 1);
  const int64_t padded = sep.PaddedLength(100);
  CHECK(padded >= 100);
  CHECK((padded - c.win) % c.stride == 0);
  CHECK(sep.Frames(padded) >= c.chunk_size);
}

TEST_CASE("encoder output is non-negative with the expected frames") {
  Fixture f;
  Tensor x = RandomLeaf({2, 30}, 1);
  Tensor e = f.sep.Encode(x);
  CHECK(e.shape() == Shape{2, 6, (30 - 4) / 2 + 1});
  for (double v : e.data()) CHECK(v >= 0.0);
}

TEST_CASE("encoder rejects inputs shorter than the window") {
  Fixture f;
  try {
    f.sep.Encode(Tensor::Zeros({1, 3}));
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("4") != std::string::npos);
  }
}

TEST_CASE("dual-path stack keeps the feature shape") {
  Fixture f;
  Tensor s = RandomLeaf({2, 6, 11}, 2);
  CHECK(f.sep.DprnnStack(s).shape() == s.shape());
}

TEST_CASE("zero blocks is the identity") {
  Fixture f;
  Tensor s = RandomLeaf({2, 6, 11}, 3);
  Tensor y = f.sep.DprnnStack(s, 0);
  for (int64_t i = 0; i < s.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(s.data()[i]).epsilon(1e-14));
}

TEST_CASE("stack rejects fewer frames than one chunk") {
  Fixture f;
  CHECK_THROWS_AS(f.sep.DprnnStack(RandomLeaf({1, 6, 3}, 1)), ValidationError);
}

TEST_CASE("masks lie in [0, 1] with the documented shape") {
  Fixture f;
  Tensor m = f.sep.PostnetMasks(RandomLeaf({2, 6, 9}, 4, -3.0, 3.0));
  CHECK(m.shape() == Shape{2, 2, 6, 9});
  for (double v : m.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("decoder trims to the original length and maps zero masks to silence") {
  Fixture f;
  Tensor y = f.sep.Decode(Tensor::Zeros({1, 2, 6, 9}), 19);
  CHECK(y.shape() == Shape{1, 2, 19});
  for (double v : y.data()) CHECK(v == 0.0);
  CHECK(f.sep.Decode(RandomLeaf({1, 2, 6, 9}, 5), 17).dim(2) == 17);
}

TEST_CASE("forward maps each mixture to n finite sources of the same length") {
  Fixture f;
  for (int64_t len : {4, 9, 23, 60}) {
    Tensor y = f.sep.Forward(RandomLeaf({2, len}, 6));
    CHECK(y.shape() == Shape{2, 2, len});
    for (double v : y.data()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("forward is deterministic for fixed parameters") {
  Fixture f;
  Tensor x = RandomLeaf({1, 40}, 8);
  Tensor a = f.sep.Forward(x), b = f.sep.Forward(x);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("equal seeds build equal separators") {
  Fixture f, g;
  REQUIRE(f.params.entries().size() == g.params.entries().size());
  for (size_t i = 0; i < f.params.entries().size(); ++i) {
    const auto& a = f.params.entries()[i];
    const auto& b = g.params.entries()[i];
    CHECK(a.name == b.name);
    CHECK(std::equal(a.tensor.data().begin(), a.tensor.data().end(), b.tensor.data().begin()));
  }
  CHECK(f.params.Contains("sep.encoder.kernel"));
  CHECK(f.params.Contains("sep.decoder.kernel"));
  CHECK(f.params.Contains("sep.block1.inter.lstm_bwd.w_hh"));
}

TEST_CASE("gradients reach every separator parameter") {
  Fixture f;
  Backward(Mean(Mul(f.sep.Forward(RandomLeaf({2, 24}, 9)), RandomLeaf({2, 2, 24}, 10))));
  for (const auto& p : f.params.entries()) {
    INFO(p.name);
    REQUIRE(p.tensor.has_grad());
    double norm = 0;
    for (double g : p.tensor.grad()) {
      CHECK(std::isfinite(g));
      norm += g * g;
    }
    CHECK(norm > 0.0);
  }
}

TEST_CASE("encoder and decoder gradcheck") {
  Fixture f;
  auto enc = [&](const std::vector<Tensor>& in) { return Sum(Mul(f.sep.Encode(in[0]), f.sep.Encode(in[0]))); };
  CHECK(GradCheck(enc, {RandomLeaf({1, 14}, 3)}).max_rel_error < 1e-4);
  auto dec = [&](const std::vector<Tensor>& in) {
    Tensor y = f.sep.Decode(in[0], 15);
    return Sum(Mul(y, y));
  };
  CHECK(GradCheck(dec, {RandomLeaf({1, 2, 6, 6}, 4)}).max_rel_error < 1e-4);
}

TEST_CASE("config validation and JSON") {
  SeparatorConfig c = Tiny();
  c.stride = 5;
  CHECK_THROWS_AS(c.Validate(), ValidationError);
  c = Tiny();
  c.n_sources = 1;
  CHECK_THROWS_AS(c.Validate(), ValidationError);
  c = Tiny();
  c.n_blocks = 0;
  CHECK_THROWS_AS(c.Validate(), ValidationError);
  c = Tiny();
  CHECK(SeparatorConfig::FromJson(c.ToJson()).ToJson() == c.ToJson());
  auto j = c.ToJson();
  j["depth"] = 3;
  CHECK_THROWS_AS(SeparatorConfig::FromJson(j), ValidationError);
}

}  // TEST_SUITE
