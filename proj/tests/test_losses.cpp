// Copyright (c) 2026 The misp authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>

#include <catch2/catch_amalgamated.hpp>

#include "misp/losses.hpp"
#include "test_support.hpp"

using namespace misp;
using misp::testsupport::max_abs_diff;
using misp::testsupport::random_tensor;

namespace {

template <typename T>
T scalar(const nn::Var<T>& v) {
  return v.val().data[0];
}

}  // namespace

TEST_CASE("masked_l1 basic values") {
  Tensor<float> a({1, 3, 4, 4}, 0.7f);
  Tensor<float> ones({1, 1, 4, 4}, 1.0f);

  CHECK(scalar(masked_l1(nn::Var<float>::constant(a), a, ones)) == 0.0f);

  Tensor<float> b({1, 3, 4, 4}, 0.2f);
  CHECK(scalar(masked_l1(nn::Var<float>::constant(a), b, ones)) == 0.5f);

  // Left half masked with |a-b| = 1, right half unmasked with |a-b| = 100.
  Tensor<float> p({1, 1, 2, 2});
  Tensor<float> t({1, 1, 2, 2});
  Tensor<float> half({1, 1, 2, 2});
  p.data = {1.0f, 100.0f, 1.0f, 100.0f};
  t.data = {0.0f, 0.0f, 0.0f, 0.0f};
  half.data = {1.0f, 0.0f, 1.0f, 0.0f};
  CHECK(scalar(masked_l1(nn::Var<float>::constant(p), t, half)) == 1.0f);
}

TEST_CASE("masked_l1 validates shapes and flags empty masks") {
  Tensor<float> a({1, 3, 4, 4}, 0.5f);
  Tensor<float> b({1, 3, 4, 6}, 0.5f);
  Tensor<float> ones({1, 1, 4, 4}, 1.0f);
  REQUIRE_THROWS_AS(masked_l1(nn::Var<float>::constant(a), b, ones),
                    DimensionError);
  Tensor<float> badmask({1, 3, 4, 4}, 1.0f);
  REQUIRE_THROWS_AS(masked_l1(nn::Var<float>::constant(a), a, badmask),
                    DimensionError);

  Tensor<float> zero_mask({1, 1, 4, 4}, 0.0f);
  bool empty = false;
  Tensor<float> c({1, 3, 4, 4}, 0.9f);
  auto v = masked_l1(nn::Var<float>::constant(a), c, zero_mask, &empty);
  CHECK(scalar(v) == 0.0f);
  CHECK(empty);
}

TEST_CASE("masked_l1 ignores values at masked-out positions bit for bit") {
  Rng rng(600);
  Tensor<float> pred = random_tensor<float>({1, 3, 6, 6}, rng, 0.0, 1.0);
  Tensor<float> target = random_tensor<float>({1, 3, 6, 6}, rng, 0.0, 1.0);
  Tensor<float> mask({1, 1, 6, 6});
  for (auto& m : mask.data) m = rng.bernoulli(0.6) ? 1.0f : 0.0f;
  mask.data[0] = 1.0f;  // keep at least one valid pixel

  const float base =
      scalar(masked_l1(nn::Var<float>::constant(pred), target, mask));
  for (int trial = 0; trial < 10; ++trial) {
    Tensor<float> fuzzed = pred;
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < 36; ++i) {
        if (mask.data[size_t(i)] == 0.0f) {
          fuzzed.plane(0, c)[i] = float(rng.uniform(-100.0, 100.0));
        }
      }
    }
    CHECK(scalar(masked_l1(nn::Var<float>::constant(fuzzed), target, mask)) ==
          base);
  }
}

TEST_CASE("masked_l1 is absolutely homogeneous in the residual") {
  Rng rng(601);
  Tensor<float> target = random_tensor<float>({1, 3, 5, 5}, rng, 0.0, 1.0);
  Tensor<float> resid = random_tensor<float>({1, 3, 5, 5}, rng, 0.1, 0.5);
  Tensor<float> mask({1, 1, 5, 5});
  for (auto& m : mask.data) m = rng.bernoulli(0.7) ? 1.0f : 0.0f;
  mask.data[3] = 1.0f;

  auto with_scale = [&](float k) {
    Tensor<float> pred = target;
    for (size_t i = 0; i < pred.data.size(); ++i) {
      pred.data[i] += k * resid.data[i];
    }
    return scalar(masked_l1(nn::Var<float>::constant(pred), target, mask));
  };
  const float base = with_scale(1.0f);
  CHECK(std::abs(with_scale(3.0f) - 3.0f * base) < 1e-5f);
  CHECK(std::abs(with_scale(-2.0f) - 2.0f * base) < 1e-5f);
}

TEST_CASE("masked_l1 gradient matches finite differences") {
  Rng rng(602);
  // Residuals bounded away from zero keep the derivative of |.| smooth.
  Tensor<double> pred = random_tensor<double>({1, 2, 4, 4}, rng, 0.6, 0.9);
  Tensor<double> target = random_tensor<double>({1, 2, 4, 4}, rng, 0.1, 0.4);
  Tensor<double> mask({1, 1, 4, 4});
  for (auto& m : mask.data) m = rng.bernoulli(0.5) ? 1.0 : 0.0;
  mask.data[5] = 1.0;

  auto rep = misp::testsupport::fd_check_var(
      [&](const nn::Var<double>& v) { return masked_l1(v, target, mask); },
      pred);
  INFO("worst " << rep.worst_abs << " allowed " << rep.worst_allowed);
  CHECK(rep.ok);
}

TEST_CASE("downsample_mask min-pools validity") {
  Tensor<float> ones({1, 1, 8, 8}, 1.0f);
  for (int scale : {2, 4}) {
    Tensor<float> d = downsample_mask(ones, scale);
    REQUIRE(d.shape == Shape{1, 1, 8 / scale, 8 / scale});
    for (float v : d.data) REQUIRE(v == 1.0f);
  }

  Tensor<float> hole = ones;
  hole.at(0, 0, 3, 5) = 0.0f;
  Tensor<float> d2 = downsample_mask(hole, 2);
  int zeros = 0;
  for (float v : d2.data) zeros += v == 0.0f ? 1 : 0;
  CHECK(zeros == 1);
  CHECK(d2.at(0, 0, 1, 2) == 0.0f);

  Tensor<float> checker({1, 1, 4, 4});
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      checker.at(0, 0, y, x) = float((x + y) % 2);
    }
  }
  Tensor<float> dc = downsample_mask(checker, 2);
  for (float v : dc.data) REQUIRE(v == 0.0f);

  CHECK(downsample_mask(ones, 1).data == ones.data);
  REQUIRE_THROWS_AS(downsample_mask(ones, 3), DimensionError);
  REQUIRE_THROWS_AS(downsample_mask(ones, 0), ParameterError);
}

TEST_CASE("pyramid extractor is deterministic, frozen, and multi-scale") {
  PyramidExtractor<float> a;
  PyramidExtractor<float> b;
  Rng rng(603);
  Tensor<float> x = random_tensor<float>({1, 3, 16, 16}, rng, 0.0, 1.0);

  auto fa = a.features(nn::Var<float>::constant(x));
  auto fb = b.features(nn::Var<float>::constant(x));
  REQUIRE(fa.size() == 3);
  CHECK(fa[0].shape() == Shape{1, 16, 8, 8});
  CHECK(fa[1].shape() == Shape{1, 32, 4, 4});
  CHECK(fa[2].shape() == Shape{1, 64, 2, 2});
  for (size_t i = 0; i < 3; ++i) {
    REQUIRE(fa[i].val().data == fb[i].val().data);
  }

  auto strides = PyramidExtractor<float>::strides();
  REQUIRE(strides == std::vector<int>{2, 4, 8});

  // A different seed draws different filters.
  PyramidExtractor<float> other(123);
  auto fo = other.features(nn::Var<float>::constant(x));
  CHECK(max_abs_diff(fo[0].val(), fa[0].val()) > 1e-6);
}

TEST_CASE("loss_isp composes pixel and perceptual terms") {
  Rng rng(604);
  PyramidExtractor<float> ext;
  Tensor<float> warped = random_tensor<float>({1, 3, 8, 8}, rng, 0.0, 1.0);
  Tensor<float> mask({1, 1, 8, 8}, 1.0f);

  // Perfect prediction: both terms vanish.
  auto perfect = loss_isp<float>(nn::Var<float>::constant(warped), warped,
                                 mask, &ext, 1.0f, 1.0f);
  CHECK(scalar(perfect.value) == 0.0f);
  CHECK(!perfect.mask_empty);

  // lambda_vgg = 0 reduces exactly to the masked pixel term.
  Tensor<float> pred = random_tensor<float>({1, 3, 8, 8}, rng, 0.0, 1.0);
  auto no_vgg = loss_isp<float>(nn::Var<float>::constant(pred), warped, mask,
                                &ext, 1.0f, 0.0f);
  const float pix =
      scalar(masked_l1(nn::Var<float>::constant(pred), warped, mask));
  CHECK(scalar(no_vgg.value) == pix);

  // Doubling lambda_l1 doubles the pixel contribution.
  auto twice = loss_isp<float>(nn::Var<float>::constant(pred), warped, mask,
                               &ext, 2.0f, 0.0f);
  CHECK(std::abs(scalar(twice.value) - 2.0f * pix) < 1e-6f);

  // The perceptual term adds something nonzero for an imperfect prediction.
  auto full = loss_isp<float>(nn::Var<float>::constant(pred), warped, mask,
                              &ext, 1.0f, 1.0f);
  CHECK(scalar(full.value) > pix);

  Tensor<float> empty_mask({1, 1, 8, 8}, 0.0f);
  auto flagged = loss_isp<float>(nn::Var<float>::constant(pred), warped,
                                 empty_mask, &ext, 1.0f, 1.0f);
  CHECK(flagged.mask_empty);
  CHECK(scalar(flagged.value) == 0.0f);
}

TEST_CASE("loss_isp gradient matches finite differences") {
  Rng rng(605);
  PyramidExtractor<double> ext;
  Tensor<double> warped = random_tensor<double>({1, 3, 8, 8}, rng, 0.1, 0.4);
  Tensor<double> pred0 = random_tensor<double>({1, 3, 8, 8}, rng, 0.6, 0.9);
  Tensor<double> mask({1, 1, 8, 8});
  for (auto& m : mask.data) m = rng.bernoulli(0.8) ? 1.0 : 0.0;
  mask.data[0] = 1.0;

  auto rep = misp::testsupport::fd_check_var(
      [&](const nn::Var<double>& v) {
        return loss_isp<double>(v, warped, mask, &ext, 1.0, 1.0).value;
      },
      pred0);
  INFO("worst " << rep.worst_abs << " allowed " << rep.worst_allowed);
  CHECK(rep.ok);
}

TEST_CASE("loss_gcm is the masked pixel loss") {
  Rng rng(606);
  Tensor<float> mapped = random_tensor<float>({1, 3, 4, 4}, rng, 0.0, 1.0);
  Tensor<float> warped = random_tensor<float>({1, 3, 4, 4}, rng, 0.0, 1.0);
  Tensor<float> mask({1, 1, 4, 4}, 1.0f);

  auto lg = loss_gcm<float>(nn::Var<float>::constant(mapped), warped, mask);
  CHECK(scalar(lg.value) ==
        scalar(masked_l1(nn::Var<float>::constant(mapped), warped, mask)));
  CHECK(!lg.mask_empty);

  Tensor<float> zeros({1, 1, 4, 4}, 0.0f);
  auto le = loss_gcm<float>(nn::Var<float>::constant(mapped), warped, zeros);
  CHECK(le.mask_empty);
}

TEST_CASE("lsgan losses hit their textbook values") {
  auto logits = [](float v) {
    return nn::Var<float>::constant(Tensor<float>({1, 1, 3, 3}, v));
  };

  CHECK(scalar(lsgan_generator_loss(logits(1.0f))) == 0.0f);
  CHECK(scalar(lsgan_generator_loss(logits(0.0f))) == 0.5f);
  CHECK(scalar(lsgan_generator_loss(logits(-1.0f))) == 2.0f);

  CHECK(scalar(lsgan_discriminator_loss(logits(1.0f), logits(0.0f))) == 0.0f);
  CHECK(scalar(lsgan_discriminator_loss(logits(0.0f), logits(1.0f))) == 1.0f);
  CHECK(scalar(lsgan_discriminator_loss(logits(0.5f), logits(0.5f))) ==
        0.25f);
}

TEST_CASE("lsgan losses are nonnegative and zero only at their targets") {
  Rng rng(607);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<float> d = random_tensor<float>({1, 1, 4, 4}, rng, -2.0, 2.0);
    auto dv = nn::Var<float>::constant(d);
    CHECK(scalar(lsgan_generator_loss(dv)) >= 0.0f);
    CHECK(scalar(lsgan_discriminator_loss(dv, dv)) >= 0.0f);
  }
}

TEST_CASE("loss_total composes components per mode") {
  auto term = [](float v) {
    return nn::Var<float>::constant(Tensor<float>({1, 1, 1, 1}, v));
  };

  LossTerms<float> zeros;
  zeros.gcm = term(0.0f);
  zeros.isp = term(0.0f);
  CHECK(scalar(loss_total(zeros, "isp", 0.01f)) == 0.0f);

  LossTerms<float> gan_only;
  gan_only.gcm = term(0.0f);
  gan_only.isp = term(0.0f);
  gan_only.gan_generator = term(1.0f);
  CHECK(scalar(loss_total(gan_only, "ispgan", 0.01f)) == 0.01f);

  // isp mode ignores a provided GAN term.
  LossTerms<float> mixed;
  mixed.gcm = term(0.25f);
  mixed.isp = term(0.5f);
  mixed.gan_generator = term(100.0f);
  CHECK(scalar(loss_total(mixed, "isp", 0.01f)) == 0.75f);
  CHECK(std::abs(scalar(loss_total(mixed, "ispgan", 0.01f)) - 1.75f) <
        1e-6f);

  LossTerms<float> no_gan;
  no_gan.isp = term(0.5f);
  REQUIRE_THROWS_AS(loss_total(no_gan, "ispgan", 0.01f), ConfigError);

  LossTerms<float> nothing;
  REQUIRE_THROWS_AS(loss_total(nothing, "isp", 0.01f), ConfigError);
  REQUIRE_THROWS_AS(loss_total(mixed, "gan", 0.01f), ConfigError);
}
