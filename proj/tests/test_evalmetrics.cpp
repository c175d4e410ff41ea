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
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <catch2/catch_amalgamated.hpp>

#include "misp/evalmetrics.hpp"
#include "misp/flowalign.hpp"
#include "misp/rawdata.hpp"
#include "oracle_data.hpp"
#include "test_support.hpp"

using namespace misp;
using misp::testsupport::make_tensor;
using misp::testsupport::random_tensor;

namespace {

// Counts estimate() calls so protocol tests can prove when alignment runs.
class CountingEstimator : public FlowEstimator {
 public:
  explicit CountingEstimator(int radius) : inner_(radius) {}

  Tensor<float> estimate(const Tensor<float>& reference,
                         const Tensor<float>& moving) override {
    ++calls;
    return inner_.estimate(reference, moving);
  }
  std::string name() const override { return "counting"; }

  int calls = 0;

 private:
  BruteForceTranslation inner_;
};

Tensor<float> constant_flow(int h, int w, float u, float v) {
  Tensor<float> f({1, 2, h, w});
  for (int i = 0; i < h * w; ++i) {
    f.plane(0, 0)[i] = u;
    f.plane(0, 1)[i] = v;
  }
  return f;
}

}  // namespace

TEST_CASE("psnr matches the frozen oracle and unit cases") {
  Tensor<float> a = make_tensor<float>({1, 2, 10, 10}, misp::testdata::kPsnrA);
  Tensor<float> b = make_tensor<float>({1, 2, 10, 10}, misp::testdata::kPsnrB);
  CHECK(std::abs(psnr(a, b) - misp::testdata::kPsnrExpected) < 1e-6);

  // Constant difference of 0.1: mse 0.01, 20 dB up to float rounding.
  Tensor<float> x({1, 3, 8, 8}, 0.5f);
  Tensor<float> y({1, 3, 8, 8}, 0.6f);
  CHECK(std::abs(psnr(x, y) - 20.0) < 1e-5);

  // Exactly representable difference of 0.25: mse 1/16, 10*log10(16) dB.
  Tensor<float> q({1, 3, 8, 8}, 0.75f);
  CHECK(std::abs(psnr(x, q) - 10.0 * std::log10(16.0)) < 1e-12);

  // Identical and near-identical images hit the 100 dB cap.
  CHECK(psnr(x, x) == 100.0);
  Tensor<float> nearly = x;
  nearly.data[0] += 1e-6f;
  CHECK(psnr(x, nearly) == 100.0);

  Tensor<float> wrong({1, 3, 8, 9}, 0.5f);
  REQUIRE_THROWS_AS(psnr(x, wrong), DimensionError);
}

TEST_CASE("psnr with masks") {
  Rng rng(700);
  Tensor<float> a = random_tensor<float>({1, 3, 8, 8}, rng, 0.0, 1.0);
  Tensor<float> b = random_tensor<float>({1, 3, 8, 8}, rng, 0.0, 1.0);

  Tensor<float> all({1, 1, 8, 8}, 1.0f);
  CHECK(psnr(a, b, &all) == psnr(a, b));

  // Corrupting masked-out pixels cannot change the masked score.
  Tensor<float> mask({1, 1, 8, 8}, 1.0f);
  mask.at(0, 0, 2, 3) = 0.0f;
  mask.at(0, 0, 5, 7) = 0.0f;
  const double base = psnr(a, b, &mask);
  Tensor<float> fuzzed = a;
  for (int c = 0; c < 3; ++c) {
    fuzzed.at(0, c, 2, 3) = 1000.0f;
    fuzzed.at(0, c, 5, 7) = -999.0f;
  }
  CHECK(psnr(fuzzed, b, &mask) == base);

  Tensor<float> none({1, 1, 8, 8}, 0.0f);
  REQUIRE_THROWS_AS(psnr(a, b, &none), ParameterError);
  Tensor<float> badmask({1, 2, 8, 8}, 1.0f);
  REQUIRE_THROWS_AS(psnr(a, b, &badmask), DimensionError);
}

TEST_CASE("ssim matches the frozen oracle") {
  Tensor<float> a =
      make_tensor<float>({1, 1, 16, 16}, misp::testdata::kSsimA);
  Tensor<float> b =
      make_tensor<float>({1, 1, 16, 16}, misp::testdata::kSsimB);
  REQUIRE(double(a.data[0]) ==
          Catch::Approx(misp::testdata::kSsimA_first).margin(1e-7));
  CHECK(std::abs(ssim(a, b) - misp::testdata::kSsimExpected) < 1e-7);

  Tensor<float> a3 =
      make_tensor<float>({1, 3, 12, 12}, misp::testdata::kSsim3A);
  Tensor<float> b3 =
      make_tensor<float>({1, 3, 12, 12}, misp::testdata::kSsim3B);
  CHECK(std::abs(ssim(a3, b3) - misp::testdata::kSsim3Expected) < 1e-7);

  CHECK(ssim(a, a) == 1.0);

  Tensor<float> tiny({1, 1, 10, 12}, 0.5f);
  REQUIRE_THROWS_AS(ssim(tiny, tiny), DimensionError);
}

TEST_CASE("masked ssim requires fully valid windows") {
  Rng rng(701);
  Tensor<float> a = random_tensor<float>({1, 1, 16, 16}, rng, 0.0, 1.0);
  Tensor<float> b = random_tensor<float>({1, 1, 16, 16}, rng, 0.0, 1.0);

  Tensor<float> all({1, 1, 16, 16}, 1.0f);
  CHECK(ssim(a, b, &all) == ssim(a, b));

  // One masked pixel in the far corner: windows not covering it still count,
  // and corrupting that pixel leaves the score bit-identical.
  Tensor<float> mask({1, 1, 16, 16}, 1.0f);
  mask.at(0, 0, 15, 15) = 0.0f;
  const double base = ssim(a, b, &mask);
  Tensor<float> fuzzed = a;
  fuzzed.at(0, 0, 15, 15) = 123.0f;
  CHECK(ssim(fuzzed, b, &mask) == base);

  // A zero in the center kills every window; only windows avoiding it count.
  Tensor<float> center({1, 1, 16, 16}, 1.0f);
  for (int y = 0; y < 16; ++y) center.at(0, 0, y, 7) = 0.0f;
  // Column 7 reaches every 11-wide window start x0 in [0,5]: all blocked.
  REQUIRE_THROWS_AS(ssim(a, b, &center), ParameterError);
}

TEST_CASE("eval protocol names round trip") {
  for (const char* name :
       {"original", "align_gt_with_raw", "align_gt_with_result"}) {
    CHECK(eval_protocol_name(parse_eval_protocol(name)) == name);
  }
  REQUIRE_THROWS_AS(parse_eval_protocol("warped"), ConfigError);
}

TEST_CASE("evaluation protocols rank a misaligned pair correctly") {
  Rng rng(702);
  Tensor<float> pred = make_scene(24, 24, rng);
  // Stored target: the same content translated by (3, -2).
  Tensor<float> target = warp_tensor(pred, constant_flow(24, 24, 3.f, -2.f));

  CountingEstimator est(5);

  EvalOptions orig;
  orig.protocol = EvalProtocol::kOriginal;
  EvalRecord r_orig = evaluate_pair(0, pred, target, nullptr, &est, orig);
  CHECK(est.calls == 0);  // original never estimates
  CHECK(r_orig.valid_fraction == 1.0);
  CHECK(r_orig.protocol == "original");

  EvalOptions res;
  res.protocol = EvalProtocol::kAlignGtWithResult;
  EvalRecord r_res = evaluate_pair(0, pred, target, nullptr, &est, res);
  CHECK(est.calls == 1);
  CHECK(r_res.valid_fraction < 1.0);
  CHECK(r_res.valid_fraction > 0.5);

  EvalOptions raw;
  raw.protocol = EvalProtocol::kAlignGtWithRaw;
  EvalRecord r_raw = evaluate_pair(0, pred, target, &pred, &est, raw);
  CHECK(est.calls == 2);

  // Re-aligning recovers the exact content: capped PSNR, unit SSIM, both
  // far above the misaligned baseline.
  CHECK(r_res.psnr == 100.0);
  CHECK(r_res.ssim == 1.0);
  CHECK(r_raw.psnr == 100.0);
  CHECK(r_orig.psnr < r_res.psnr - 2.0);
  CHECK(r_orig.ssim < r_res.ssim);
}

TEST_CASE("evaluation protocols validate their inputs") {
  Rng rng(703);
  Tensor<float> pred = random_tensor<float>({1, 3, 16, 16}, rng, 0.0, 1.0);
  Tensor<float> target = random_tensor<float>({1, 3, 16, 16}, rng, 0.0, 1.0);
  CountingEstimator est(2);

  EvalOptions raw;
  raw.protocol = EvalProtocol::kAlignGtWithRaw;
  REQUIRE_THROWS_AS(evaluate_pair(0, pred, target, nullptr, &est, raw),
                    ConfigError);

  EvalOptions res;
  res.protocol = EvalProtocol::kAlignGtWithResult;
  REQUIRE_THROWS_AS(evaluate_pair(0, pred, target, nullptr, nullptr, res),
                    ConfigError);

  Tensor<float> small({1, 3, 12, 12}, 0.5f);
  REQUIRE_THROWS_AS(evaluate_pair(0, pred, small, nullptr, &est, res),
                    DimensionError);
  Tensor<float> bad_proxy({1, 3, 12, 12}, 0.5f);
  REQUIRE_THROWS_AS(evaluate_pair(0, pred, target, &bad_proxy, &est, raw),
                    DimensionError);
  CHECK(est.calls == 0);
}

TEST_CASE("eval report is json lines with a summary") {
  namespace fs = std::filesystem;
  const std::string path =
      (fs::temp_directory_path() / "misp_test_report.jsonl").string();

  EvalRecord r0;
  r0.index = 0;
  r0.protocol = "original";
  r0.psnr = 20.0;
  r0.ssim = 0.8;
  r0.valid_fraction = 1.0;
  EvalRecord r1;
  r1.index = 1;
  r1.protocol = "original";
  r1.psnr = 30.0;
  r1.ssim = 0.9;
  r1.lpips = 0.25;
  r1.valid_fraction = 0.5;
  write_eval_report(path, {r0, r1});

  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  REQUIRE(lines.size() == 3);

  auto j0 = nlohmann::json::parse(lines[0]);
  CHECK(j0["index"] == 0);
  CHECK(j0["psnr"] == 20.0);
  CHECK(!j0.contains("lpips"));
  auto j1 = nlohmann::json::parse(lines[1]);
  CHECK(j1["lpips"] == 0.25);
  auto js = nlohmann::json::parse(lines[2]);
  CHECK(js["summary"] == true);
  CHECK(js["count"] == 2);
  CHECK(js["psnr"] == 25.0);
  CHECK(std::abs(double(js["ssim"]) - 0.85) < 1e-12);
  CHECK(js["lpips"] == 0.25);  // mean over records that have one

  fs::remove(path);
}

TEST_CASE("metric plugin degrades gracefully and runs when present") {
  std::string why;
  CHECK(!load_metric_plugin("", &why).has_value());
  CHECK(why == "no plugin configured");

  CHECK(!load_metric_plugin("/nonexistent/metric", &why).has_value());
  CHECK(why.find("/nonexistent/metric") != std::string::npos);

  namespace fs = std::filesystem;
  const std::string exe =
      (fs::temp_directory_path() / "misp_fake_metric.sh").string();
  {
    std::ofstream out(exe);
    out << "#!/bin/sh\necho 0.4375\n";
  }
  fs::permissions(exe, fs::perms::owner_all, fs::perm_options::add);

  auto metric = load_metric_plugin(exe, &why);
  REQUIRE(metric.has_value());
  Rng rng(704);
  Tensor<float> a = random_tensor<float>({1, 3, 8, 8}, rng, 0.0, 1.0);
  Tensor<float> b = random_tensor<float>({1, 3, 8, 8}, rng, 0.0, 1.0);
  CHECK((*metric)(a, b) == 0.4375);

  // A failing plugin surfaces as a structured error at call time.
  const std::string bad =
      (fs::temp_directory_path() / "misp_bad_metric.sh").string();
  {
    std::ofstream out(bad);
    out << "#!/bin/sh\nexit 3\n";
  }
  fs::permissions(bad, fs::perms::owner_all, fs::perm_options::add);
  auto badfn = load_metric_plugin(bad, &why);
  REQUIRE(badfn.has_value());
  REQUIRE_THROWS_AS((*badfn)(a, b), Error);

  fs::remove(exe);
  fs::remove(bad);
}
