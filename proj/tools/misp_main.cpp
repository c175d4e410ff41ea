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

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "misp/harness.hpp"

namespace {

struct CliArgs {
  std::string config;
  std::string out;
  std::string checkpoint;
  std::string input;
  std::string protocol = "original";
  std::string split = "test";
  std::string suite;
  std::string lpips;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

misp::TrainConfig resolve_config(const CliArgs& args) {
  misp::TrainConfig cfg;
  if (!args.config.empty()) {
    cfg = misp::load_config(args.config);
  } else if (!args.checkpoint.empty()) {
    const nlohmann::json header =
        misp::read_checkpoint_header(args.checkpoint);
    misp::check<misp::ConfigError>(
        header.contains("config"),
        "checkpoint carries no config snapshot; pass --config");
    cfg = misp::config_from_json(header.at("config"));
  }
  if (args.seed_set) cfg.seed = args.seed;
  return cfg;
}

std::vector<int> pick_split(const misp::SplitIndices& split,
                            const std::string& name) {
  if (name == "train") return split.train;
  if (name == "val") return split.val;
  if (name == "test") return split.test;
  throw misp::ConfigError(misp::strcat("unknown split '", name,
                                       "'; expected train, val or test"));
}

int run_synth_data(const CliArgs& args) {
  misp::TrainConfig cfg = resolve_config(args);
  if (!args.out.empty()) cfg.data.dir = args.out;
  misp::generate_dataset(cfg);
  std::printf("wrote %d pairs to %s/pairs\n", cfg.synth.count,
              cfg.data.dir.c_str());
  return 0;
}

int run_train(const CliArgs& args) {
  misp::TrainConfig cfg = resolve_config(args);
  if (!args.out.empty()) cfg.run.out_dir = args.out;
  const auto pairs = misp::load_or_generate(cfg);
  misp::Trainer trainer(cfg);
  const misp::FitResult result = trainer.fit(pairs);
  std::printf("checkpoint: %s\n", result.checkpoint_path.c_str());
  std::printf("val psnr: %.3f dB  ssim: %.4f\n", result.val.psnr_isp,
              result.val.ssim_isp);
  return 0;
}

int run_eval(const CliArgs& args) {
  misp::check<misp::ConfigError>(!args.checkpoint.empty(),
                                 "eval requires --checkpoint");
  misp::TrainConfig cfg = resolve_config(args);
  misp::Trainer trainer(cfg);
  trainer.load(args.checkpoint);
  const auto pairs = misp::load_or_generate(cfg);
  const auto split =
      misp::split_indices(int(pairs.size()), cfg.data.split_seed);
  misp::EvalOptions opts;
  opts.protocol = misp::parse_eval_protocol(args.protocol);
  opts.mask_eps = float(cfg.align.mask_eps);
  std::string why;
  if (auto fn = misp::load_metric_plugin(args.lpips, &why)) {
    opts.lpips = *fn;
  } else if (!args.lpips.empty()) {
    std::fprintf(stderr, "warning: %s\n", why.c_str());
  }
  const auto records =
      trainer.eval_records(pairs, pick_split(split, args.split), opts);
  const std::string out_path =
      args.out.empty() ? (std::filesystem::path(cfg.run.out_dir) /
                          "eval_report.jsonl")
                             .string()
                       : args.out;
  std::filesystem::create_directories(
      std::filesystem::path(out_path).parent_path());
  misp::write_eval_report(out_path, records);
  double psnr = 0, ssim = 0;
  for (const auto& r : records) {
    psnr += r.psnr;
    ssim += r.ssim;
  }
  const double n = records.empty() ? 1.0 : double(records.size());
  std::printf("protocol %s over %zu images: psnr %.3f dB  ssim %.4f\n",
              args.protocol.c_str(), records.size(), psnr / n, ssim / n);
  std::printf("report: %s\n", out_path.c_str());
  return 0;
}

int run_infer(const CliArgs& args) {
  misp::check<misp::ConfigError>(!args.checkpoint.empty(),
                                 "infer requires --checkpoint");
  misp::check<misp::ConfigError>(!args.input.empty(),
                                 "infer requires --input");
  misp::check<misp::ConfigError>(!args.out.empty(), "infer requires --out");
  misp::TrainConfig cfg = resolve_config(args);
  misp::Trainer trainer(cfg);
  trainer.load(args.checkpoint);
  const misp::RawFrame raw = misp::read_rawp(args.input);
  const misp::Tensor<float> packed = misp::pack_bayer(raw);
  misp::InferenceGuard<float> guard(trainer.model().store());
  const misp::Tensor<float> restored = misp::clamp01(
      trainer.model().isp().forward(misp::nn::Var<float>::constant(packed))
          .val());
  misp::write_png(args.out, restored);
  std::printf("wrote %s (%dx%d)\n", args.out.c_str(), restored.shape.w,
              restored.shape.h);
  return 0;
}

int run_ablate(const CliArgs& args) {
  misp::check<misp::ConfigError>(!args.suite.empty(),
                                 "ablate requires --suite");
  misp::TrainConfig cfg = resolve_config(args);
  const nlohmann::json report = misp::run_ablation(args.suite, cfg);
  const std::string out_path =
      args.out.empty()
          ? (std::filesystem::path(cfg.run.out_dir) /
             misp::strcat("ablation_", args.suite, ".json"))
                .string()
          : args.out;
  std::filesystem::create_directories(
      std::filesystem::path(out_path).parent_path());
  std::ofstream out(out_path, std::ios::trunc);
  misp::check<misp::LoadError>(bool(out), "cannot write '", out_path, "'");
  out << report.dump(2) << "\n";
  std::printf("%s\n", report.dump(2).c_str());
  std::printf("report: %s\n", out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint alignment and raw-to-sRGB restoration"};
  app.require_subcommand(1);
  CliArgs args;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config, "JSON config file");
    sub->add_option("--seed", args.seed, "override config seed")
        ->each([&](const std::string&) { args.seed_set = true; });
  };

  CLI::App* synth = app.add_subcommand("synth-data",
                                       "generate a synthetic dataset");
  add_common(synth);
  synth->add_option("--out", args.out, "dataset directory override");

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train);
  train->add_option("--out", args.out, "run directory override");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval);
  eval->add_option("--checkpoint", args.checkpoint, "checkpoint to score");
  eval->add_option("--protocol", args.protocol,
                   "original | align_gt_with_raw | align_gt_with_result");
  eval->add_option("--split", args.split, "train | val | test");
  eval->add_option("--lpips", args.lpips,
                   "external metric executable (two PNG paths -> float)");
  eval->add_option("--out", args.out, "report path (JSON lines)");

  CLI::App* infer = app.add_subcommand("infer", "restore one raw frame");
  add_common(infer);
  infer->add_option("--checkpoint", args.checkpoint, "checkpoint to use");
  infer->add_option("--input", args.input, "input .rawp file");
  infer->add_option("--out", args.out, "output PNG path");

  CLI::App* ablate = app.add_subcommand("ablate", "run an ablation suite");
  add_common(ablate);
  ablate->add_option("--suite", args.suite,
                     "alignment | gcm_components | rcab_count");
  ablate->add_option("--out", args.out, "report path (JSON)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) return run_synth_data(args);
    if (train->parsed()) return run_train(args);
    if (eval->parsed()) return run_eval(args);
    if (infer->parsed()) return run_infer(args);
    if (ablate->parsed()) return run_ablate(args);
    return 2;
  } catch (const misp::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
