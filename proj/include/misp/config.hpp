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

#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "misp/backbone.hpp"
#include "misp/flowalign.hpp"
#include "misp/gcm.hpp"
#include "misp/rawdata.hpp"

namespace misp {

struct EstimatorConfig {
  std::string kind = "block";  // brute | block | external
  int radius = 8;
  int block = 16;
  std::string weights;  // external only
};

struct AlignConfig {
  std::string strategy = "with_gcm";
  EstimatorConfig estimator;
  double mask_eps = 1e-3;
};

struct LossConfig {
  std::string mode = "isp";  // isp | ispgan
  double lambda_l1 = 1.0;
  double lambda_vgg = 1.0;
  double lambda_gan = 0.01;
  int gan_start_epoch = 0;
  std::uint64_t perceptual_seed = 0x70657263ull;
};

struct OptimConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int epochs = 100;
  int batch_size = 16;
  int lr_halve_epochs = 50;
  // Give the color mapping module its own optimizer instead of sharing one.
  bool separate_gcm = false;
};

struct SynthConfig {
  int count = 64;
  int size = 448;  // scene height and width; packed input is size/2
  double vignette = 0.3;
  double gamma = 2.2;
  double noise_sigma = 0.0;
  double shift_min_x = 3, shift_max_x = 5;
  double shift_min_y = -5, shift_max_y = -3;
  bool integer_shifts = true;
  // Per-pair random scaling of the color matrix rows in [1-j, 1+j].
  double color_jitter = 0.0;
  std::string pattern = "RGGB";
  std::array<double, 9> color_matrix = {0.90, 0.08, 0.02,   //
                                        0.05, 0.90, 0.05,   //
                                        0.03, 0.12, 0.85};
};

struct DataConfig {
  std::string dir = "data/default";
  std::string demosaic = "bilinear";
  bool augment = true;
  std::uint64_t split_seed = 17;
};

struct RunConfig {
  std::string out_dir = "runs/default";
  int checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint
  int val_every = 0;         // epochs; 0 skips validation during training
  int max_steps_per_epoch = 0;  // 0 uses the full training split
};

struct TrainConfig {
  std::uint64_t seed = 0;
  BackboneConfig backbone;
  GcmConfig gcm;
  AlignConfig align;
  LossConfig loss;
  OptimConfig optim;
  SynthConfig synth;
  DataConfig data;
  RunConfig run;
};

// Full-scale settings: the stock defaults above already describe this
// configuration, so the preset is the default-constructed config.
inline TrainConfig preset_paper_zrr() { return TrainConfig{}; }

// Small CPU-budget setup for desk experiments and tests.
inline TrainConfig preset_desk_small() {
  TrainConfig cfg;
  cfg.backbone.width = 16;
  cfg.backbone.n_rcab = 1;
  cfg.gcm.hidden = 32;
  cfg.gcm.guide_width = 16;
  cfg.align.estimator.kind = "brute";
  cfg.align.estimator.radius = 8;
  cfg.optim.lr = 1e-3;
  cfg.optim.epochs = 10;
  cfg.optim.batch_size = 8;
  cfg.optim.lr_halve_epochs = 50;
  cfg.synth.size = 64;
  cfg.synth.count = 64;
  cfg.data.augment = false;
  return cfg;
}

inline TrainConfig make_preset(const std::string& name) {
  if (name == "paper_zrr") return preset_paper_zrr();
  if (name == "desk_small") return preset_desk_small();
  throw ConfigError(strcat("unknown preset '", name,
                           "' (expected paper_zrr or desk_small)"));
}

namespace detail {

inline void check_known_keys(const nlohmann::json& j,
                             std::initializer_list<const char*> allowed,
                             const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    check<ConfigError>(ok, "unknown key '", it.key(), "' in ", where);
  }
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(strcat("bad value for '", key, "': ", e.what()));
    }
  }
}

}  // namespace detail

inline void validate_config(const TrainConfig& cfg) {
  const auto& b = cfg.backbone;
  check<ConfigError>(b.width >= 1 && b.n_rcab >= 1 && b.ca_reduction >= 1,
                     "backbone sizes must be positive");
  check<ConfigError>(b.skips == "add" || b.skips == "none",
                     "backbone.skips must be add or none");
  const auto kinds = backbone_kinds();
  check<ConfigError>(
      std::find(kinds.begin(), kinds.end(), b.kind) != kinds.end(),
      "unknown backbone.kind '", b.kind, "'");
  validate_gcm_config(cfg.gcm);
  check<ConfigError>(cfg.gcm.enabled || !cfg.gcm.use_target_guidance,
                     "gcm.use_target_guidance requires gcm.enabled");
  const AlignStrategy strat = parse_align_strategy(cfg.align.strategy);
  check<ConfigError>(strat != AlignStrategy::kWithGcm || cfg.gcm.enabled,
                     "align.strategy with_gcm requires gcm.enabled");
  check<ConfigError>(cfg.align.estimator.kind == "brute" ||
                         cfg.align.estimator.kind == "block" ||
                         cfg.align.estimator.kind == "external",
                     "align.estimator.kind must be brute, block, or "
                     "external; got '",
                     cfg.align.estimator.kind, "'");
  check<ConfigError>(cfg.align.mask_eps >= 0 && cfg.align.mask_eps < 1,
                     "align.mask_eps must be in [0, 1)");
  check<ConfigError>(cfg.loss.mode == "isp" || cfg.loss.mode == "ispgan",
                     "loss.mode must be isp or ispgan; got '", cfg.loss.mode,
                     "'");
  check<ConfigError>(cfg.loss.lambda_l1 >= 0 && cfg.loss.lambda_vgg >= 0 &&
                         cfg.loss.lambda_gan >= 0,
                     "loss weights must be nonnegative");
  check<ConfigError>(cfg.loss.gan_start_epoch >= 0,
                     "loss.gan_start_epoch must be nonnegative");
  check<ConfigError>(cfg.optim.lr > 0, "optim.lr must be positive");
  check<ConfigError>(cfg.optim.epochs >= 1, "optim.epochs must be >= 1");
  check<ConfigError>(cfg.optim.batch_size >= 1,
                     "optim.batch_size must be >= 1");
  check<ConfigError>(cfg.optim.lr_halve_epochs >= 1,
                     "optim.lr_halve_epochs must be >= 1");
  check<ConfigError>(cfg.synth.count >= 1, "synth.count must be >= 1");
  check<ConfigError>(cfg.synth.size >= 16 && cfg.synth.size % 16 == 0,
                     "synth.size must be a positive multiple of 16 so the "
                     "packed input tiles into the backbone");
  check<ConfigError>(cfg.synth.vignette >= 0 && cfg.synth.vignette < 1,
                     "synth.vignette must be in [0, 1)");
  check<ConfigError>(cfg.synth.gamma > 0, "synth.gamma must be positive");
  check<ConfigError>(cfg.synth.noise_sigma >= 0,
                     "synth.noise_sigma must be nonnegative");
  check<ConfigError>(cfg.synth.shift_min_x <= cfg.synth.shift_max_x &&
                         cfg.synth.shift_min_y <= cfg.synth.shift_max_y,
                     "synth shift ranges must be nonempty");
  check<ConfigError>(cfg.synth.color_jitter >= 0 &&
                         cfg.synth.color_jitter < 1,
                     "synth.color_jitter must be in [0, 1)");
  parse_bayer_pattern(cfg.synth.pattern);
  check<ConfigError>(cfg.data.demosaic == "bilinear",
                     "data.demosaic must be bilinear; got '",
                     cfg.data.demosaic, "'");
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  if (j.contains("preset")) {
    cfg = make_preset(j.at("preset").get<std::string>());
  }
  detail::check_known_keys(j,
                           {"preset", "seed", "backbone", "gcm", "align",
                            "loss", "optim", "synth", "data", "run"},
                           "config");
  detail::maybe(j, "seed", cfg.seed);
  if (j.contains("backbone")) {
    const auto& s = j.at("backbone");
    detail::check_known_keys(
        s, {"kind", "width", "n_rcab", "ca_reduction", "skips"}, "backbone");
    detail::maybe(s, "kind", cfg.backbone.kind);
    detail::maybe(s, "width", cfg.backbone.width);
    detail::maybe(s, "n_rcab", cfg.backbone.n_rcab);
    detail::maybe(s, "ca_reduction", cfg.backbone.ca_reduction);
    detail::maybe(s, "skips", cfg.backbone.skips);
  }
  if (j.contains("gcm")) {
    const auto& s = j.at("gcm");
    detail::check_known_keys(s,
                             {"enabled", "use_target_guidance", "use_coords",
                              "modulation", "hidden", "guide_width"},
                             "gcm");
    detail::maybe(s, "enabled", cfg.gcm.enabled);
    detail::maybe(s, "use_target_guidance", cfg.gcm.use_target_guidance);
    detail::maybe(s, "use_coords", cfg.gcm.use_coords);
    detail::maybe(s, "modulation", cfg.gcm.modulation);
    detail::maybe(s, "hidden", cfg.gcm.hidden);
    detail::maybe(s, "guide_width", cfg.gcm.guide_width);
  }
  if (j.contains("align")) {
    const auto& s = j.at("align");
    detail::check_known_keys(s, {"strategy", "estimator", "mask_eps"},
                             "align");
    detail::maybe(s, "strategy", cfg.align.strategy);
    detail::maybe(s, "mask_eps", cfg.align.mask_eps);
    if (s.contains("estimator")) {
      const auto& e = s.at("estimator");
      detail::check_known_keys(e, {"kind", "radius", "block", "weights"},
                               "align.estimator");
      detail::maybe(e, "kind", cfg.align.estimator.kind);
      detail::maybe(e, "radius", cfg.align.estimator.radius);
      detail::maybe(e, "block", cfg.align.estimator.block);
      detail::maybe(e, "weights", cfg.align.estimator.weights);
    }
  }
  if (j.contains("loss")) {
    const auto& s = j.at("loss");
    detail::check_known_keys(s,
                             {"mode", "lambda_l1", "lambda_vgg", "lambda_gan",
                              "gan_start_epoch", "perceptual_seed"},
                             "loss");
    detail::maybe(s, "mode", cfg.loss.mode);
    detail::maybe(s, "lambda_l1", cfg.loss.lambda_l1);
    detail::maybe(s, "lambda_vgg", cfg.loss.lambda_vgg);
    detail::maybe(s, "lambda_gan", cfg.loss.lambda_gan);
    detail::maybe(s, "gan_start_epoch", cfg.loss.gan_start_epoch);
    detail::maybe(s, "perceptual_seed", cfg.loss.perceptual_seed);
  }
  if (j.contains("optim")) {
    const auto& s = j.at("optim");
    detail::check_known_keys(s,
                             {"lr", "beta1", "beta2", "epochs", "batch_size",
                              "lr_halve_epochs", "separate_gcm"},
                             "optim");
    detail::maybe(s, "lr", cfg.optim.lr);
    detail::maybe(s, "beta1", cfg.optim.beta1);
    detail::maybe(s, "beta2", cfg.optim.beta2);
    detail::maybe(s, "epochs", cfg.optim.epochs);
    detail::maybe(s, "batch_size", cfg.optim.batch_size);
    detail::maybe(s, "lr_halve_epochs", cfg.optim.lr_halve_epochs);
    detail::maybe(s, "separate_gcm", cfg.optim.separate_gcm);
  }
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    detail::check_known_keys(
        s,
        {"count", "size", "vignette", "gamma", "noise_sigma", "shift_min_x",
         "shift_max_x", "shift_min_y", "shift_max_y", "integer_shifts",
         "color_jitter", "pattern", "color_matrix"},
        "synth");
    detail::maybe(s, "count", cfg.synth.count);
    detail::maybe(s, "size", cfg.synth.size);
    detail::maybe(s, "vignette", cfg.synth.vignette);
    detail::maybe(s, "gamma", cfg.synth.gamma);
    detail::maybe(s, "noise_sigma", cfg.synth.noise_sigma);
    detail::maybe(s, "shift_min_x", cfg.synth.shift_min_x);
    detail::maybe(s, "shift_max_x", cfg.synth.shift_max_x);
    detail::maybe(s, "shift_min_y", cfg.synth.shift_min_y);
    detail::maybe(s, "shift_max_y", cfg.synth.shift_max_y);
    detail::maybe(s, "integer_shifts", cfg.synth.integer_shifts);
    detail::maybe(s, "color_jitter", cfg.synth.color_jitter);
    detail::maybe(s, "pattern", cfg.synth.pattern);
    if (s.contains("color_matrix")) {
      auto v = s.at("color_matrix").get<std::vector<double>>();
      check<ConfigError>(v.size() == 9,
                         "synth.color_matrix must have 9 entries");
      std::copy(v.begin(), v.end(), cfg.synth.color_matrix.begin());
    }
  }
  if (j.contains("data")) {
    const auto& s = j.at("data");
    detail::check_known_keys(s, {"dir", "demosaic", "augment", "split_seed"},
                             "data");
    detail::maybe(s, "dir", cfg.data.dir);
    detail::maybe(s, "demosaic", cfg.data.demosaic);
    detail::maybe(s, "augment", cfg.data.augment);
    detail::maybe(s, "split_seed", cfg.data.split_seed);
  }
  if (j.contains("run")) {
    const auto& s = j.at("run");
    detail::check_known_keys(
        s, {"out_dir", "checkpoint_every", "val_every", "max_steps_per_epoch"},
        "run");
    detail::maybe(s, "out_dir", cfg.run.out_dir);
    detail::maybe(s, "checkpoint_every", cfg.run.checkpoint_every);
    detail::maybe(s, "val_every", cfg.run.val_every);
    detail::maybe(s, "max_steps_per_epoch", cfg.run.max_steps_per_epoch);
  }
  validate_config(cfg);
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  check<ConfigError>(bool(in), "cannot open config '", path, "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(strcat("config '", path, "' is not valid JSON: ",
                             e.what()));
  }
  return config_from_json(j);
}

inline nlohmann::json config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["backbone"] = {{"kind", cfg.backbone.kind},
                   {"width", cfg.backbone.width},
                   {"n_rcab", cfg.backbone.n_rcab},
                   {"ca_reduction", cfg.backbone.ca_reduction},
                   {"skips", cfg.backbone.skips}};
  j["gcm"] = {{"enabled", cfg.gcm.enabled},
              {"use_target_guidance", cfg.gcm.use_target_guidance},
              {"use_coords", cfg.gcm.use_coords},
              {"modulation", cfg.gcm.modulation},
              {"hidden", cfg.gcm.hidden},
              {"guide_width", cfg.gcm.guide_width}};
  j["align"] = {{"strategy", cfg.align.strategy},
                {"estimator",
                 {{"kind", cfg.align.estimator.kind},
                  {"radius", cfg.align.estimator.radius},
                  {"block", cfg.align.estimator.block},
                  {"weights", cfg.align.estimator.weights}}},
                {"mask_eps", cfg.align.mask_eps}};
  j["loss"] = {{"mode", cfg.loss.mode},
               {"lambda_l1", cfg.loss.lambda_l1},
               {"lambda_vgg", cfg.loss.lambda_vgg},
               {"lambda_gan", cfg.loss.lambda_gan},
               {"gan_start_epoch", cfg.loss.gan_start_epoch},
               {"perceptual_seed", cfg.loss.perceptual_seed}};
  j["optim"] = {{"lr", cfg.optim.lr},
                {"beta1", cfg.optim.beta1},
                {"beta2", cfg.optim.beta2},
                {"epochs", cfg.optim.epochs},
                {"batch_size", cfg.optim.batch_size},
                {"lr_halve_epochs", cfg.optim.lr_halve_epochs},
                {"separate_gcm", cfg.optim.separate_gcm}};
  j["synth"] = {{"count", cfg.synth.count},
                {"size", cfg.synth.size},
                {"vignette", cfg.synth.vignette},
                {"gamma", cfg.synth.gamma},
                {"noise_sigma", cfg.synth.noise_sigma},
                {"shift_min_x", cfg.synth.shift_min_x},
                {"shift_max_x", cfg.synth.shift_max_x},
                {"shift_min_y", cfg.synth.shift_min_y},
                {"shift_max_y", cfg.synth.shift_max_y},
                {"integer_shifts", cfg.synth.integer_shifts},
                {"color_jitter", cfg.synth.color_jitter},
                {"pattern", cfg.synth.pattern},
                {"color_matrix", cfg.synth.color_matrix}};
  j["data"] = {{"dir", cfg.data.dir},
               {"demosaic", cfg.data.demosaic},
               {"augment", cfg.data.augment},
               {"split_seed", cfg.data.split_seed}};
  j["run"] = {{"out_dir", cfg.run.out_dir},
              {"checkpoint_every", cfg.run.checkpoint_every},
              {"val_every", cfg.run.val_every},
              {"max_steps_per_epoch", cfg.run.max_steps_per_epoch}};
  return j;
}

inline std::unique_ptr<FlowEstimator> make_estimator(
    const EstimatorConfig& cfg) {
  if (cfg.kind == "brute") {
    return std::make_unique<BruteForceTranslation>(cfg.radius);
  }
  if (cfg.kind == "block") {
    return std::make_unique<BlockMatchFlow>(cfg.block, cfg.radius);
  }
  if (cfg.kind == "external") {
    return external_flow_adapter(cfg.weights);
  }
  throw ConfigError(strcat("unknown estimator kind '", cfg.kind, "'"));
}

}  // namespace misp
