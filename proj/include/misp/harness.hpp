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

#include <cstdio>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "misp/checkpoint.hpp"
#include "misp/config.hpp"
#include "misp/evalmetrics.hpp"
#include "misp/gcm.hpp"
#include "misp/losses.hpp"
#include "misp/optim.hpp"

namespace misp {

// ---------------------------------------------------------------------------
// Data generation

inline std::vector<SyntheticPair> generate_pairs(const TrainConfig& cfg) {
  const SynthConfig& sc = cfg.synth;
  Rng rng(cfg.seed ^ 0x53594e54ull);
  std::vector<SyntheticPair> pairs;
  pairs.reserve(size_t(sc.count));
  for (int i = 0; i < sc.count; ++i) {
    Tensor<float> scene = make_scene(sc.size, sc.size, rng);
    GenParams gp;
    gp.color_matrix = sc.color_matrix;
    if (sc.color_jitter > 0) {
      for (int r = 0; r < 3; ++r) {
        const double s =
            rng.uniform(1.0 - sc.color_jitter, 1.0 + sc.color_jitter);
        for (int c = 0; c < 3; ++c) gp.color_matrix[size_t(r * 3 + c)] *= s;
      }
    }
    gp.gamma = sc.gamma;
    gp.vignette = sc.vignette;
    gp.noise_sigma = sc.noise_sigma;
    if (sc.integer_shifts) {
      gp.shift_x = double(rng.randint(int(std::lround(sc.shift_min_x)),
                                      int(std::lround(sc.shift_max_x))));
      gp.shift_y = double(rng.randint(int(std::lround(sc.shift_min_y)),
                                      int(std::lround(sc.shift_max_y))));
    } else {
      gp.shift_x = rng.uniform(sc.shift_min_x, sc.shift_max_x);
      gp.shift_y = rng.uniform(sc.shift_min_y, sc.shift_max_y);
    }
    gp.pattern = parse_bayer_pattern(sc.pattern);
    gp.noise_seed = rng.bits();
    pairs.push_back(synth_pair(scene, gp));
  }
  return pairs;
}

inline void generate_dataset(const TrainConfig& cfg) {
  const auto pairs = generate_pairs(cfg);
  for (size_t i = 0; i < pairs.size(); ++i) {
    save_pair(cfg.data.dir, int(i), pairs[i]);
  }
}

// Loads the dataset under cfg.data.dir, generating it in memory when that
// directory holds no pairs.
inline std::vector<SyntheticPair> load_or_generate(const TrainConfig& cfg) {
  if (dataset_size(cfg.data.dir) > 0) return load_dataset(cfg.data.dir);
  return generate_pairs(cfg);
}

// ---------------------------------------------------------------------------
// Model: backbone plus optional color mapping and discriminator, all in one
// parameter store so a checkpoint captures the full state.

class Model {
 public:
  explicit Model(const TrainConfig& cfg) : cfg_(cfg) {
    Rng master(cfg.seed);
    Rng init = master.fork(1);
    isp_ = make_backbone<float>(store_, cfg.backbone, init);
    if (cfg.gcm.enabled) {
      gcm_ = std::make_unique<Gcm<float>>(store_, cfg.gcm, init);
    }
    if (cfg.loss.mode == "ispgan") {
      disc_ = std::make_unique<PatchDiscriminator<float>>(store_, init);
    }
  }

  const TrainConfig& config() const { return cfg_; }
  ParamStore<float>& store() { return store_; }
  const ParamStore<float>& store() const { return store_; }
  LiteIspNet<float>& isp() { return *isp_; }
  bool has_gcm() const { return gcm_ != nullptr; }
  const Gcm<float>& gcm() const { return *gcm_; }
  bool has_disc() const { return disc_ != nullptr; }
  const PatchDiscriminator<float>& disc() const { return *disc_; }

 private:
  TrainConfig cfg_;
  ParamStore<float> store_;
  std::unique_ptr<LiteIspNet<float>> isp_;
  std::unique_ptr<Gcm<float>> gcm_;
  std::unique_ptr<PatchDiscriminator<float>> disc_;
};

// Per-pair tensors the model consumes.
struct Sample {
  Tensor<float> packed;  // (1, 4, H/2, W/2)
  Tensor<float> dem;     // (1, 3, H, W)
  Tensor<float> target;  // (1, 3, H, W)
  Tensor<float> gt;      // (1, 3, H, W)
};

inline Sample preprocess_pair(const SyntheticPair& pair) {
  Sample s;
  s.packed = pack_bayer(pair.raw);
  s.dem = demosaic_simple(pair.raw);
  s.target = pair.target;
  s.gt = pair.aligned_gt;
  return s;
}

struct StepStats {
  double total = 0;
  double isp = 0;
  double gcm = 0;
  double gan_g = 0;
  double gan_d = 0;
  double mask_fraction = 1;
  bool mask_empty = false;
};

struct SplitEval {
  double psnr_isp = 0;
  double ssim_isp = 0;
  double psnr_gcm = 0;  // 0 when the model has no color mapping module
  int count = 0;
};

struct FitResult {
  std::string checkpoint_path;
  SplitEval val;
  nlohmann::json log = nlohmann::json::array();
};

struct Restored {
  Tensor<float> isp;  // (1, 3, H, W), clamped to [0, 1]
  Tensor<float> gcm;  // empty when the model has no color mapping module
};

// ---------------------------------------------------------------------------
// Trainer

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg)
      : cfg_(cfg),
        model_(cfg),
        perceptual_(cfg.loss.perceptual_seed),
        strategy_(parse_align_strategy(cfg.align.strategy)),
        rng_(cfg.seed) {
    validate_config(cfg);
    if (strategy_ != AlignStrategy::kNone) {
      estimator_ = make_estimator(cfg.align.estimator);
    }
    AdamConfig acfg;
    acfg.lr = cfg.optim.lr;
    acfg.beta1 = cfg.optim.beta1;
    acfg.beta2 = cfg.optim.beta2;
    auto gen = model_.store().trainable("liteisp.");
    if (model_.has_gcm() && !cfg.optim.separate_gcm) {
      for (auto& v : model_.store().trainable("gcm.")) gen.push_back(v);
    }
    opt_gen_.emplace(std::move(gen), acfg);
    if (model_.has_gcm() && cfg.optim.separate_gcm) {
      opt_gcm_.emplace(model_.store().trainable("gcm."), acfg);
    }
    if (model_.has_disc()) {
      opt_disc_.emplace(model_.store().trainable("disc."), acfg);
    }
  }

  const TrainConfig& config() const { return cfg_; }
  Model& model() { return model_; }
  FlowEstimator* estimator() { return estimator_.get(); }

  // One optimization step over a batch. Gradient flows through the restored
  // image and the color-mapped image only; the warped target and its mask
  // are constants rebuilt from the current alignment.
  StepStats step(const std::vector<Sample>& batch, int epoch) {
    check<ParameterError>(!batch.empty(), "step: empty batch");
    std::vector<const Tensor<float>*> packed_p, dem_p, target_p;
    for (const auto& s : batch) {
      packed_p.push_back(&s.packed);
      dem_p.push_back(&s.dem);
      target_p.push_back(&s.target);
    }
    const Tensor<float> packed = concat_batch(packed_p);
    const Tensor<float> dem = concat_batch(dem_p);
    const Tensor<float> target = concat_batch(target_p);
    const Tensor<float> coords = tiled_coords(dem.shape);

    const bool gan_now = model_.has_disc() &&
                         epoch >= cfg_.loss.gan_start_epoch;
    const bool need_isp = gan_now || strategy_ == AlignStrategy::kWithOutput ||
                          cfg_.loss.lambda_l1 != 0 ||
                          cfg_.loss.lambda_vgg != 0;

    nn::Var<float> y_hat;
    if (need_isp) y_hat = model_.isp().forward(nn::Var<float>::constant(packed));
    nn::Var<float> y_tilde;
    if (model_.has_gcm()) {
      y_tilde = model_.gcm().forward(dem, &target, &coords);
    }

    // Alignment reference chosen by strategy, per sample.
    Tensor<float> reference;
    switch (strategy_) {
      case AlignStrategy::kNone:
        break;
      case AlignStrategy::kWithOutput:
        reference = clamp01(y_hat.val());
        break;
      case AlignStrategy::kWithDemosaicked:
        reference = dem;
        break;
      case AlignStrategy::kWithGcm:
        reference = clamp01(y_tilde.val());
        break;
    }
    const int B = target.shape.n;
    std::vector<Tensor<float>> warped_s, mask_s;
    for (int n = 0; n < B; ++n) {
      Tensor<float> t1 = slice_batch(target, n);
      Tensor<float> r1;
      const Tensor<float>* ref = nullptr;
      if (strategy_ != AlignStrategy::kNone) {
        r1 = slice_batch(reference, n);
        ref = &r1;
      }
      AlignResult ar = align_target(strategy_, t1, ref, estimator_.get(),
                                    float(cfg_.align.mask_eps));
      warped_s.push_back(std::move(ar.warped));
      mask_s.push_back(std::move(ar.mask));
    }
    std::vector<const Tensor<float>*> wp, mp;
    for (int n = 0; n < B; ++n) {
      wp.push_back(&warped_s[size_t(n)]);
      mp.push_back(&mask_s[size_t(n)]);
    }
    const Tensor<float> warped = concat_batch(wp);
    const Tensor<float> mask = concat_batch(mp);

    StepStats stats;
    double mask_sum = 0;
    for (const float m : mask.data) mask_sum += m;
    stats.mask_fraction = mask_sum / double(mask.numel());
    stats.mask_empty = mask_sum == 0;

    LossTerms<float> terms;
    if (need_isp) {
      auto li = loss_isp<float>(y_hat, warped, mask,
                                cfg_.loss.lambda_vgg != 0 ? &perceptual_
                                                          : nullptr,
                                float(cfg_.loss.lambda_l1),
                                float(cfg_.loss.lambda_vgg));
      stats.isp = li.value.val().data[0];
      terms.isp = li.value;
    }
    if (model_.has_gcm()) {
      auto lg = loss_gcm<float>(y_tilde, warped, mask);
      stats.gcm = lg.value.val().data[0];
      terms.gcm = lg.value;
    }
    if (gan_now) {
      auto d_fake = model_.disc().forward(y_hat, true);
      auto lgan = lsgan_generator_loss(d_fake);
      stats.gan_g = lgan.val().data[0];
      terms.gan_generator = lgan;
    }
    auto total = loss_total(terms, gan_now ? "ispgan" : "isp",
                            float(cfg_.loss.lambda_gan));
    stats.total = total.val().data[0];
    if (!std::isfinite(stats.total)) diagnostic_dump(stats, epoch);

    model_.store().zero_grads();
    nn::backward(total);
    opt_gen_->step();
    if (opt_gcm_) opt_gcm_->step();

    if (gan_now) {
      auto d_real = model_.disc().forward(nn::Var<float>::constant(target),
                                          true);
      auto d_fake =
          model_.disc().forward(nn::Var<float>::constant(y_hat.val()), true);
      auto ld = lsgan_discriminator_loss(d_real, d_fake);
      stats.gan_d = ld.val().data[0];
      if (!std::isfinite(stats.gan_d)) diagnostic_dump(stats, epoch);
      model_.store().zero_grads();
      nn::backward(ld);
      opt_disc_->step();
    }
    return stats;
  }

  // Full training loop: LR halving schedule, optional per-epoch validation
  // and checkpoints, a final checkpoint, and a JSONL log. Deterministic for
  // a fixed config and dataset.
  FitResult fit(const std::vector<SyntheticPair>& pairs) {
    const SplitIndices split =
        split_indices(int(pairs.size()), cfg_.data.split_seed);
    std::filesystem::create_directories(cfg_.run.out_dir);
    FitResult result;

    for (int epoch = 0; epoch < cfg_.optim.epochs; ++epoch) {
      const double lr =
          lr_at_epoch(cfg_.optim.lr, epoch, cfg_.optim.lr_halve_epochs);
      opt_gen_->set_lr(lr);
      if (opt_gcm_) opt_gcm_->set_lr(lr);
      if (opt_disc_) opt_disc_->set_lr(lr);

      std::vector<int> order = split.train;
      Rng order_rng = rng_.fork(0xE0000 + std::uint64_t(epoch));
      order_rng.shuffle(order);
      Rng aug_rng = rng_.fork(0xA0000 + std::uint64_t(epoch));

      StepStats acc;
      acc.mask_fraction = 0;
      int steps = 0;
      for (size_t i = 0; i < order.size();
           i += size_t(cfg_.optim.batch_size)) {
        if (cfg_.run.max_steps_per_epoch > 0 &&
            steps >= cfg_.run.max_steps_per_epoch) {
          break;
        }
        std::vector<Sample> batch;
        const size_t end =
            std::min(order.size(), i + size_t(cfg_.optim.batch_size));
        for (size_t k = i; k < end; ++k) {
          const SyntheticPair& p = pairs[size_t(order[k])];
          if (cfg_.data.augment) {
            batch.push_back(preprocess_pair(augment(p, aug_rng)));
          } else {
            batch.push_back(preprocess_pair(p));
          }
        }
        StepStats st = step(batch, epoch);
        acc.total += st.total;
        acc.isp += st.isp;
        acc.gcm += st.gcm;
        acc.gan_g += st.gan_g;
        acc.gan_d += st.gan_d;
        acc.mask_fraction += st.mask_fraction;
        ++steps;
      }
      const double ns = steps > 0 ? double(steps) : 1.0;
      nlohmann::json line = {{"epoch", epoch},
                             {"lr", lr},
                             {"steps", steps},
                             {"loss_total", acc.total / ns},
                             {"loss_isp", acc.isp / ns},
                             {"loss_gcm", acc.gcm / ns},
                             {"loss_gan_g", acc.gan_g / ns},
                             {"loss_gan_d", acc.gan_d / ns},
                             {"mask_fraction", acc.mask_fraction / ns}};
      if (cfg_.run.val_every > 0 && (epoch + 1) % cfg_.run.val_every == 0) {
        const SplitEval ve = evaluate_split(pairs, split.val);
        line["val_psnr"] = ve.psnr_isp;
        if (model_.has_gcm()) line["val_psnr_gcm"] = ve.psnr_gcm;
      }
      result.log.push_back(line);
      std::printf("epoch %3d  lr %.3e  loss %.5f  mask %.3f\n", epoch, lr,
                  acc.total / ns, acc.mask_fraction / ns);
      std::fflush(stdout);
      if (cfg_.run.checkpoint_every > 0 &&
          (epoch + 1) % cfg_.run.checkpoint_every == 0) {
        char name[64];
        std::snprintf(name, sizeof name, "checkpoint_epoch_%04d.mckp",
                      epoch + 1);
        save(epoch + 1,
             (std::filesystem::path(cfg_.run.out_dir) / name).string());
      }
    }

    result.checkpoint_path =
        (std::filesystem::path(cfg_.run.out_dir) / "checkpoint_final.mckp")
            .string();
    save(cfg_.optim.epochs, result.checkpoint_path);
    result.val = evaluate_split(pairs, split.val);

    std::ofstream log(
        (std::filesystem::path(cfg_.run.out_dir) / "train_log.jsonl")
            .string(),
        std::ios::trunc);
    for (const auto& line : result.log) log << line.dump() << "\n";
    return result;
  }

  // Inference on one pair: restored image, plus the color-mapped input when
  // the model has that module.
  Restored restore(const Sample& s) {
    InferenceGuard<float> guard(model_.store());
    Restored out;
    out.isp =
        clamp01(model_.isp().forward(nn::Var<float>::constant(s.packed)).val());
    if (model_.has_gcm()) {
      const Tensor<float> coords = tiled_coords(s.dem.shape);
      out.gcm =
          clamp01(model_.gcm().forward(s.dem, &s.target, &coords).val());
    }
    return out;
  }

  // Restoration quality against the pixel-aligned ground truth.
  SplitEval evaluate_split(const std::vector<SyntheticPair>& pairs,
                           const std::vector<int>& idx) {
    SplitEval ev;
    for (const int i : idx) {
      const Sample s = preprocess_pair(pairs[size_t(i)]);
      Restored r = restore(s);
      ev.psnr_isp += psnr(r.isp, s.gt);
      ev.ssim_isp += ssim(r.isp, s.gt);
      if (model_.has_gcm()) ev.psnr_gcm += psnr(r.gcm, s.gt);
      ++ev.count;
    }
    if (ev.count > 0) {
      ev.psnr_isp /= ev.count;
      ev.ssim_isp /= ev.count;
      ev.psnr_gcm /= ev.count;
    }
    return ev;
  }

  // Protocol-based evaluation records for the report writer.
  std::vector<EvalRecord> eval_records(const std::vector<SyntheticPair>& pairs,
                                       const std::vector<int>& idx,
                                       const EvalOptions& opts) {
    std::unique_ptr<FlowEstimator> local;
    FlowEstimator* est = nullptr;
    if (opts.protocol != EvalProtocol::kOriginal) {
      if (!estimator_) local = make_estimator(cfg_.align.estimator);
      est = estimator_ ? estimator_.get() : local.get();
    }
    std::vector<EvalRecord> records;
    for (const int i : idx) {
      const Sample s = preprocess_pair(pairs[size_t(i)]);
      Restored r = restore(s);
      const Tensor<float>* proxy = nullptr;
      if (opts.protocol == EvalProtocol::kAlignGtWithRaw) {
        check<ConfigError>(model_.has_gcm(),
                           "protocol 'align_gt_with_raw' requires a model "
                           "with the color mapping module");
        proxy = &r.gcm;
      }
      records.push_back(
          evaluate_pair(i, r.isp, s.target, proxy, est, opts));
    }
    return records;
  }

  void save(int epoch, const std::string& path) {
    CheckpointMeta meta;
    meta.config = config_to_json(cfg_);
    meta.epoch = epoch;
    meta.rng_state = rng_.serialize();
    save_checkpoint(path, model_.store(), meta);
  }

  CheckpointMeta load(const std::string& path) {
    CheckpointMeta meta = load_checkpoint(path, model_.store());
    if (!meta.rng_state.empty()) rng_.deserialize(meta.rng_state);
    return meta;
  }

 private:
  const Tensor<float>& tiled_coords(const Shape& like) {
    if (!coords_cache_ || coords_cache_->shape.n != like.n ||
        coords_cache_->shape.h != like.h || coords_cache_->shape.w != like.w) {
      const Tensor<float> one = coordinate_map(like.h, like.w);
      std::vector<const Tensor<float>*> reps(size_t(like.n), &one);
      coords_cache_ = concat_batch(reps);
    }
    return *coords_cache_;
  }

  void diagnostic_dump(const StepStats& stats, int epoch) {
    std::filesystem::create_directories(cfg_.run.out_dir);
    const std::string path =
        (std::filesystem::path(cfg_.run.out_dir) / "diagnostic_nan.json")
            .string();
    nlohmann::json j = {{"epoch", epoch},
                        {"loss_total", stats.total},
                        {"loss_isp", stats.isp},
                        {"loss_gcm", stats.gcm},
                        {"loss_gan_g", stats.gan_g},
                        {"loss_gan_d", stats.gan_d},
                        {"mask_fraction", stats.mask_fraction}};
    std::ofstream out(path, std::ios::trunc);
    if (out) out << j.dump(2) << "\n";
    throw TrainingError(strcat("non-finite loss at epoch ", epoch,
                               "; diagnostics written to ", path));
  }

  TrainConfig cfg_;
  Model model_;
  PyramidExtractor<float> perceptual_;
  AlignStrategy strategy_;
  std::unique_ptr<FlowEstimator> estimator_;
  std::optional<Adam<float>> opt_gen_, opt_gcm_, opt_disc_;
  Rng rng_;
  std::optional<Tensor<float>> coords_cache_;
};

// ---------------------------------------------------------------------------
// Ablations

inline std::vector<std::string> ablation_suites() {
  return {"alignment", "gcm_components", "rcab_count"};
}

// Runs one named ablation suite and returns its report. Training suites fit
// every variant on the same data and score the held-out test split.
inline nlohmann::json run_ablation(const std::string& suite,
                                   const TrainConfig& base) {
  nlohmann::json report;
  report["suite"] = suite;
  nlohmann::json variants = nlohmann::json::array();

  if (suite == "rcab_count") {
    for (const int n : {2, 4, 8, 20}) {
      BackboneConfig bc = base.backbone;
      bc.n_rcab = n;
      ParamStore<float> store;
      Rng rng(base.seed);
      make_backbone<float>(store, bc, rng);
      variants.push_back({{"name", strcat("n_rcab_", n)},
                          {"n_rcab", n},
                          {"param_count", store.param_count("liteisp.")}});
    }
    report["variants"] = variants;
    return report;
  }

  const auto pairs = load_or_generate(base);
  const SplitIndices split =
      split_indices(int(pairs.size()), base.data.split_seed);

  if (suite == "alignment") {
    struct V {
      const char* name;
      const char* strategy;
      bool gcm;
    };
    for (const V v : {V{"none", "none", false},
                      V{"with_demosaicked", "with_demosaicked", false},
                      V{"with_gcm", "with_gcm", true}}) {
      TrainConfig cfg = base;
      cfg.align.strategy = v.strategy;
      cfg.gcm.enabled = v.gcm;
      if (!v.gcm) cfg.gcm.use_target_guidance = false;
      cfg.run.out_dir =
          (std::filesystem::path(base.run.out_dir) / strcat("ablate_", v.name))
              .string();
      Trainer trainer(cfg);
      trainer.fit(pairs);
      const SplitEval ev = trainer.evaluate_split(pairs, split.test);
      variants.push_back({{"name", v.name},
                          {"strategy", v.strategy},
                          {"test_psnr", ev.psnr_isp},
                          {"test_ssim", ev.ssim_isp}});
    }
    report["variants"] = variants;
    return report;
  }

  if (suite == "gcm_components") {
    struct V {
      const char* name;
      bool guidance, coords;
    };
    for (const V v : {V{"spn", false, false}, V{"spn_target", true, false},
                      V{"spn_target_coords", true, true}}) {
      TrainConfig cfg = base;
      cfg.gcm.enabled = true;
      cfg.gcm.use_target_guidance = v.guidance;
      cfg.gcm.use_coords = v.coords;
      cfg.align.strategy = "with_gcm";
      cfg.run.out_dir =
          (std::filesystem::path(base.run.out_dir) / strcat("ablate_", v.name))
              .string();
      Trainer trainer(cfg);
      trainer.fit(pairs);
      const SplitEval ev = trainer.evaluate_split(pairs, split.test);
      variants.push_back({{"name", v.name},
                          {"use_target_guidance", v.guidance},
                          {"use_coords", v.coords},
                          {"test_psnr_gcm", ev.psnr_gcm},
                          {"test_psnr", ev.psnr_isp}});
    }
    report["variants"] = variants;
    return report;
  }

  throw ConfigError(strcat("unknown ablation suite '", suite,
                           "'; available: alignment, gcm_components, "
                           "rcab_count"));
}

}  // namespace misp
