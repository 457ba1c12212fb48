#pragma once

// Small dataset + run-config fixtures for loop-level tests.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>

#include "evssl/config.hpp"
#include "evssl/synth.hpp"

namespace evssl::test {

inline SynthConfig small_synth_config(std::uint64_t seed = 31) {
  SynthConfig s;
  s.classes = 2;
  s.samples_per_class = 8;
  s.width = 32;
  s.height = 32;
  s.events_per_sample = 600;
  s.teacher_noise_sigma = 0.2;
  s.embed_dim = 8;
  s.seed = seed;
  return s;
}

/// Generates a 16-sample dataset under root/data and returns a config that
/// trains a tiny model on it in fractions of a second per step.
inline RunConfig small_run_config(const std::filesystem::path& root, std::uint64_t seed = 31) {
  const SynthConfig s = small_synth_config(seed);
  const std::filesystem::path manifest = gen_dataset(s, root / "data");

  RunConfig cfg;
  cfg.manifest = manifest.string();
  cfg.dims = Dims{/*P=*/8, /*L=*/16, /*D=*/16, /*E=*/8};
  cfg.augment.out_width = 32;
  cfg.augment.out_height = 32;
  cfg.augment.window_fraction = 0.6;
  cfg.view.patch_size = 8;
  cfg.view.patches_per_view = 6;
  cfg.view.clip = 5;
  cfg.optim.lr = 1e-3;
  cfg.optim.steps = 10;
  cfg.optim.batch_size = 4;
  cfg.optim.warmup_steps = 5;
  cfg.optim.ema_m = 0.99;
  cfg.synth = s;
  cfg.seed = seed;
  cfg.out_dir = (root / "run").string();
  cfg.checkpoint_every = 10;
  return cfg;
}

inline std::string dbl(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Serializes a RunConfig into the [section] key=value file format.
inline std::string config_text(const RunConfig& cfg) {
  std::string t;
  auto kv = [&](const std::string& k, const std::string& v) { t += k + " = " + v + "\n"; };
  t += "[run]\n";
  kv("seed", std::to_string(cfg.seed));
  kv("out_dir", cfg.out_dir);
  kv("checkpoint_every", std::to_string(cfg.checkpoint_every));
  t += "\n[data]\n";
  kv("manifest", cfg.manifest);
  t += "\n[dims]\n";
  kv("patch_size", std::to_string(cfg.dims.P));
  kv("num_patches", std::to_string(cfg.dims.L));
  kv("feature_dim", std::to_string(cfg.dims.D));
  kv("embed_dim", std::to_string(cfg.dims.E));
  t += "\n[view]\n";
  kv("patches_per_view", std::to_string(cfg.view.patches_per_view));
  kv("clip", std::to_string(cfg.view.clip));
  t += "\n[augment]\n";
  kv("crop_scale_min", dbl(cfg.augment.crop_scale_min));
  kv("crop_scale_max", dbl(cfg.augment.crop_scale_max));
  kv("crop_aspect_min", dbl(cfg.augment.crop_aspect_min));
  kv("crop_aspect_max", dbl(cfg.augment.crop_aspect_max));
  kv("hflip_prob", dbl(cfg.augment.hflip_prob));
  kv("polarity_flip_prob", dbl(cfg.augment.polarity_flip_prob));
  kv("drop_ratio_max", dbl(cfg.augment.drop_ratio_max));
  kv("noise_rate", dbl(cfg.augment.noise_rate));
  kv("window_fraction", dbl(cfg.augment.window_fraction));
  kv("out_width", std::to_string(cfg.augment.out_width));
  kv("out_height", std::to_string(cfg.augment.out_height));
  t += "\n[loss]\n";
  kv("tau", dbl(cfg.loss.tau));
  kv("lambda1", dbl(cfg.loss.lambda1));
  kv("key_projection_mode",
     cfg.loss.key_projection_mode == KeyProjectionMode::paired ? "paired" : "query");
  t += "\n[optim]\n";
  kv("lr", dbl(cfg.optim.lr));
  kv("beta1", dbl(cfg.optim.beta1));
  kv("beta2", dbl(cfg.optim.beta2));
  kv("eps", dbl(cfg.optim.eps));
  kv("weight_decay", dbl(cfg.optim.weight_decay));
  kv("steps", std::to_string(cfg.optim.steps));
  kv("batch_size", std::to_string(cfg.optim.batch_size));
  kv("ema_m", dbl(cfg.optim.ema_m));
  kv("warmup_steps", std::to_string(cfg.optim.warmup_steps));
  t += "\n[synth]\n";
  kv("classes", std::to_string(cfg.synth.classes));
  kv("samples_per_class", std::to_string(cfg.synth.samples_per_class));
  kv("width", std::to_string(cfg.synth.width));
  kv("height", std::to_string(cfg.synth.height));
  kv("events_per_sample", std::to_string(cfg.synth.events_per_sample));
  kv("teacher_noise_sigma", dbl(cfg.synth.teacher_noise_sigma));
  kv("embed_dim", std::to_string(cfg.synth.embed_dim));
  kv("seed", std::to_string(cfg.synth.seed));
  return t;
}

}  // namespace evssl::test
