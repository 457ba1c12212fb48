#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>

#include "evssl/augment.hpp"
#include "evssl/errors.hpp"
#include "evssl/losses.hpp"
#include "evssl/model.hpp"
#include "evssl/synth.hpp"
#include "evssl/viewgen.hpp"

namespace evssl {

/// Adaptive-moment optimizer settings with decoupled weight decay and linear
/// warmup, plus the loop-level knobs (steps, batch size, EMA coefficient).
struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t steps = 1000;
  std::size_t batch_size = 32;
  double ema_m = 0.99;
  std::uint64_t warmup_steps = 100;

  void validate() const {
    require(lr >= 0.0, Errc::config_error, "lr must be non-negative");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, Errc::config_error,
            "betas outside [0,1)");
    require(eps > 0.0, Errc::config_error, "eps must be positive");
    require(weight_decay >= 0.0, Errc::config_error, "weight_decay must be non-negative");
    require(steps >= 1, Errc::config_error, "steps must be >= 1");
    require(batch_size >= 2, Errc::config_error, "batch_size must be >= 2 for in-batch negatives");
    require(ema_m >= 0.0 && ema_m < 1.0, Errc::config_error, "ema_m outside [0,1)");
  }
};

/// Everything a run needs. Mirrors the config file layout; see parse_config.
struct RunConfig {
  std::string manifest;
  Dims dims;
  AugmentConfig augment;
  ViewConfig view;
  LossConfig loss;
  OptimConfig optim;
  SynthConfig synth;
  std::uint64_t seed = 0;
  std::string out_dir = "runs/out";
  std::uint64_t checkpoint_every = 100;

  void validate() const {
    dims.validate();
    augment.validate();
    view.validate();
    loss.validate();
    optim.validate();
    require(view.patch_size == dims.P, Errc::config_error, "view patch size must match dims");
    require(dims.P > 0 && augment.out_width % dims.P == 0 && augment.out_height % dims.P == 0,
            Errc::config_error, "patch size must divide the output geometry");
    const std::size_t grid = (augment.out_width / dims.P) * (augment.out_height / dims.P);
    require(grid == dims.L, Errc::config_error,
            "dims L=" + std::to_string(dims.L) + " but geometry gives " + std::to_string(grid));
    require(view.patches_per_view <= dims.L, Errc::config_error,
            "patches_per_view exceeds the patch grid");
    require(checkpoint_every >= 1, Errc::config_error, "checkpoint_every must be >= 1");
  }
};

namespace detail {

/// Consume-as-you-go key/value store: whatever is left after typed reads is
/// an unknown key, which the format treats as an error.
class ConfigStore {
 public:
  void put(const std::string& section, const std::string& key, const std::string& value,
           std::size_t line) {
    const auto full = section + "." + key;
    require(!values_.count(full), Errc::config_error,
            "duplicate key '" + full + "' at line " + std::to_string(line));
    values_[full] = value;
  }

  bool take(const std::string& section, const std::string& key, std::string& out) {
    const auto it = values_.find(section + "." + key);
    if (it == values_.end()) return false;
    out = it->second;
    values_.erase(it);
    return true;
  }

  template <typename T>
  void read(const std::string& section, const std::string& key, T& target) {
    std::string raw;
    if (!take(section, key, raw)) return;
    std::istringstream ss(raw);
    T value{};
    ss >> value;
    require(ss && ss.eof(), Errc::config_error,
            "bad value for " + section + "." + key + ": '" + raw + "'");
    target = value;
  }

  void read(const std::string& section, const std::string& key, std::string& target) {
    std::string raw;
    if (take(section, key, raw)) target = raw;
  }

  void finish() const {
    require(values_.empty(), Errc::config_error,
            values_.empty() ? "" : "unknown key '" + values_.begin()->first + "'");
  }

 private:
  std::map<std::string, std::string> values_;
};

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  std::size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace detail

/// Parses the key=value / [section] run-configuration format. '#' lines are
/// comments; unknown keys and malformed lines are errors.
inline RunConfig parse_config(const std::string& text) {
  detail::ConfigStore store;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    if (t.front() == '[') {
      require(t.back() == ']' && t.size() > 2, Errc::config_error,
              "malformed section at line " + std::to_string(line_no));
      section = t.substr(1, t.size() - 2);
      continue;
    }
    const std::size_t eq = t.find('=');
    require(eq != std::string::npos && !section.empty(), Errc::config_error,
            "malformed line " + std::to_string(line_no) + ": '" + t + "'");
    store.put(section, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)), line_no);
  }

  RunConfig cfg;
  store.read("run", "seed", cfg.seed);
  store.read("run", "out_dir", cfg.out_dir);
  store.read("run", "checkpoint_every", cfg.checkpoint_every);

  store.read("data", "manifest", cfg.manifest);

  store.read("dims", "patch_size", cfg.dims.P);
  store.read("dims", "num_patches", cfg.dims.L);
  store.read("dims", "feature_dim", cfg.dims.D);
  store.read("dims", "embed_dim", cfg.dims.E);

  store.read("view", "patches_per_view", cfg.view.patches_per_view);
  store.read("view", "clip", cfg.view.clip);
  cfg.view.patch_size = cfg.dims.P;

  store.read("augment", "crop_scale_min", cfg.augment.crop_scale_min);
  store.read("augment", "crop_scale_max", cfg.augment.crop_scale_max);
  store.read("augment", "crop_aspect_min", cfg.augment.crop_aspect_min);
  store.read("augment", "crop_aspect_max", cfg.augment.crop_aspect_max);
  store.read("augment", "hflip_prob", cfg.augment.hflip_prob);
  store.read("augment", "polarity_flip_prob", cfg.augment.polarity_flip_prob);
  store.read("augment", "drop_ratio_max", cfg.augment.drop_ratio_max);
  store.read("augment", "noise_rate", cfg.augment.noise_rate);
  store.read("augment", "window_fraction", cfg.augment.window_fraction);
  store.read("augment", "out_width", cfg.augment.out_width);
  store.read("augment", "out_height", cfg.augment.out_height);

  store.read("loss", "tau", cfg.loss.tau);
  store.read("loss", "lambda1", cfg.loss.lambda1);
  {
    std::string mode;
    store.read("loss", "key_projection_mode", mode);
    if (!mode.empty()) {
      require(mode == "paired" || mode == "query", Errc::config_error,
              "key_projection_mode must be 'paired' or 'query'");
      cfg.loss.key_projection_mode =
          mode == "paired" ? KeyProjectionMode::paired : KeyProjectionMode::query;
    }
  }

  store.read("optim", "lr", cfg.optim.lr);
  store.read("optim", "beta1", cfg.optim.beta1);
  store.read("optim", "beta2", cfg.optim.beta2);
  store.read("optim", "eps", cfg.optim.eps);
  store.read("optim", "weight_decay", cfg.optim.weight_decay);
  store.read("optim", "steps", cfg.optim.steps);
  store.read("optim", "batch_size", cfg.optim.batch_size);
  store.read("optim", "ema_m", cfg.optim.ema_m);
  store.read("optim", "warmup_steps", cfg.optim.warmup_steps);

  cfg.synth.embed_dim = cfg.dims.E;
  cfg.synth.seed = cfg.seed;
  store.read("synth", "classes", cfg.synth.classes);
  store.read("synth", "samples_per_class", cfg.synth.samples_per_class);
  store.read("synth", "width", cfg.synth.width);
  store.read("synth", "height", cfg.synth.height);
  store.read("synth", "events_per_sample", cfg.synth.events_per_sample);
  store.read("synth", "teacher_noise_sigma", cfg.synth.teacher_noise_sigma);
  store.read("synth", "embed_dim", cfg.synth.embed_dim);
  store.read("synth", "seed", cfg.synth.seed);

  store.finish();
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::missing_file, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace evssl
