#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evssl/errors.hpp"
#include "evssl/event.hpp"
#include "evssl/model.hpp"
#include "evssl/rng.hpp"
#include "evssl/tensor.hpp"

namespace evssl {

/// Synthetic paired dataset: class k is a bar of orientation k*pi/K drifting
/// across the sensor, plus a surrogate teacher embedding near the k-th basis
/// vector. Orientation is recoverable from the event histogram, so a linear
/// probe has a real signal to find.
struct SynthConfig {
  std::size_t classes = 4;
  std::size_t samples_per_class = 128;
  std::uint32_t width = 64;
  std::uint32_t height = 64;
  std::size_t events_per_sample = 4000;
  double teacher_noise_sigma = 0.3;
  std::size_t embed_dim = 32;
  std::uint64_t seed = 0;

  void validate() const {
    require(classes >= 2, Errc::config_error, "need at least two classes");
    require(samples_per_class >= 1, Errc::config_error, "samples_per_class must be positive");
    require(width > 0 && height > 0, Errc::config_error, "zero sensor geometry");
    require(events_per_sample >= 2, Errc::config_error, "events_per_sample must be >= 2");
    require(teacher_noise_sigma >= 0.0 && std::isfinite(teacher_noise_sigma),
            Errc::config_error, "bad teacher_noise_sigma");
    require(embed_dim >= classes, Errc::config_error, "embed_dim must be >= classes");
  }
};

namespace detail {
inline constexpr std::uint64_t kSynthStreamTag = 0x53545245414d3031ull;
inline constexpr std::uint64_t kSynthTeacherTag = 0x5445414348455230ull;
inline constexpr std::uint32_t kSynthDurationUs = 100000;
}  // namespace detail

/// Event stream for class k: a bar with normal direction (cos, sin)(k*pi/K)
/// drifts a short distance along its normal. Leading-edge events are
/// positive, trailing-edge negative; positions carry Gaussian jitter and are
/// resampled while out of bounds. Exactly events_per_sample events, sorted.
inline EventStream gen_stream(std::size_t k, const SynthConfig& cfg, Rng& rng) {
  cfg.validate();
  require(k < cfg.classes, Errc::domain_error, "class id out of range");

  const double theta = static_cast<double>(k) * 3.14159265358979323846 /
                       static_cast<double>(cfg.classes);
  const double nx = std::cos(theta), ny = std::sin(theta);    // sweep normal
  const double bx = -std::sin(theta), by = std::cos(theta);   // bar direction
  const double side = static_cast<double>(std::min(cfg.width, cfg.height));
  const double sweep = 0.15 * side;       // drift amplitude along the normal
  const double halfspan = 0.60 * side;    // bar half-length
  const double edge_gap = 1.5;            // leading/trailing edge offset
  const double cx = 0.5 * cfg.width + rng.uniform(-0.1, 0.1) * cfg.width;
  const double cy = 0.5 * cfg.height + rng.uniform(-0.1, 0.1) * cfg.height;

  EventStream s;
  s.width = cfg.width;
  s.height = cfg.height;
  s.events.reserve(cfg.events_per_sample);
  const std::size_t n = cfg.events_per_sample;
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = static_cast<std::uint32_t>(
        (static_cast<std::uint64_t>(i) * detail::kSynthDurationUs) / (n - 1));
    const double phase = 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0;
    const bool leading = i % 2 == 0;
    const double offset = sweep * phase + (leading ? edge_gap : -edge_gap);

    Event e;
    e.t = t;
    e.polarity = leading ? +1 : -1;
    for (int attempt = 0;; ++attempt) {
      const double u = rng.uniform(-halfspan, halfspan);
      const double px = cx + offset * nx + u * bx + 0.5 * rng.normal();
      const double py = cy + offset * ny + u * by + 0.5 * rng.normal();
      const auto ix = static_cast<long long>(std::floor(px + 0.5));
      const auto iy = static_cast<long long>(std::floor(py + 0.5));
      if (ix >= 0 && iy >= 0 && ix < cfg.width && iy < cfg.height) {
        e.x = static_cast<std::uint16_t>(ix);
        e.y = static_cast<std::uint16_t>(iy);
        break;
      }
      if (attempt >= 100) {  // pathological geometry; pin to the center
        e.x = static_cast<std::uint16_t>(cfg.width / 2);
        e.y = static_cast<std::uint16_t>(cfg.height / 2);
        break;
      }
    }
    s.events.push_back(e);
  }
  s.validate();
  return s;
}

/// Surrogate teacher embedding: normalize(e_k + sigma * g), unit norm.
inline Tensor gen_teacher(std::size_t k, const SynthConfig& cfg, Rng& rng) {
  cfg.validate();
  require(k < cfg.classes, Errc::domain_error, "class id out of range");
  Tensor y(1, cfg.embed_dim);
  y.v[k] = 1.0;
  if (cfg.teacher_noise_sigma > 0.0) {
    for (double& v : y.v) v += cfg.teacher_noise_sigma * rng.normal();
  }
  const double norm = l2_norm(y);
  require(norm >= 1e-12, Errc::domain_error, "degenerate teacher draw");
  for (double& v : y.v) v /= norm;
  return y;
}

/// Writes EVT1 + TVEC files and a labeled manifest under out_dir; fully
/// deterministic in cfg.seed. Returns the manifest path.
inline std::filesystem::path gen_dataset(const SynthConfig& cfg,
                                         const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  std::string manifest_text;
  for (std::size_t k = 0; k < cfg.classes; ++k) {
    for (std::size_t i = 0; i < cfg.samples_per_class; ++i) {
      Rng stream_rng(derive_seed(cfg.seed ^ detail::kSynthStreamTag, k, i));
      Rng teacher_rng(derive_seed(cfg.seed ^ detail::kSynthTeacherTag, k, i));
      const std::string stem = "c" + std::to_string(k) + "_s" + std::to_string(i);
      save_evt1(out_dir / (stem + ".evt1"), gen_stream(k, cfg, stream_rng));
      save_tvec(out_dir / (stem + ".tvec"), gen_teacher(k, cfg, teacher_rng));
      manifest_text += stem + ".evt1\t" + stem + ".tvec\t" + std::to_string(k) + "\n";
    }
  }
  const std::filesystem::path manifest_path = out_dir / "manifest.tsv";
  write_text_atomic(manifest_path, manifest_text);
  return manifest_path;
}

}  // namespace evssl
