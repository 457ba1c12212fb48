#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "evssl/errors.hpp"
#include "evssl/event.hpp"
#include "evssl/rng.hpp"

namespace evssl {

/// Augmentations operate on raw event streams, never on rasterized images.
/// All randomness comes from the supplied Rng in a fixed, documented draw
/// order, so each op is a pure function of (stream, parameters, seed).
struct AugmentConfig {
  double crop_scale_min = 0.2;
  double crop_scale_max = 1.0;
  double crop_aspect_min = 3.0 / 4.0;
  double crop_aspect_max = 4.0 / 3.0;
  double hflip_prob = 0.5;
  double polarity_flip_prob = 0.1;
  double drop_ratio_max = 0.3;   // per-call ratio drawn uniformly in [0, max]
  double noise_rate = 0.05;      // expected spurious events per output pixel
  double window_fraction = 0.5;  // fraction of the stream duration per view
  std::uint32_t out_width = 224;
  std::uint32_t out_height = 224;

  void validate() const {
    require(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0,
            Errc::config_error, "crop scale range outside (0,1]");
    require(crop_aspect_min > 0.0 && crop_aspect_min <= crop_aspect_max, Errc::config_error,
            "crop aspect range invalid");
    require(hflip_prob >= 0.0 && hflip_prob <= 1.0, Errc::config_error, "hflip_prob outside [0,1]");
    require(polarity_flip_prob >= 0.0 && polarity_flip_prob <= 1.0, Errc::config_error,
            "polarity_flip_prob outside [0,1]");
    require(drop_ratio_max >= 0.0 && drop_ratio_max < 1.0, Errc::config_error,
            "drop_ratio_max outside [0,1)");
    require(noise_rate >= 0.0, Errc::config_error, "noise_rate negative");
    require(window_fraction > 0.0 && window_fraction <= 1.0, Errc::config_error,
            "window_fraction outside (0,1]");
    require(out_width > 0 && out_height > 0, Errc::config_error, "zero output geometry");
  }

  /// Parameters that make augment_view the identity (up to re-basing) on a
  /// square sensor of side `side`.
  static AugmentConfig identity(std::uint32_t side) {
    AugmentConfig cfg;
    cfg.crop_scale_min = cfg.crop_scale_max = 1.0;
    cfg.crop_aspect_min = cfg.crop_aspect_max = 1.0;
    cfg.hflip_prob = 0.0;
    cfg.polarity_flip_prob = 0.0;
    cfg.drop_ratio_max = 0.0;
    cfg.noise_rate = 0.0;
    cfg.window_fraction = 1.0;
    cfg.out_width = cfg.out_height = side;
    return cfg;
  }
};

/// Rounds to the nearest integer with exact halves going down.
inline long long round_half_down(double v) {
  return static_cast<long long>(std::ceil(v - 0.5));
}

/// Keeps events inside a uniformly placed window of length
/// floor(fraction * duration), then re-bases timestamps so the first kept
/// event sits at t = 0. One uniform_int draw (the window start offset).
inline EventStream temporal_window(const EventStream& stream, double fraction, Rng& rng) {
  require(fraction > 0.0 && fraction <= 1.0, Errc::domain_error,
          "window fraction outside (0,1]");
  if (stream.empty()) return stream;

  const std::uint32_t t_first = stream.events.front().t;
  const std::uint32_t duration = stream.duration();
  const auto window = static_cast<std::uint32_t>(std::floor(fraction * duration));
  const std::uint32_t t0 = t_first + static_cast<std::uint32_t>(
      rng.uniform_int(static_cast<std::uint64_t>(duration - window) + 1));

  EventStream out;
  out.width = stream.width;
  out.height = stream.height;
  bool have_base = false;
  std::uint32_t base = 0;
  for (const Event& e : stream.events) {
    if (e.t < t0 || e.t > t0 + window) continue;
    if (!have_base) {
      base = e.t;
      have_base = true;
    }
    Event kept = e;
    kept.t = e.t - base;
    out.events.push_back(kept);
  }
  return out;
}

struct CropBox {
  std::uint32_t x0 = 0, y0 = 0, w = 0, h = 0;
};

/// Deterministic core of the crop: discards events outside `box` and affinely
/// remaps survivors onto [0,out_w) x [0,out_h), halves rounding down.
inline EventStream apply_crop_box(const EventStream& stream, const CropBox& box,
                                  std::uint32_t out_w, std::uint32_t out_h) {
  require(box.w >= 1 && box.h >= 1 && box.x0 + box.w <= stream.width &&
              box.y0 + box.h <= stream.height,
          Errc::domain_error, "crop box outside sensor");
  EventStream out;
  out.width = out_w;
  out.height = out_h;
  const double sx = static_cast<double>(out_w) / box.w;
  const double sy = static_cast<double>(out_h) / box.h;
  for (const Event& e : stream.events) {
    if (e.x < box.x0 || e.x >= box.x0 + box.w || e.y < box.y0 || e.y >= box.y0 + box.h) continue;
    const long long nx = round_half_down((e.x - box.x0) * sx);
    const long long ny = round_half_down((e.y - box.y0) * sy);
    Event mapped = e;
    mapped.x = static_cast<std::uint16_t>(std::clamp<long long>(nx, 0, out_w - 1));
    mapped.y = static_cast<std::uint16_t>(std::clamp<long long>(ny, 0, out_h - 1));
    out.events.push_back(mapped);
  }
  return out;
}

/// Samples a box with area fraction in [crop_scale_min, crop_scale_max] and
/// aspect in [crop_aspect_min, crop_aspect_max]. A degenerate or oversized
/// box is resampled up to 8 times before falling back to the full frame.
/// Draw order: per attempt (area fraction, aspect), then (x0, y0).
inline EventStream random_resized_crop(const EventStream& stream, const AugmentConfig& cfg,
                                       Rng& rng) {
  const std::uint32_t W = stream.width;
  const std::uint32_t H = stream.height;
  CropBox box{0, 0, W, H};
  for (int attempt = 0; attempt < 8; ++attempt) {
    const double frac = rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max);
    const double aspect = rng.uniform(cfg.crop_aspect_min, cfg.crop_aspect_max);
    const double area = frac * static_cast<double>(W) * static_cast<double>(H);
    const auto bw = static_cast<long long>(std::floor(std::sqrt(area * aspect) + 0.5));
    const auto bh = static_cast<long long>(std::floor(std::sqrt(area / aspect) + 0.5));
    if (bw >= 1 && bh >= 1 && bw <= W && bh <= H) {
      box.w = static_cast<std::uint32_t>(bw);
      box.h = static_cast<std::uint32_t>(bh);
      break;
    }
  }
  box.x0 = static_cast<std::uint32_t>(rng.uniform_int(W - box.w + 1));
  box.y0 = static_cast<std::uint32_t>(rng.uniform_int(H - box.h + 1));
  return apply_crop_box(stream, box, cfg.out_width, cfg.out_height);
}

/// With probability `prob` (one Bernoulli draw) reflects every x.
inline EventStream horizontal_flip(const EventStream& stream, double prob, Rng& rng) {
  EventStream out = stream;
  if (rng.bernoulli(prob)) {
    for (Event& e : out.events) e.x = static_cast<std::uint16_t>(stream.width - 1 - e.x);
  }
  return out;
}

/// With probability `prob` (one Bernoulli draw) negates every polarity.
inline EventStream polarity_flip(const EventStream& stream, double prob, Rng& rng) {
  EventStream out = stream;
  if (rng.bernoulli(prob)) {
    for (Event& e : out.events) e.polarity = -e.polarity;
  }
  return out;
}

/// Removes each event independently with probability `ratio` (one uniform
/// draw per event, consumed regardless of outcome).
inline EventStream event_drop(const EventStream& stream, double ratio, Rng& rng) {
  require(ratio >= 0.0 && ratio < 1.0, Errc::domain_error, "drop ratio outside [0,1)");
  EventStream out;
  out.width = stream.width;
  out.height = stream.height;
  for (const Event& e : stream.events) {
    if (rng.uniform() < ratio) continue;
    out.events.push_back(e);
  }
  return out;
}

/// Adds Poisson(rate * width * height) spurious events with uniform position,
/// uniform integer t over [0, max timestamp], uniform polarity, then
/// stably re-sorts by t (original events win ties). Draw order: count, then
/// (x, y, t, polarity) per injected event.
inline EventStream noise_inject(const EventStream& stream, double rate, Rng& rng) {
  require(rate >= 0.0, Errc::domain_error, "noise rate negative");
  EventStream out = stream;
  if (rate == 0.0) return out;
  const double lambda = rate * static_cast<double>(stream.width) * stream.height;
  const std::uint64_t count = rng.poisson(lambda);
  const std::uint32_t t_max = stream.empty() ? 0u : stream.events.back().t;
  out.events.reserve(out.events.size() + count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Event e;
    e.x = static_cast<std::uint16_t>(rng.uniform_int(stream.width));
    e.y = static_cast<std::uint16_t>(rng.uniform_int(stream.height));
    e.t = static_cast<std::uint32_t>(rng.uniform_int(static_cast<std::uint64_t>(t_max) + 1));
    e.polarity = rng.uniform_int(2) == 1 ? +1 : -1;
    out.events.push_back(e);
  }
  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  return out;
}

/// One augmented view: temporal window, random resized crop, horizontal flip,
/// polarity flip, event drop (ratio drawn uniformly in [0, drop_ratio_max]),
/// noise injection — in that order, consuming rng draws in that order.
inline EventStream augment_view(const EventStream& stream, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  EventStream s = temporal_window(stream, cfg.window_fraction, rng);
  s = random_resized_crop(s, cfg, rng);
  s = horizontal_flip(s, cfg.hflip_prob, rng);
  s = polarity_flip(s, cfg.polarity_flip_prob, rng);
  const double ratio = rng.uniform(0.0, cfg.drop_ratio_max);
  s = event_drop(s, ratio, rng);
  s = noise_inject(s, cfg.noise_rate, rng);
  s.validate();
  return s;
}

}  // namespace evssl
