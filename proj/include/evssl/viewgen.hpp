#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "evssl/augment.hpp"
#include "evssl/errors.hpp"
#include "evssl/event.hpp"
#include "evssl/rng.hpp"

namespace evssl {

/// Two-channel per-pixel count raster: channel 0 counts +1 events, channel 1
/// counts -1 events. Values become real-valued after normalize_image.
struct EventImage {
  static constexpr std::size_t kChannels = 2;

  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<double> values;  // [channel][row][col]

  static EventImage zeros(std::uint32_t w, std::uint32_t h) {
    EventImage img;
    img.width = w;
    img.height = h;
    img.values.assign(kChannels * static_cast<std::size_t>(w) * h, 0.0);
    return img;
  }

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return values[(c * height + y) * width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return values[(c * height + y) * width + x];
  }

  double total() const { return std::accumulate(values.begin(), values.end(), 0.0); }
};

/// One vectorized pixel block. `values` is laid out channel-major, then
/// row-major within the block; this order is fixed so checkpoints trained on
/// patch vectors stay portable.
struct Patch {
  std::size_t index = 0;  // linear index in the row-major patch grid
  std::vector<double> values;
};

/// Sampled patch collection with its provenance geometry.
struct PatchSet {
  std::vector<Patch> patches;  // indices strictly increasing
  std::size_t grid_rows = 0;
  std::size_t grid_cols = 0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::size_t patch_size = 0;

  std::size_t size() const { return patches.size(); }
  std::size_t total_patches() const { return grid_rows * grid_cols; }
};

inline EventImage event_histogram(const EventStream& stream) {
  EventImage img = EventImage::zeros(stream.width, stream.height);
  for (const Event& e : stream.events) {
    img.at(e.polarity > 0 ? 0 : 1, e.y, e.x) += 1.0;
  }
  return img;
}

/// v -> min(v, clip) / clip, mapping counts into [0, 1].
inline EventImage normalize_image(const EventImage& img, std::uint32_t clip) {
  require(clip >= 1, Errc::domain_error, "clip must be >= 1");
  EventImage out = img;
  const double c = static_cast<double>(clip);
  for (double& v : out.values) v = std::min(v, c) / c;
  return out;
}

/// Splits the image into an (height/P) x (width/P) grid of P x P blocks in
/// row-major order.
inline std::vector<Patch> patchify(const EventImage& img, std::size_t patch_size) {
  require(patch_size > 0 && img.width % patch_size == 0 && img.height % patch_size == 0,
          Errc::non_divisible_geometry,
          "patch size " + std::to_string(patch_size) + " does not divide " +
              std::to_string(img.width) + "x" + std::to_string(img.height));
  const std::size_t rows = img.height / patch_size;
  const std::size_t cols = img.width / patch_size;
  std::vector<Patch> patches;
  patches.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      Patch p;
      p.index = r * cols + c;
      p.values.reserve(EventImage::kChannels * patch_size * patch_size);
      for (std::size_t ch = 0; ch < EventImage::kChannels; ++ch) {
        for (std::size_t py = 0; py < patch_size; ++py) {
          for (std::size_t px = 0; px < patch_size; ++px) {
            p.values.push_back(img.at(ch, r * patch_size + py, c * patch_size + px));
          }
        }
      }
      patches.push_back(std::move(p));
    }
  }
  return patches;
}

/// Information quantity per patch: the L1 mass of its vectorized block.
inline std::vector<double> info_quantities(const std::vector<Patch>& patches) {
  require(!patches.empty(), Errc::domain_error, "empty patch list");
  std::vector<double> d;
  d.reserve(patches.size());
  for (const Patch& p : patches) {
    double s = 0.0;
    for (double v : p.values) s += std::abs(v);
    d.push_back(s);
  }
  return d;
}

/// L1-normalizes information quantities into a sampling distribution.
/// An all-zero input (fully empty view) falls back to the uniform
/// distribution so training can proceed.
inline std::vector<double> patch_distribution(const std::vector<double>& d) {
  require(!d.empty(), Errc::domain_error, "empty information vector");
  double total = 0.0;
  for (double v : d) {
    require(v >= 0.0, Errc::domain_error, "negative information quantity");
    total += v;
  }
  std::vector<double> prob(d.size());
  if (total > 0.0) {
    for (std::size_t i = 0; i < d.size(); ++i) prob[i] = d[i] / total;
  } else {
    std::fill(prob.begin(), prob.end(), 1.0 / static_cast<double>(d.size()));
  }
  return prob;
}

/// Draws n distinct indices without replacement by iterative renormalization:
/// draw one index proportionally to the remaining weights, zero it out,
/// repeat. Zero-probability entries are never selected. Result sorted
/// ascending.
inline std::vector<std::size_t> conditional_mask_sample(const std::vector<double>& prob,
                                                        std::size_t n, Rng& rng) {
  require(n >= 1, Errc::domain_error, "need at least one patch");
  std::size_t positive = 0;
  for (double p : prob) {
    require(p >= 0.0, Errc::domain_error, "negative probability");
    if (p > 0.0) ++positive;
  }
  require(n <= positive, Errc::insufficient_support,
          "requested " + std::to_string(n) + " patches from " + std::to_string(positive) +
              " with positive probability");

  std::vector<double> w = prob;
  std::vector<std::size_t> picked;
  picked.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    double total = 0.0;
    for (double v : w) total += v;
    const double u = rng.uniform() * total;
    double cum = 0.0;
    std::size_t chosen = prob.size();
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] <= 0.0) continue;
      cum += w[i];
      if (u < cum) {
        chosen = i;
        break;
      }
    }
    if (chosen == prob.size()) {
      // Rounding pushed u past the last cumulative bin; take the last
      // positive-weight index.
      for (std::size_t i = w.size(); i-- > 0;) {
        if (w[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    }
    picked.push_back(chosen);
    w[chosen] = 0.0;
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

/// Per-view knobs for histogram normalization and masking.
struct ViewConfig {
  std::size_t patch_size = 16;
  std::size_t patches_per_view = 49;
  std::uint32_t clip = 10;

  void validate() const {
    require(patch_size > 0, Errc::config_error, "patch_size must be positive");
    require(patches_per_view > 0, Errc::config_error, "patches_per_view must be positive");
    require(clip >= 1, Errc::config_error, "clip must be >= 1");
  }
};

/// Optional telemetry from view construction.
struct ViewStats {
  bool uniform_fallback_q = false;
  bool uniform_fallback_k = false;
};

namespace detail {

inline PatchSet build_view(const EventStream& stream, const AugmentConfig& acfg,
                           const ViewConfig& vcfg, Rng& rng, bool* uniform_fallback) {
  const EventStream view = augment_view(stream, acfg, rng);
  const EventImage img = normalize_image(event_histogram(view), vcfg.clip);
  std::vector<Patch> patches = patchify(img, vcfg.patch_size);
  const std::size_t L = patches.size();
  require(vcfg.patches_per_view <= L, Errc::config_error,
          "patches_per_view exceeds grid size " + std::to_string(L));

  std::vector<double> prob = patch_distribution(info_quantities(patches));
  std::size_t positive = 0;
  for (double p : prob) positive += p > 0.0 ? 1 : 0;
  bool fallback = false;
  if (positive < vcfg.patches_per_view) {
    // Too few informative patches in this view; fall back to uniform so a
    // full patch budget can still be drawn.
    std::fill(prob.begin(), prob.end(), 1.0 / static_cast<double>(L));
    fallback = true;
  }
  if (uniform_fallback != nullptr) *uniform_fallback = fallback;

  const std::vector<std::size_t> indices =
      conditional_mask_sample(prob, vcfg.patches_per_view, rng);

  PatchSet set;
  set.grid_rows = img.height / vcfg.patch_size;
  set.grid_cols = img.width / vcfg.patch_size;
  set.width = img.width;
  set.height = img.height;
  set.patch_size = vcfg.patch_size;
  set.patches.reserve(indices.size());
  for (std::size_t idx : indices) set.patches.push_back(std::move(patches[idx]));
  return set;
}

}  // namespace detail

/// Builds the two training views (x_q, x_k) from one stream: two independent
/// augment -> histogram -> normalize -> patchify -> information-weighted
/// sampling passes. Child seeds for the two passes are drawn from `rng`
/// up front (q first), so the views are independent but reproducible.
inline std::pair<PatchSet, PatchSet> make_views(const EventStream& stream,
                                                const AugmentConfig& acfg,
                                                const ViewConfig& vcfg, Rng& rng,
                                                ViewStats* stats = nullptr) {
  vcfg.validate();
  Rng rng_q = rng.split();
  Rng rng_k = rng.split();
  PatchSet xq = detail::build_view(stream, acfg, vcfg, rng_q,
                                   stats != nullptr ? &stats->uniform_fallback_q : nullptr);
  PatchSet xk = detail::build_view(stream, acfg, vcfg, rng_k,
                                   stats != nullptr ? &stats->uniform_fallback_k : nullptr);
  return {std::move(xq), std::move(xk)};
}

/// Full-coverage patch set of the raw (unaugmented) stream: identity
/// "augmentation", every patch kept. Used for frozen-feature extraction.
inline PatchSet full_patch_set(const EventStream& stream, const ViewConfig& vcfg) {
  const EventImage img = normalize_image(event_histogram(stream), vcfg.clip);
  std::vector<Patch> patches = patchify(img, vcfg.patch_size);
  PatchSet set;
  set.grid_rows = img.height / vcfg.patch_size;
  set.grid_cols = img.width / vcfg.patch_size;
  set.width = img.width;
  set.height = img.height;
  set.patch_size = vcfg.patch_size;
  set.patches = std::move(patches);
  return set;
}

}  // namespace evssl
