#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "evssl/autodiff.hpp"
#include "evssl/config.hpp"
#include "evssl/errors.hpp"
#include "evssl/event.hpp"
#include "evssl/losses.hpp"
#include "evssl/model.hpp"
#include "evssl/rng.hpp"
#include "evssl/viewgen.hpp"

namespace evssl {

struct TrainMetrics {
  std::uint64_t step = 0;
  double l_evt = 0.0;
  double l_rgb = 0.0;
  double l_kl = 0.0;
  double l_total = 0.0;
  double grad_norm = 0.0;
  double ema_m = 0.0;
  double wall_ms = 0.0;
};

/// One training sample: the two views plus its teacher row.
struct BatchSample {
  PatchSet xq;
  PatchSet xk;
  Tensor y;  // 1 x E, unit norm
  std::size_t index = 0;
};

namespace detail {
// Seed-stream tags keep the per-sample view randomness and the per-epoch
// shuffle disjoint.
inline constexpr std::uint64_t kViewTag = 0x5649455753454544ull;
inline constexpr std::uint64_t kEpochTag = 0x45504f4348534846ull;
}  // namespace detail

/// Dataset indices for one step: a per-epoch seeded permutation walked in
/// batch-size strides. Pure function of (N, B, seed, step), which is what
/// makes interrupted runs resumable.
inline std::vector<std::size_t> batch_indices(std::size_t dataset_size, std::size_t batch_size,
                                              std::uint64_t seed, std::uint64_t step) {
  require(dataset_size >= 1, Errc::domain_error, "empty dataset");
  const std::uint64_t steps_per_epoch =
      std::max<std::uint64_t>(1, dataset_size / batch_size);
  const std::uint64_t epoch = step / steps_per_epoch;
  const std::uint64_t within = step % steps_per_epoch;

  std::vector<std::size_t> perm(dataset_size);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed ^ detail::kEpochTag, epoch));
  for (std::size_t i = dataset_size; i > 1; --i) {
    std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
  }

  std::vector<std::size_t> indices(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    indices[i] = perm[(within * batch_size + i) % dataset_size];
  }
  return indices;
}

/// Loads and view-generates one batch. Per-sample randomness is seeded by
/// derive_seed(seed ^ view-tag, step, dataset index), so the batch is a pure
/// function of (manifest, indices, configs, seed, step).
inline std::vector<BatchSample> make_batch(const DatasetManifest& manifest,
                                           const std::vector<std::size_t>& indices,
                                           const AugmentConfig& acfg, const ViewConfig& vcfg,
                                           std::size_t embed_dim, std::uint64_t seed,
                                           std::uint64_t step) {
  std::vector<BatchSample> batch;
  batch.reserve(indices.size());
  for (std::size_t idx : indices) {
    require(idx < manifest.size(), Errc::domain_error, "sample index out of range");
    const ManifestEntry& entry = manifest.entries[idx];
    BatchSample sample;
    sample.index = idx;
    sample.y = load_tvec(entry.teacher_path, embed_dim);
    const EventStream stream = load_evt1(entry.event_path);
    Rng rng(derive_seed(seed ^ detail::kViewTag, step, idx));
    auto views = make_views(stream, acfg, vcfg, rng);
    sample.xq = std::move(views.first);
    sample.xk = std::move(views.second);
    batch.push_back(std::move(sample));
  }
  return batch;
}

/// Decoupled-weight-decay adaptive update with bias correction and linear
/// warmup. `t` is the 1-based update count. Applied elementwise, parameters
/// walked in online_params order:
///   m1 <- b1*m1 + (1-b1)*g;  m2 <- b2*m2 + (1-b2)*g*g
///   theta <- theta - lr_t * (m1/(1-b1^t)) / (sqrt(m2/(1-b2^t)) + eps)
///                  - lr_t * wd * theta
inline void optimizer_update(const std::vector<Tensor*>& params,
                             const std::vector<const Tensor*>& grads, std::vector<Tensor>& m1,
                             std::vector<Tensor>& m2, const OptimConfig& cfg, std::uint64_t t) {
  require(params.size() == grads.size() && params.size() == m1.size() &&
              params.size() == m2.size(),
          Errc::shape_mismatch, "optimizer state size mismatch");
  require(t >= 1, Errc::domain_error, "optimizer step must be 1-based");
  const double lr =
      cfg.warmup_steps > 0 && t <= cfg.warmup_steps
          ? cfg.lr * (static_cast<double>(t) / static_cast<double>(cfg.warmup_steps))
          : cfg.lr;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = *params[p];
    const Tensor& g = *grads[p];
    require(theta.same_shape(g), Errc::shape_mismatch, "gradient shape mismatch");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m1[p].v[i] = cfg.beta1 * m1[p].v[i] + (1.0 - cfg.beta1) * g.v[i];
      m2[p].v[i] = cfg.beta2 * m2[p].v[i] + (1.0 - cfg.beta2) * g.v[i] * g.v[i];
      const double mh1 = m1[p].v[i] / bc1;
      const double mh2 = m2[p].v[i] / bc2;
      theta.v[i] = theta.v[i] - lr * (mh1 / (std::sqrt(mh2) + cfg.eps)) -
                   lr * cfg.weight_decay * theta.v[i];
    }
  }
}

/// Forward pass of both branches for one batch; vars live on `tape`.
/// param_vars holds the trainable leaves in online_params order.
struct ForwardBatch {
  BatchVars vars;
  std::vector<ad::Var> param_vars;
};

/// The momentum branch runs on its own tape with constant parameters, so no
/// gradient can reach it; its outputs enter the online tape as constants.
inline ForwardBatch forward_batch(ad::Tape& tape, ModelState& state,
                                  const std::vector<BatchSample>& batch) {
  const std::size_t B = batch.size();
  require(B >= 2, Errc::domain_error, "train batch needs B >= 2");
  const std::size_t E = state.dims.E;

  ad::Tape mtape;
  EncoderVars menc = lift(mtape, state.mom_enc, false);
  HeadVars mevt = lift(mtape, state.mom_evt, false);
  Tensor k_evt(B, E);
  Tensor y(B, E);
  for (std::size_t i = 0; i < B; ++i) {
    ad::Var k = project(mtape, mevt, encode(mtape, state.dims, menc, batch[i].xk));
    const Tensor& krow = mtape.value(k);
    require(batch[i].y.cols == E, Errc::teacher_dim_mismatch, "teacher row dim mismatch");
    for (std::size_t j = 0; j < E; ++j) {
      k_evt.at(i, j) = krow.v[j];
      y.at(i, j) = batch[i].y.v[j];
    }
  }

  EncoderVars enc = lift(tape, state.online_enc, true);
  HeadVars hevt = lift(tape, state.online_evt, true);
  HeadVars himg = lift(tape, state.online_img, true);
  std::vector<ad::Var> q_evt_rows(B), q_img_rows(B);
  for (std::size_t i = 0; i < B; ++i) {
    ad::Var feat = encode(tape, state.dims, enc, batch[i].xq);
    q_evt_rows[i] = project(tape, hevt, feat);
    q_img_rows[i] = project(tape, himg, feat);
  }

  ForwardBatch out;
  out.vars = BatchVars{tape.concat_rows(q_evt_rows), tape.constant(std::move(k_evt)),
                       tape.concat_rows(q_img_rows), tape.constant(std::move(y))};
  for (ad::Var v : vars_of(enc)) out.param_vars.push_back(v);
  for (ad::Var v : vars_of(hevt)) out.param_vars.push_back(v);
  for (ad::Var v : vars_of(himg)) out.param_vars.push_back(v);
  return out;
}

/// One optimization step: forward both branches, total loss, backward,
/// optimizer update on online parameters, EMA update, step counter bump.
inline TrainMetrics train_step(ModelState& state, const std::vector<BatchSample>& batch,
                               const LossConfig& lcfg, const OptimConfig& ocfg) {
  const auto t_start = std::chrono::steady_clock::now();

  ad::Tape tape;
  ForwardBatch fwd = forward_batch(tape, state, batch);
  TotalLoss loss = total_loss(tape, fwd.vars, lcfg);
  const double total_value = tape.value(loss.total).item();
  require(std::isfinite(total_value) && std::isfinite(loss.evt) && std::isfinite(loss.rgb) &&
              std::isfinite(loss.kl),
          Errc::non_finite_loss,
          "non-finite loss at step " + std::to_string(state.step + 1) + " (evt=" +
              std::to_string(loss.evt) + ", rgb=" + std::to_string(loss.rgb) +
              ", kl=" + std::to_string(loss.kl) + ")");

  ad::Gradients grads = tape.backward(loss.total);
  std::vector<Tensor*> params = online_params(state);
  const std::vector<ad::Var>& pvars = fwd.param_vars;
  std::vector<Tensor> grad_store;
  grad_store.reserve(params.size());
  double grad_sq = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads.has(pvars[p])) {
      grad_store.push_back(grads.at(pvars[p]));
    } else {
      grad_store.push_back(Tensor::zeros(params[p]->rows, params[p]->cols));
    }
    for (double gv : grad_store.back().v) grad_sq += gv * gv;
  }
  std::vector<const Tensor*> grad_ptrs;
  grad_ptrs.reserve(grad_store.size());
  for (const Tensor& g : grad_store) grad_ptrs.push_back(&g);

  optimizer_update(params, grad_ptrs, state.m1, state.m2, ocfg, state.step + 1);
  ema_update(state, ocfg.ema_m);
  state.step += 1;

  TrainMetrics metrics;
  metrics.step = state.step;
  metrics.l_evt = loss.evt;
  metrics.l_rgb = loss.rgb;
  metrics.l_kl = loss.kl;
  metrics.l_total = total_value;
  metrics.grad_norm = std::sqrt(grad_sq);
  metrics.ema_m = ocfg.ema_m;
  metrics.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                              t_start)
                        .count();
  return metrics;
}

inline constexpr const char* kMetricsHeader =
    "step,l_evt,l_rgb,l_kl,l_total,grad_norm,ema_m,wall_ms";

inline std::string metrics_csv_line(const TrainMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f",
                static_cast<unsigned long long>(m.step), m.l_evt, m.l_rgb, m.l_kl, m.l_total,
                m.grad_norm, m.ema_m, m.wall_ms);
  return buf;
}

struct PretrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path metrics_csv;
  TrainMetrics last;
};

/// Full pre-training loop: seeded epoch shuffles, one metrics line per step,
/// periodic + final checkpoints (written atomically). Fully reproducible
/// from (cfg, seed); pass a checkpoint path to resume an interrupted run.
inline PretrainResult pretrain(const RunConfig& cfg,
                               const std::filesystem::path& resume_checkpoint = {}) {
  cfg.validate();
  require(!cfg.manifest.empty(), Errc::config_error, "no manifest configured");
  const DatasetManifest manifest = load_manifest(cfg.manifest);
  require(manifest.size() >= 1, Errc::config_error, "manifest is empty");

  ModelState state;
  if (resume_checkpoint.empty()) {
    state = init_model(cfg.seed, cfg.dims);
  } else {
    state = load_checkpoint(resume_checkpoint);
    require(state.dims.P == cfg.dims.P && state.dims.L == cfg.dims.L &&
                state.dims.D == cfg.dims.D && state.dims.E == cfg.dims.E,
            Errc::geometry_mismatch, "checkpoint dims differ from config");
    require(state.step <= cfg.optim.steps, Errc::config_error,
            "checkpoint is already past the configured step budget");
  }

  const std::filesystem::path out_dir(cfg.out_dir);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path metrics_path = out_dir / "metrics.csv";
  const bool fresh = resume_checkpoint.empty() || !std::filesystem::exists(metrics_path);
  std::ofstream metrics(metrics_path, fresh ? std::ios::trunc : std::ios::app);
  require(metrics.good(), Errc::io_error, "cannot open " + metrics_path.string());
  if (fresh) metrics << kMetricsHeader << "\n";

  PretrainResult result;
  result.metrics_csv = metrics_path;
  for (std::uint64_t step = state.step; step < cfg.optim.steps; ++step) {
    const std::vector<std::size_t> indices =
        batch_indices(manifest.size(), cfg.optim.batch_size, cfg.seed, step);
    const std::vector<BatchSample> batch = make_batch(
        manifest, indices, cfg.augment, cfg.view, cfg.dims.E, cfg.seed, step);
    result.last = train_step(state, batch, cfg.loss, cfg.optim);
    metrics << metrics_csv_line(result.last) << "\n";
    metrics.flush();
    if (state.step % cfg.checkpoint_every == 0 || state.step == cfg.optim.steps) {
      save_checkpoint(out_dir / ("ckpt_" + std::to_string(state.step) + ".evck"), state);
    }
  }
  result.final_checkpoint = out_dir / "ckpt_final.evck";
  save_checkpoint(result.final_checkpoint, state);
  return result;
}

}  // namespace evssl
