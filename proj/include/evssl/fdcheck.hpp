#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "evssl/autodiff.hpp"
#include "evssl/losses.hpp"
#include "evssl/model.hpp"
#include "evssl/rng.hpp"
#include "evssl/tensor.hpp"
#include "evssl/trainer.hpp"

namespace evssl {

/// Central finite differences against analytic tape gradients. The FD side
/// only ever calls the forward closure, so it stays independent of the
/// adjoint rules it is checking.
struct FdResult {
  std::string name;
  double max_rel_err = 0.0;
};

/// Max over all coordinates of |g_analytic - g_fd| / max(1, |g_analytic|),
/// with g_fd = (f(x+h) - f(x-h)) / 2h.
inline double fd_max_rel_err(const std::vector<Tensor*>& inputs,
                             const std::vector<Tensor>& analytic,
                             const std::function<double()>& forward, double h = 1e-6) {
  require(inputs.size() == analytic.size(), Errc::shape_mismatch, "gradient count mismatch");
  double worst = 0.0;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    Tensor& x = *inputs[p];
    require(x.same_shape(analytic[p]), Errc::shape_mismatch, "gradient shape mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x.v[i];
      x.v[i] = saved + h;
      const double f_plus = forward();
      x.v[i] = saved - h;
      const double f_minus = forward();
      x.v[i] = saved;
      const double g_fd = (f_plus - f_minus) / (2.0 * h);
      const double g_an = analytic[p].v[i];
      worst = std::max(worst, std::abs(g_an - g_fd) / std::max(1.0, std::abs(g_an)));
    }
  }
  return worst;
}

namespace detail {

inline Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Tensor t(rows, cols);
  for (double& v : t.v) v = rng.uniform(-scale, scale);
  return t;
}

inline Tensor random_unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    double nsq = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      t.at(i, j) = rng.normal();
      nsq += t.at(i, j) * t.at(i, j);
    }
    const double n = std::sqrt(nsq);
    for (std::size_t j = 0; j < cols; ++j) t.at(i, j) /= n;
  }
  return t;
}

inline BatchEmbeddings random_batch(std::size_t B, std::size_t E, Rng& rng) {
  BatchEmbeddings b;
  b.q_evt = random_tensor(B, E, rng);
  b.k_evt = random_tensor(B, E, rng);
  b.q_img = random_tensor(B, E, rng);
  b.y = random_unit_rows(B, E, rng);
  return b;
}

inline PatchSet random_patch_set(const Dims& dims, std::size_t n, Rng& rng) {
  PatchSet set;
  set.patch_size = dims.P;
  const std::size_t side = static_cast<std::size_t>(std::sqrt(static_cast<double>(dims.L)));
  set.grid_rows = side;
  set.grid_cols = dims.L / side;
  set.width = static_cast<std::uint32_t>(set.grid_cols * dims.P);
  set.height = static_cast<std::uint32_t>(set.grid_rows * dims.P);
  std::vector<std::size_t> all(dims.L);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t i = dims.L; i > 1; --i) std::swap(all[i - 1], all[rng.uniform_int(i)]);
  all.resize(n);
  std::sort(all.begin(), all.end());
  for (std::size_t idx : all) {
    Patch p;
    p.index = idx;
    p.values.resize(dims.patch_vec());
    for (double& v : p.values) v = rng.uniform();
    set.patches.push_back(std::move(p));
  }
  return set;
}

}  // namespace detail

/// The per-loss and end-to-end gradient checks (fixed sizes B=4, E=8, D=16),
/// `instances` seeded random instances each. Returns the worst relative
/// error per check.
inline std::vector<FdResult> gradient_check_suite(std::uint64_t seed, int instances = 20) {
  constexpr std::size_t B = 4;
  constexpr std::size_t E = 8;
  const double tau = 0.2;

  std::vector<FdResult> results;

  {  // InfoNCE with normalized inputs, gradients through query and keys.
    FdResult r{"info_nce", 0.0};
    for (int inst = 0; inst < instances; ++inst) {
      Rng rng(derive_seed(seed, 1, inst));
      Tensor q = detail::random_tensor(1, E, rng);
      Tensor keys = detail::random_tensor(B, E, rng);
      const std::size_t pos = inst % B;
      auto forward = [&]() {
        ad::Tape tape;
        return tape
            .value(info_nce(tape, tape.param(q), tape.param(keys), pos, tau, true))
            .item();
      };
      ad::Tape tape;
      ad::Var vq = tape.param(q);
      ad::Var vk = tape.param(keys);
      ad::Gradients g = tape.backward(info_nce(tape, vq, vk, pos, tau, true));
      r.max_rel_err = std::max(
          r.max_rel_err,
          fd_max_rel_err({&q, &keys}, {g.at(vq), g.at(vk)}, forward));
    }
    results.push_back(r);
  }

  auto batch_loss_check = [&](const std::string& name, std::uint64_t tag, auto build) {
    FdResult r{name, 0.0};
    for (int inst = 0; inst < instances; ++inst) {
      Rng rng(derive_seed(seed, tag, inst));
      BatchEmbeddings b = detail::random_batch(B, E, rng);
      auto forward = [&]() {
        ad::Tape tape;
        BatchVars vars = lift(tape, b);
        return tape.value(build(tape, vars)).item();
      };
      ad::Tape tape;
      BatchVars vars = lift(tape, b);
      ad::Gradients g = tape.backward(build(tape, vars));
      std::vector<Tensor*> inputs;
      std::vector<Tensor> analytic;
      if (g.has(vars.q_evt)) {
        inputs.push_back(&b.q_evt);
        analytic.push_back(g.at(vars.q_evt));
      }
      if (g.has(vars.q_img)) {
        inputs.push_back(&b.q_img);
        analytic.push_back(g.at(vars.q_img));
      }
      r.max_rel_err = std::max(r.max_rel_err, fd_max_rel_err(inputs, analytic, forward));
    }
    results.push_back(r);
  };

  batch_loss_check("l_evt", 2, [&](ad::Tape& tape, const BatchVars& vars) {
    return event_projection_loss(tape, vars, tau);
  });
  batch_loss_check("l_rgb", 3, [&](ad::Tape& tape, const BatchVars& vars) {
    return event_rgb_loss(tape, vars, tau);
  });
  batch_loss_check("l_kl", 4, [&](ad::Tape& tape, const BatchVars& vars) {
    ad::Var s_q = pairwise_scores(tape, vars.q_img, tau);
    ad::Var s_y = pairwise_scores(tape, vars.y, tau);
    return kl_alignment(tape, s_q, s_y);
  });
  batch_loss_check("l_total", 5, [&](ad::Tape& tape, const BatchVars& vars) {
    LossConfig cfg;
    cfg.tau = tau;
    return total_loss(tape, vars, cfg).total;
  });

  {  // Total loss end-to-end through the encoder and both heads.
    FdResult r{"model_composite", 0.0};
    Dims dims{/*P=*/4, /*L=*/16, /*D=*/16, /*E=*/8};
    LossConfig lcfg;
    lcfg.tau = tau;
    for (int inst = 0; inst < instances; ++inst) {
      Rng rng(derive_seed(seed, 6, inst));
      ModelState state = init_model(rng.u64(), dims);
      std::vector<BatchSample> batch(B);
      for (std::size_t i = 0; i < B; ++i) {
        batch[i].xq = detail::random_patch_set(dims, 4, rng);
        batch[i].xk = detail::random_patch_set(dims, 4, rng);
        batch[i].y = detail::random_unit_rows(1, E, rng);
        batch[i].index = i;
      }
      auto forward = [&]() {
        ad::Tape tape;
        ForwardBatch fwd = forward_batch(tape, state, batch);
        return tape.value(total_loss(tape, fwd.vars, lcfg).total).item();
      };
      ad::Tape tape;
      ForwardBatch fwd = forward_batch(tape, state, batch);
      ad::Gradients g = tape.backward(total_loss(tape, fwd.vars, lcfg).total);
      std::vector<Tensor*> params = online_params(state);
      std::vector<Tensor> analytic;
      for (std::size_t p = 0; p < params.size(); ++p) {
        analytic.push_back(g.has(fwd.param_vars[p])
                               ? g.at(fwd.param_vars[p])
                               : Tensor::zeros(params[p]->rows, params[p]->cols));
      }
      r.max_rel_err = std::max(r.max_rel_err, fd_max_rel_err(params, analytic, forward));
    }
    results.push_back(r);
  }

  return results;
}

}  // namespace evssl
