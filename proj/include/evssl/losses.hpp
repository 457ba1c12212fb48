#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "evssl/autodiff.hpp"
#include "evssl/errors.hpp"
#include "evssl/tensor.hpp"

namespace evssl {

/// Which teacher row each key embedding is projected onto in the event loss:
/// its own paired row (default) or the current query's row.
enum class KeyProjectionMode { paired, query };

/// Event-discrimination objective: the projection loss, or the plain InfoNCE
/// ablation it is compared against.
enum class EventLossMode { projection, vanilla };

struct LossConfig {
  double tau = 0.2;
  double lambda1 = 2.0;
  KeyProjectionMode key_projection_mode = KeyProjectionMode::paired;
  EventLossMode event_loss = EventLossMode::projection;
  bool normalize_img_query = true;

  void validate() const {
    require(tau > 0.0, Errc::config_error, "tau must be positive");
    require(lambda1 >= 0.0, Errc::config_error, "lambda1 must be non-negative");
  }
};

/// One training batch in embedding space. k_evt (momentum branch) and y
/// (teacher) never receive gradients.
struct BatchEmbeddings {
  Tensor q_evt;  // B x E
  Tensor k_evt;  // B x E, gradient-free
  Tensor q_img;  // B x E
  Tensor y;      // B x E, unit rows, gradient-free

  std::size_t batch() const { return q_evt.rows; }
  std::size_t dim() const { return q_evt.cols; }

  void validate() const {
    require(q_evt.rows >= 2, Errc::domain_error, "batch losses need B >= 2");
    require(q_evt.same_shape(k_evt) && q_evt.same_shape(q_img) && q_evt.same_shape(y),
            Errc::shape_mismatch, "batch embedding shapes differ");
    for (std::size_t i = 0; i < y.rows; ++i) {
      double nsq = 0.0;
      for (std::size_t j = 0; j < y.cols; ++j) nsq += y.at(i, j) * y.at(i, j);
      require(std::abs(std::sqrt(nsq) - 1.0) < 1e-9, Errc::invariant_violation,
              "teacher row " + std::to_string(i) + " not unit norm");
    }
  }
};

/// Batch embeddings lifted onto a tape: queries trainable, keys and teacher
/// rows constant.
struct BatchVars {
  ad::Var q_evt, k_evt, q_img, y;
};

inline BatchVars lift(ad::Tape& tape, const BatchEmbeddings& b) {
  b.validate();
  return BatchVars{tape.param(b.q_evt), tape.constant(b.k_evt), tape.param(b.q_img),
                   tape.constant(b.y)};
}

// ---------------------------------------------------------------------------
// Building blocks.
// ---------------------------------------------------------------------------

/// Row-wise L2 normalization of a matrix variable.
inline ad::Var normalize_rows(ad::Tape& tape, ad::Var m) {
  const std::size_t rows = tape.value(m).rows;
  if (rows == 1) return tape.l2_normalize(m);
  std::vector<ad::Var> parts;
  parts.reserve(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    parts.push_back(tape.l2_normalize(tape.slice_rows(m, i, 1)));
  }
  return tape.concat_rows(parts);
}

/// log(sum(exp(col))) for a column vector, max-stabilized. The max is folded
/// in as a constant: exact for the value, and its gradient contribution
/// cancels.
inline ad::Var logsumexp_col(ad::Tape& tape, ad::Var col) {
  const Tensor& t = tape.value(col);
  double mx = t.v[0];
  for (double x : t.v) mx = std::max(mx, x);
  ad::Var shifted = tape.sub(col, tape.constant(Tensor::full(t.rows, t.cols, mx)));
  return tape.add(tape.log_(tape.sum(tape.exp_(shifted))), tape.constant(Tensor::scalar(mx)));
}

/// InfoNCE of one query against M keys with the positive at row `pos`:
///   -log( exp(q . k_pos / tau) / sum_j exp(q . k_j / tau) ).
/// With normalize_inputs set, q and every key row are L2-normalized first.
inline ad::Var info_nce(ad::Tape& tape, ad::Var q, ad::Var keys, std::size_t pos, double tau,
                        bool normalize_inputs) {
  require(tau > 0.0, Errc::domain_error, "tau must be positive");
  const std::size_t M = tape.value(keys).rows;
  require(M >= 1 && pos < M, Errc::shape_mismatch, "positive index out of range");
  require(tape.value(q).rows == 1 && tape.value(q).cols == tape.value(keys).cols,
          Errc::shape_mismatch, "query/key dim mismatch");
  if (normalize_inputs) {
    q = tape.l2_normalize(q);
    keys = normalize_rows(tape, keys);
  }
  ad::Var logits = tape.scale(tape.matmul(keys, tape.transpose(q)), 1.0 / tau);  // M x 1
  ad::Var positive = tape.gather_rows(logits, {pos});
  return tape.sub(logsumexp_col(tape, logits), positive);
}

/// The projection function: zeta(v1, v2) = (v1 . v2) * v2 / ||v2||.
/// Differentiable in both arguments.
inline ad::Var zeta(ad::Tape& tape, ad::Var v1, ad::Var v2) {
  const Tensor& t2 = tape.value(v2);
  require(l2_norm(t2) >= 1e-12, Errc::domain_error, "zeta basis near zero");
  ad::Var s = tape.dot(v1, v2);
  ad::Var inv_norm = tape.exp_(tape.scale(tape.log_(tape.dot(v2, v2)), -0.5));
  return tape.matmul(tape.mul(s, inv_norm), v2);  // (1x1) x (1xE)
}

/// Plain-value zeta for callers outside a tape.
inline Tensor zeta_values(const Tensor& v1, const Tensor& v2) {
  const double n = l2_norm(v2);
  require(n >= 1e-12, Errc::domain_error, "zeta basis near zero");
  const double coeff = dot_values(v1, v2) / n;
  Tensor out = v2;
  for (double& x : out.v) x *= coeff;
  return out;
}

// ---------------------------------------------------------------------------
// Objectives.
// ---------------------------------------------------------------------------

/// Event embedding projection loss. Per sample i the query is
/// zeta(normalize(q_evt_i), y_i); keys are zeta(normalize(k_evt_j), y_j)
/// (paired mode) or zeta(normalize(k_evt_j), y_i) (query mode), positive at
/// j = i. InfoNCE runs on the raw projected vectors (no re-normalization).
/// Batch mean.
inline ad::Var event_projection_loss(ad::Tape& tape, const BatchVars& batch, double tau,
                                     KeyProjectionMode mode = KeyProjectionMode::paired) {
  const std::size_t B = tape.value(batch.q_evt).rows;
  require(B >= 2, Errc::domain_error, "event loss needs B >= 2");

  std::vector<ad::Var> khat(B);
  std::vector<ad::Var> yrow(B);
  for (std::size_t j = 0; j < B; ++j) {
    khat[j] = tape.l2_normalize(tape.slice_rows(batch.k_evt, j, 1));
    yrow[j] = tape.slice_rows(batch.y, j, 1);
  }

  ad::Var paired_keys{};
  if (mode == KeyProjectionMode::paired) {
    std::vector<ad::Var> zk(B);
    for (std::size_t j = 0; j < B; ++j) zk[j] = zeta(tape, khat[j], yrow[j]);
    paired_keys = tape.concat_rows(zk);
  }

  ad::Var total{};
  for (std::size_t i = 0; i < B; ++i) {
    ad::Var qhat = tape.l2_normalize(tape.slice_rows(batch.q_evt, i, 1));
    ad::Var zq = zeta(tape, qhat, yrow[i]);
    ad::Var keys = paired_keys;
    if (mode == KeyProjectionMode::query) {
      std::vector<ad::Var> zk(B);
      for (std::size_t j = 0; j < B; ++j) zk[j] = zeta(tape, khat[j], yrow[i]);
      keys = tape.concat_rows(zk);
    }
    ad::Var term = info_nce(tape, zq, keys, i, tau, /*normalize_inputs=*/false);
    total = i == 0 ? term : tape.add(total, term);
  }
  return tape.scale(total, 1.0 / static_cast<double>(B));
}

/// The ablation the projection loss is measured against: plain InfoNCE
/// between q_evt and the momentum keys, Eq.-1 normalization conventions.
inline ad::Var event_vanilla_loss(ad::Tape& tape, const BatchVars& batch, double tau) {
  const std::size_t B = tape.value(batch.q_evt).rows;
  require(B >= 2, Errc::domain_error, "event loss needs B >= 2");
  ad::Var keys = normalize_rows(tape, batch.k_evt);
  ad::Var total{};
  for (std::size_t i = 0; i < B; ++i) {
    ad::Var q = tape.l2_normalize(tape.slice_rows(batch.q_evt, i, 1));
    ad::Var term = info_nce(tape, q, keys, i, tau, /*normalize_inputs=*/false);
    total = i == 0 ? term : tape.add(total, term);
  }
  return tape.scale(total, 1.0 / static_cast<double>(B));
}

/// Event-RGB loss: InfoNCE of each (normalized) q_img against the teacher
/// rows, positive at the paired row. Teacher rows are already unit and are
/// not re-normalized. Batch mean.
inline ad::Var event_rgb_loss(ad::Tape& tape, const BatchVars& batch, double tau,
                              bool normalize_query = true) {
  const std::size_t B = tape.value(batch.q_img).rows;
  require(B >= 2, Errc::domain_error, "rgb loss needs B >= 2");
  ad::Var total{};
  for (std::size_t i = 0; i < B; ++i) {
    ad::Var q = tape.slice_rows(batch.q_img, i, 1);
    if (normalize_query) q = tape.l2_normalize(q);
    ad::Var term = info_nce(tape, q, batch.y, i, tau, /*normalize_inputs=*/false);
    total = i == 0 ? term : tape.add(total, term);
  }
  return tape.scale(total, 1.0 / static_cast<double>(B));
}

/// Pairwise probability scores: rows L2-normalized, exponential kernel at
/// temperature tau, row-softmax over all j (diagonal included).
inline ad::Var pairwise_scores(ad::Tape& tape, ad::Var m, double tau) {
  require(tape.value(m).rows >= 2, Errc::domain_error, "pairwise scores need B >= 2");
  require(tau > 0.0, Errc::domain_error, "tau must be positive");
  ad::Var mn = normalize_rows(tape, m);
  ad::Var sims = tape.matmul(mn, tape.transpose(mn));
  return tape.softmax_rows(tape.scale(sims, 1.0 / tau));
}

inline Tensor pairwise_scores_values(const Tensor& m, double tau) {
  ad::Tape tape;
  return tape.value(pairwise_scores(tape, tape.constant(m), tau));
}

/// KL alignment: sum_i sum_j s_q[i,j] * log(s_q[i,j] / s_y[i,j]).
inline ad::Var kl_alignment(ad::Tape& tape, ad::Var s_q, ad::Var s_y) {
  const Tensor& q = tape.value(s_q);
  const Tensor& y = tape.value(s_y);
  require(q.same_shape(y), Errc::shape_mismatch, "score matrices differ in shape");
  for (double v : q.v) require(v > 0.0, Errc::domain_error, "non-positive score in s_q");
  for (double v : y.v) require(v > 0.0, Errc::domain_error, "non-positive score in s_y");
  ad::Var self_term = tape.sum(tape.mul(s_q, tape.log_(s_q)));
  ad::Var cross_term = tape.sum(tape.mul(s_q, tape.log_(s_y)));
  return tape.sub(self_term, cross_term);
}

inline double kl_alignment_values(const Tensor& s_q, const Tensor& s_y) {
  ad::Tape tape;
  return tape.value(kl_alignment(tape, tape.constant(s_q), tape.constant(s_y))).item();
}

/// Total objective and its per-term breakdown (forward values, for logging).
struct TotalLoss {
  ad::Var total;
  double evt = 0.0;
  double rgb = 0.0;
  double kl = 0.0;
};

/// L_total = L_evt + L_RGB + lambda1 * L_kl, with L_evt either the projection
/// loss or the vanilla ablation per cfg.event_loss.
inline TotalLoss total_loss(ad::Tape& tape, const BatchVars& batch, const LossConfig& cfg) {
  cfg.validate();
  ad::Var evt = cfg.event_loss == EventLossMode::projection
                    ? event_projection_loss(tape, batch, cfg.tau, cfg.key_projection_mode)
                    : event_vanilla_loss(tape, batch, cfg.tau);
  ad::Var rgb = event_rgb_loss(tape, batch, cfg.tau, cfg.normalize_img_query);
  ad::Var s_q = pairwise_scores(tape, batch.q_img, cfg.tau);
  ad::Var s_y = pairwise_scores(tape, batch.y, cfg.tau);
  ad::Var kl = kl_alignment(tape, s_q, s_y);

  TotalLoss out;
  out.total = tape.add(tape.add(evt, rgb), tape.scale(kl, cfg.lambda1));
  out.evt = tape.value(evt).item();
  out.rgb = tape.value(rgb).item();
  out.kl = tape.value(kl).item();
  return out;
}

}  // namespace evssl
