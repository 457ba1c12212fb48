#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "evssl/autodiff.hpp"
#include "evssl/binio.hpp"
#include "evssl/errors.hpp"
#include "evssl/rng.hpp"
#include "evssl/tensor.hpp"
#include "evssl/viewgen.hpp"

namespace evssl {

/// Core model dimensions. P: patch side, L: patch-grid size, D: feature
/// width, E: embedding width (shared with teacher embeddings).
struct Dims {
  std::size_t P = 16;
  std::size_t L = 196;
  std::size_t D = 64;
  std::size_t E = 32;

  std::size_t patch_vec() const { return EventImage::kChannels * P * P; }

  void validate() const {
    require(P > 0 && L > 0 && D > 0 && E > 0, Errc::config_error, "dims must be positive");
  }
};

/// Per-patch MLP encoder with positional lookups and mean pooling. A
/// transformer stand-in: position enters through pos_table[index], pooling
/// is order-invariant.
struct EncoderParams {
  Tensor patch_proj;  // patch_vec x D
  Tensor pos_table;   // L x D
  Tensor mlp_w1;      // D x 4D
  Tensor mlp_b1;      // 1 x 4D
  Tensor mlp_w2;      // 4D x D
  Tensor mlp_b2;      // 1 x D
};

/// Two-layer projection head, relu hidden: D -> D -> E.
struct HeadParams {
  Tensor w1;  // D x D
  Tensor b1;  // 1 x D
  Tensor w2;  // D x E
  Tensor b2;  // 1 x E
};

/// Online branch, momentum branch, optimizer moments, step counter.
/// Momentum tensors mirror the online shapes exactly and are only ever
/// written by ema_update.
struct ModelState {
  Dims dims;
  EncoderParams online_enc;
  HeadParams online_evt;
  HeadParams online_img;
  EncoderParams mom_enc;
  HeadParams mom_evt;
  std::vector<Tensor> m1;  // first moments, online parameter order
  std::vector<Tensor> m2;  // second moments, online parameter order
  std::uint64_t step = 0;
};

namespace detail {

template <typename Enc, typename Fn>
void visit_encoder(Enc& e, Fn&& fn) {
  fn(e.patch_proj);
  fn(e.pos_table);
  fn(e.mlp_w1);
  fn(e.mlp_b1);
  fn(e.mlp_w2);
  fn(e.mlp_b2);
}

template <typename Head, typename Fn>
void visit_head(Head& h, Fn&& fn) {
  fn(h.w1);
  fn(h.b1);
  fn(h.w2);
  fn(h.b2);
}

}  // namespace detail

/// Online parameters in the canonical order: encoder (patch_proj, pos_table,
/// mlp_w1, mlp_b1, mlp_w2, mlp_b2), evt head (w1, b1, w2, b2), img head
/// (w1, b1, w2, b2). Checkpoints, moments, and the EMA walk use this order.
inline std::vector<Tensor*> online_params(ModelState& s) {
  std::vector<Tensor*> out;
  detail::visit_encoder(s.online_enc, [&](Tensor& t) { out.push_back(&t); });
  detail::visit_head(s.online_evt, [&](Tensor& t) { out.push_back(&t); });
  detail::visit_head(s.online_img, [&](Tensor& t) { out.push_back(&t); });
  return out;
}

/// Momentum parameters: encoder then evt head, same within-struct order as
/// online_params. Paired index-by-index with momentum_sources().
inline std::vector<Tensor*> momentum_params(ModelState& s) {
  std::vector<Tensor*> out;
  detail::visit_encoder(s.mom_enc, [&](Tensor& t) { out.push_back(&t); });
  detail::visit_head(s.mom_evt, [&](Tensor& t) { out.push_back(&t); });
  return out;
}

/// The online tensors the momentum branch tracks (encoder + evt head).
inline std::vector<const Tensor*> momentum_sources(const ModelState& s) {
  std::vector<const Tensor*> out;
  detail::visit_encoder(const_cast<EncoderParams&>(s.online_enc),
                        [&](Tensor& t) { out.push_back(&t); });
  detail::visit_head(const_cast<HeadParams&>(s.online_evt),
                     [&](Tensor& t) { out.push_back(&t); });
  return out;
}

namespace detail {

inline Tensor glorot(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t(rows, cols);
  for (double& v : t.v) v = rng.uniform(-bound, bound);
  return t;
}

inline EncoderParams init_encoder(const Dims& d, Rng& rng) {
  EncoderParams e;
  e.patch_proj = glorot(d.patch_vec(), d.D, rng);
  e.pos_table = glorot(d.L, d.D, rng);
  e.mlp_w1 = glorot(d.D, 4 * d.D, rng);
  e.mlp_b1 = Tensor::zeros(1, 4 * d.D);
  e.mlp_w2 = glorot(4 * d.D, d.D, rng);
  e.mlp_b2 = Tensor::zeros(1, d.D);
  return e;
}

inline HeadParams init_head(const Dims& d, Rng& rng) {
  HeadParams h;
  h.w1 = glorot(d.D, d.D, rng);
  h.b1 = Tensor::zeros(1, d.D);
  h.w2 = glorot(d.D, d.E, rng);
  h.b2 = Tensor::zeros(1, d.E);
  return h;
}

}  // namespace detail

/// Fresh model: scaled-uniform weights, zero biases and moments, momentum
/// branch an exact copy of the online branch, step 0.
inline ModelState init_model(std::uint64_t seed, const Dims& dims) {
  dims.validate();
  Rng rng(seed);
  ModelState s;
  s.dims = dims;
  s.online_enc = detail::init_encoder(dims, rng);
  s.online_evt = detail::init_head(dims, rng);
  s.online_img = detail::init_head(dims, rng);
  s.mom_enc = s.online_enc;
  s.mom_evt = s.online_evt;
  for (Tensor* t : online_params(s)) {
    s.m1.push_back(Tensor::zeros(t->rows, t->cols));
    s.m2.push_back(Tensor::zeros(t->rows, t->cols));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Forward passes on a tape.
// ---------------------------------------------------------------------------

struct EncoderVars {
  ad::Var patch_proj, pos_table, mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct HeadVars {
  ad::Var w1, b1, w2, b2;
};

inline EncoderVars lift(ad::Tape& tape, const EncoderParams& p, bool trainable) {
  auto put = [&](const Tensor& t) { return trainable ? tape.param(t) : tape.constant(t); };
  return EncoderVars{put(p.patch_proj), put(p.pos_table), put(p.mlp_w1),
                     put(p.mlp_b1),    put(p.mlp_w2),    put(p.mlp_b2)};
}

inline HeadVars lift(ad::Tape& tape, const HeadParams& p, bool trainable) {
  auto put = [&](const Tensor& t) { return trainable ? tape.param(t) : tape.constant(t); };
  return HeadVars{put(p.w1), put(p.b1), put(p.w2), put(p.b2)};
}

/// EncoderVars in online_params order (for wiring gradients to tensors).
inline std::vector<ad::Var> vars_of(const EncoderVars& e) {
  return {e.patch_proj, e.pos_table, e.mlp_w1, e.mlp_b1, e.mlp_w2, e.mlp_b2};
}
inline std::vector<ad::Var> vars_of(const HeadVars& h) { return {h.w1, h.b1, h.w2, h.b2}; }

/// Encodes a patch set into a 1 x D feature row: per-patch linear projection
/// plus positional lookup, per-patch MLP, mean pooling over patches.
inline ad::Var encode(ad::Tape& tape, const Dims& dims, const EncoderVars& enc,
                      const PatchSet& x) {
  const std::size_t n = x.size();
  require(n >= 1, Errc::geometry_mismatch, "empty patch set");
  const std::size_t V = dims.patch_vec();
  require(x.patch_size == dims.P, Errc::geometry_mismatch, "patch size mismatch");
  require(x.total_patches() == dims.L, Errc::geometry_mismatch, "patch grid mismatch");

  Tensor xmat(n, V);
  std::vector<std::size_t> indices;
  indices.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Patch& p = x.patches[i];
    require(p.values.size() == V, Errc::geometry_mismatch, "patch vector length mismatch");
    require(p.index < dims.L, Errc::geometry_mismatch, "patch index out of range");
    std::copy(p.values.begin(), p.values.end(), xmat.v.begin() + i * V);
    indices.push_back(p.index);
  }

  ad::Var tokens = tape.constant(std::move(xmat));
  ad::Var embedded = tape.add(tape.matmul(tokens, enc.patch_proj),
                              tape.gather_rows(enc.pos_table, indices));
  ad::Var hidden = tape.relu(
      tape.broadcast_add_row(tape.matmul(embedded, enc.mlp_w1), enc.mlp_b1));
  ad::Var perpatch = tape.broadcast_add_row(tape.matmul(hidden, enc.mlp_w2), enc.mlp_b2);
  ad::Var pool = tape.matmul(tape.constant(Tensor::full(1, n, 1.0)), perpatch);
  return tape.scale(pool, 1.0 / static_cast<double>(n));
}

/// Projects a 1 x D feature row to a 1 x E embedding (not normalized here;
/// the losses decide).
inline ad::Var project(ad::Tape& tape, const HeadVars& head, ad::Var feat) {
  ad::Var hidden = tape.relu(tape.broadcast_add_row(tape.matmul(feat, head.w1), head.b1));
  return tape.broadcast_add_row(tape.matmul(hidden, head.w2), head.b2);
}

/// Every momentum parameter <- m * momentum + (1 - m) * online, elementwise,
/// in momentum_params order. The expression is evaluated exactly as written.
inline void ema_update(ModelState& s, double m) {
  require(m >= 0.0 && m <= 1.0, Errc::domain_error, "ema coefficient outside [0,1]");
  std::vector<Tensor*> mom = momentum_params(s);
  std::vector<const Tensor*> src = momentum_sources(s);
  for (std::size_t i = 0; i < mom.size(); ++i) {
    Tensor& target = *mom[i];
    const Tensor& online = *src[i];
    for (std::size_t j = 0; j < target.size(); ++j) {
      target.v[j] = m * target.v[j] + (1.0 - m) * online.v[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Teacher embedding file (TVEC): magic "TVEC" | dim u32 | dim fp64 values.
// Loaded vectors must be unit norm within 1e-6 and are re-normalized exactly.
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> encode_tvec(const Tensor& y) {
  require(y.rows == 1 && y.cols >= 1, Errc::shape_mismatch, "teacher embedding must be a row");
  ByteWriter w;
  w.magic("TVEC");
  w.u32(static_cast<std::uint32_t>(y.cols));
  for (double v : y.v) w.f64(v);
  return w.take();
}

inline Tensor decode_tvec(const std::vector<std::uint8_t>& bytes, std::size_t expected_dim = 0) {
  ByteReader r(bytes);
  r.expect_magic("TVEC", Errc::bad_magic);
  const std::uint32_t dim = r.u32();
  require(bytes.size() == 8 + static_cast<std::size_t>(dim) * 8, Errc::truncated,
          "TVEC byte count mismatch");
  if (expected_dim > 0) {
    require(dim == expected_dim, Errc::teacher_dim_mismatch,
            "teacher dim " + std::to_string(dim) + ", expected " + std::to_string(expected_dim));
  }
  Tensor y(1, dim);
  for (double& v : y.v) v = r.f64();
  const double n = l2_norm(y);
  require(std::abs(n - 1.0) <= 1e-6, Errc::invariant_violation,
          "teacher embedding norm " + std::to_string(n) + " not unit");
  // Re-normalize only when the stored vector actually drifted; files that
  // are already unit round-trip byte-identically.
  if (std::abs(n - 1.0) > 1e-9) {
    for (double& v : y.v) v /= n;
  }
  return y;
}

inline Tensor load_tvec(const std::filesystem::path& path, std::size_t expected_dim = 0) {
  return decode_tvec(read_file(path), expected_dim);
}

inline void save_tvec(const std::filesystem::path& path, const Tensor& y) {
  write_file_atomic(path, encode_tvec(y));
}

// ---------------------------------------------------------------------------
// Checkpoint file (EVCK):
//   magic "EVCK" | version u32 | P u32 | L u32 | D u32 | E u32 | step u64
//   | parameter blobs, fp64 little-endian, in this order:
//     online params (14 tensors, online_params order),
//     momentum params (10 tensors, momentum_params order),
//     first moments (14), second moments (14).
// Shapes are implied by the dims, so blobs carry raw values only.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> encode_checkpoint(const ModelState& state) {
  ByteWriter w;
  w.magic("EVCK");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(state.dims.P));
  w.u32(static_cast<std::uint32_t>(state.dims.L));
  w.u32(static_cast<std::uint32_t>(state.dims.D));
  w.u32(static_cast<std::uint32_t>(state.dims.E));
  w.u64(state.step);
  auto blob = [&](const Tensor& t) {
    for (double v : t.v) w.f64(v);
  };
  ModelState& s = const_cast<ModelState&>(state);
  for (Tensor* t : online_params(s)) blob(*t);
  for (Tensor* t : momentum_params(s)) blob(*t);
  for (const Tensor& t : state.m1) blob(t);
  for (const Tensor& t : state.m2) blob(t);
  return w.take();
}

inline ModelState decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  r.expect_magic("EVCK", Errc::bad_magic);
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, Errc::invariant_violation,
          "unsupported checkpoint version " + std::to_string(version));
  Dims dims;
  dims.P = r.u32();
  dims.L = r.u32();
  dims.D = r.u32();
  dims.E = r.u32();
  ModelState state = init_model(0, dims);
  state.step = r.u64();
  auto blob = [&](Tensor& t) {
    for (double& v : t.v) v = r.f64();
    require(t.all_finite(), Errc::invariant_violation, "non-finite checkpoint parameter");
  };
  for (Tensor* t : online_params(state)) blob(*t);
  for (Tensor* t : momentum_params(state)) blob(*t);
  for (Tensor& t : state.m1) blob(t);
  for (Tensor& t : state.m2) blob(t);
  require(r.done(), Errc::truncated, "trailing bytes in checkpoint");
  return state;
}

inline ModelState load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelState& state) {
  write_file_atomic(path, encode_checkpoint(state));
}

}  // namespace evssl
