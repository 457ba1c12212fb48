#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evssl/autodiff.hpp"
#include "evssl/binio.hpp"
#include "evssl/errors.hpp"
#include "evssl/event.hpp"
#include "evssl/model.hpp"
#include "evssl/tensor.hpp"
#include "evssl/viewgen.hpp"

namespace evssl {

/// Frozen-feature table: one row per dataset sample, optional labels, plus
/// where the rows came from.
struct EmbeddingTable {
  Tensor rows;                         // N x D
  std::vector<std::uint32_t> labels;   // empty, or one per row
  std::string checkpoint_path;
  std::string manifest_path;

  bool labeled() const { return !labels.empty(); }
  std::size_t size() const { return rows.rows; }

  void validate() const {
    require(rows.all_finite(), Errc::invariant_violation, "non-finite embedding row");
    require(labels.empty() || labels.size() == rows.rows, Errc::invariant_violation,
            "label count differs from row count");
  }
};

/// Which representation to extract: trunk features (D) or the evt-head
/// embedding the event loss acts on (E).
enum class EmbedSpace { features, evt_head };

/// Embeds every manifest entry with the frozen online encoder: identity
/// augmentation, full patch set, deterministic. The seed parameter is kept
/// for interface symmetry; nothing here draws randomness.
inline EmbeddingTable embed_dataset(const std::filesystem::path& checkpoint_path,
                                    const std::filesystem::path& manifest_path,
                                    const ViewConfig& vcfg, std::uint64_t /*seed*/ = 0,
                                    EmbedSpace space = EmbedSpace::features) {
  ModelState state = load_checkpoint(checkpoint_path);
  require(vcfg.patch_size == state.dims.P, Errc::geometry_mismatch,
          "view patch size differs from checkpoint");
  const DatasetManifest manifest = load_manifest(manifest_path);
  const std::size_t N = manifest.size();
  require(N >= 1, Errc::domain_error, "empty manifest");
  const std::size_t width = space == EmbedSpace::features ? state.dims.D : state.dims.E;

  EmbeddingTable table;
  table.rows = Tensor(N, width);
  table.checkpoint_path = checkpoint_path.string();
  table.manifest_path = manifest_path.string();
  if (manifest.labeled()) table.labels.reserve(N);

  for (std::size_t i = 0; i < N; ++i) {
    const ManifestEntry& entry = manifest.entries[i];
    const EventStream stream = load_evt1(entry.event_path);
    const PatchSet patches = full_patch_set(stream, vcfg);
    ad::Tape tape;
    EncoderVars enc = lift(tape, state.online_enc, false);
    ad::Var feat = encode(tape, state.dims, enc, patches);
    ad::Var out = feat;
    if (space == EmbedSpace::evt_head) {
      HeadVars head = lift(tape, state.online_evt, false);
      out = project(tape, head, feat);
    }
    const Tensor& row = tape.value(out);
    std::copy(row.v.begin(), row.v.end(), table.rows.v.begin() + i * width);
    if (manifest.labeled()) table.labels.push_back(*entry.label);
  }
  table.validate();
  return table;
}

/// Multinomial logistic regression on frozen features: single linear layer,
/// softmax cross-entropy, full-batch gradient descent at fixed (epochs, lr).
/// Returns test top-1 accuracy in [0, 1].
inline double linear_probe(const EmbeddingTable& train, const EmbeddingTable& test,
                           std::size_t epochs = 500, double lr = 0.1) {
  require(train.labeled() && test.labeled(), Errc::unlabeled_data,
          "linear probe needs labels on both tables");
  require(train.rows.cols == test.rows.cols, Errc::shape_mismatch,
          "feature dims differ between tables");
  const std::size_t N = train.rows.rows;
  const std::size_t D = train.rows.cols;
  std::uint32_t num_classes = 0;
  for (std::uint32_t l : train.labels) num_classes = std::max(num_classes, l + 1);
  for (std::uint32_t l : test.labels) num_classes = std::max(num_classes, l + 1);
  const std::size_t K = num_classes;

  Tensor w(D, K);
  Tensor b(1, K);
  std::vector<double> probs(K);
  Tensor grad_w(D, K);
  Tensor grad_b(1, K);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::fill(grad_w.v.begin(), grad_w.v.end(), 0.0);
    std::fill(grad_b.v.begin(), grad_b.v.end(), 0.0);
    for (std::size_t i = 0; i < N; ++i) {
      double mx = -1e300;
      for (std::size_t k = 0; k < K; ++k) {
        double z = b.v[k];
        for (std::size_t d = 0; d < D; ++d) z += train.rows.at(i, d) * w.at(d, k);
        probs[k] = z;
        mx = std::max(mx, z);
      }
      double total = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        probs[k] = std::exp(probs[k] - mx);
        total += probs[k];
      }
      for (std::size_t k = 0; k < K; ++k) {
        const double delta = probs[k] / total - (train.labels[i] == k ? 1.0 : 0.0);
        grad_b.v[k] += delta;
        for (std::size_t d = 0; d < D; ++d) grad_w.at(d, k) += train.rows.at(i, d) * delta;
      }
    }
    const double scale = lr / static_cast<double>(N);
    for (std::size_t j = 0; j < w.size(); ++j) w.v[j] -= scale * grad_w.v[j];
    for (std::size_t k = 0; k < K; ++k) b.v[k] -= scale * grad_b.v[k];
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.rows.rows; ++i) {
    std::size_t best = 0;
    double best_z = -1e300;
    for (std::size_t k = 0; k < K; ++k) {
      double z = b.v[k];
      for (std::size_t d = 0; d < D; ++d) z += test.rows.at(i, d) * w.at(d, k);
      if (z > best_z) {
        best_z = z;
        best = k;
      }
    }
    if (best == test.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.rows.rows);
}

/// Diagnostics for the over-similar-embedding failure mode.
struct CollapseMetrics {
  double mean_pairwise_cos = 0.0;  // average cosine over unordered row pairs
  double per_dim_std_min = 0.0;    // min over dims of the per-dim std
  double effective_rank = 0.0;     // exp(entropy of normalized singular values)
};

inline CollapseMetrics collapse_metrics(const Tensor& rows) {
  const std::size_t N = rows.rows;
  const std::size_t D = rows.cols;
  require(N >= 2, Errc::domain_error, "collapse metrics need at least two rows");

  // Mean pairwise cosine via the normalized-row sum identity:
  // sum_{i != j} cos_ij = ||sum_i r_i||^2 - N.
  std::vector<double> accum(D, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    double nsq = 0.0;
    for (std::size_t d = 0; d < D; ++d) nsq += rows.at(i, d) * rows.at(i, d);
    const double norm = std::sqrt(nsq);
    require(norm >= 1e-12, Errc::degenerate_row, "zero-norm embedding row");
    for (std::size_t d = 0; d < D; ++d) accum[d] += rows.at(i, d) / norm;
  }
  double sum_sq = 0.0;
  for (double a : accum) sum_sq += a * a;
  CollapseMetrics m;
  m.mean_pairwise_cos = (sum_sq - static_cast<double>(N)) /
                        (static_cast<double>(N) * static_cast<double>(N - 1));

  double min_std = 1e300;
  for (std::size_t d = 0; d < D; ++d) {
    double mean = 0.0;
    for (std::size_t i = 0; i < N; ++i) mean += rows.at(i, d);
    mean /= static_cast<double>(N);
    double var = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double c = rows.at(i, d) - mean;
      var += c * c;
    }
    min_std = std::min(min_std, std::sqrt(var / static_cast<double>(N)));
  }
  m.per_dim_std_min = min_std;

  // Effective rank from the singular values of the raw row matrix.
  Tensor gram(D, D);
  for (std::size_t a = 0; a < D; ++a) {
    for (std::size_t b = a; b < D; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < N; ++i) s += rows.at(i, a) * rows.at(i, b);
      gram.at(a, b) = s;
      gram.at(b, a) = s;
    }
  }
  const std::vector<double> eig = sym_eigenvalues(gram);
  double sigma_sum = 0.0;
  std::vector<double> sigma;
  sigma.reserve(eig.size());
  for (double e : eig) {
    const double s = std::sqrt(std::max(e, 0.0));
    sigma.push_back(s);
    sigma_sum += s;
  }
  double entropy = 0.0;
  for (double s : sigma) {
    if (s <= 0.0) continue;
    const double p = s / sigma_sum;
    entropy -= p * std::log(p);
  }
  m.effective_rank = std::exp(entropy);
  return m;
}

inline CollapseMetrics collapse_metrics(const EmbeddingTable& table) {
  return collapse_metrics(table.rows);
}

/// Deterministic per-class split: the first ceil(fraction * count) samples
/// of each class (in table order) go to train, the rest to eval.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> train_val_split(
    const std::vector<std::uint32_t>& labels, double train_fraction) {
  require(train_fraction > 0.0 && train_fraction < 1.0, Errc::domain_error,
          "train fraction outside (0,1)");
  std::uint32_t num_classes = 0;
  for (std::uint32_t l : labels) num_classes = std::max(num_classes, l + 1);
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::uint32_t l : labels) ++counts[l];
  std::vector<std::size_t> budget(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    budget[k] = static_cast<std::size_t>(
        std::ceil(train_fraction * static_cast<double>(counts[k])));
  }
  std::vector<std::size_t> seen(num_classes, 0);
  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (seen[labels[i]]++ < budget[labels[i]]) {
      split.first.push_back(i);
    } else {
      split.second.push_back(i);
    }
  }
  return split;
}

inline EmbeddingTable subset(const EmbeddingTable& table, const std::vector<std::size_t>& idx) {
  EmbeddingTable out;
  out.rows = Tensor(idx.size(), table.rows.cols);
  out.checkpoint_path = table.checkpoint_path;
  out.manifest_path = table.manifest_path;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] < table.rows.rows, Errc::domain_error, "subset index out of range");
    for (std::size_t d = 0; d < table.rows.cols; ++d) {
      out.rows.at(i, d) = table.rows.at(idx[i], d);
    }
    if (table.labeled()) out.labels.push_back(table.labels[idx[i]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding table file (ETAB):
//   magic "ETAB" | N u64 | D u32 | has_labels u8
//   | N*D fp64 row-major | N u32 labels when has_labels = 1.
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> encode_etab(const EmbeddingTable& table) {
  table.validate();
  ByteWriter w;
  w.magic("ETAB");
  w.u64(table.rows.rows);
  w.u32(static_cast<std::uint32_t>(table.rows.cols));
  w.u8(table.labeled() ? 1 : 0);
  for (double v : table.rows.v) w.f64(v);
  for (std::uint32_t l : table.labels) w.u32(l);
  return w.take();
}

inline EmbeddingTable decode_etab(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  r.expect_magic("ETAB", Errc::bad_magic);
  const std::uint64_t n = r.u64();
  const std::uint32_t d = r.u32();
  const std::uint8_t has_labels = r.u8();
  require(has_labels == 0 || has_labels == 1, Errc::invariant_violation, "bad label flag");
  const std::size_t expect = 17 + n * d * 8 + (has_labels ? n * 4 : 0);
  require(bytes.size() == expect, Errc::truncated, "ETAB byte count mismatch");
  EmbeddingTable table;
  table.rows = Tensor(n, d);
  for (double& v : table.rows.v) v = r.f64();
  if (has_labels) {
    table.labels.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) table.labels.push_back(r.u32());
  }
  table.validate();
  return table;
}

inline EmbeddingTable load_etab(const std::filesystem::path& path) {
  return decode_etab(read_file(path));
}

inline void save_etab(const std::filesystem::path& path, const EmbeddingTable& table) {
  write_file_atomic(path, encode_etab(table));
}

}  // namespace evssl
