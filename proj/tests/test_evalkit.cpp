#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "evssl/evalkit.hpp"
#include "evssl/synth.hpp"
#include "evssl/trainer.hpp"
#include "fixtures.hpp"
#include "helpers.hpp"

using namespace evssl;

namespace {

EmbeddingTable table_from(const Tensor& rows, std::vector<std::uint32_t> labels = {}) {
  EmbeddingTable t;
  t.rows = rows;
  t.labels = std::move(labels);
  return t;
}

}  // namespace

TEST_CASE("embed_dataset: shape, determinism, labels", "[evalkit]") {
  test::TempDir dir("embed");
  RunConfig cfg = test::small_run_config(dir.path());
  const ModelState state = init_model(cfg.seed, cfg.dims);
  const auto ckpt = dir.path() / "init.evck";
  save_checkpoint(ckpt, state);

  const EmbeddingTable t =
      embed_dataset(ckpt, cfg.manifest, cfg.view, cfg.seed, EmbedSpace::features);
  CHECK(t.rows.rows == 16);
  CHECK(t.rows.cols == cfg.dims.D);
  CHECK(t.labeled());
  CHECK(t.rows.all_finite());

  SECTION("repeat run is identical") {
    const EmbeddingTable again =
        embed_dataset(ckpt, cfg.manifest, cfg.view, cfg.seed, EmbedSpace::features);
    CHECK(again.rows.v == t.rows.v);
  }
  SECTION("evt-head space has embedding width") {
    const EmbeddingTable heads =
        embed_dataset(ckpt, cfg.manifest, cfg.view, cfg.seed, EmbedSpace::evt_head);
    CHECK(heads.rows.cols == cfg.dims.E);
  }
  SECTION("patch size mismatch is rejected") {
    ViewConfig bad = cfg.view;
    bad.patch_size = 4;
    try {
      embed_dataset(ckpt, cfg.manifest, bad, cfg.seed);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::geometry_mismatch);
    }
  }
}

TEST_CASE("linear_probe: separable features reach accuracy 1", "[evalkit]") {
  Rng rng(1);
  const std::size_t n = 40;
  Tensor rows(n, 2);
  std::vector<std::uint32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool cls = i % 2 == 1;
    rows.at(i, 0) = (cls ? 2.0 : -2.0) + 0.1 * rng.normal();
    rows.at(i, 1) = rng.normal();
    labels[i] = cls ? 1 : 0;
  }
  const EmbeddingTable table = table_from(rows, labels);
  CHECK(linear_probe(table, table, 300, 0.5) == 1.0);
}

TEST_CASE("linear_probe: shuffled labels sit at chance level", "[evalkit]") {
  // Train on features whose labels were randomly re-drawn, evaluate on a
  // held-out set with true labels. Chance for K=4 is 0.25 +/- 0.05 over
  // shuffle seeds.
  SynthConfig cfg;
  cfg.classes = 4;
  cfg.embed_dim = 16;
  cfg.teacher_noise_sigma = 0.3;
  Rng rng(11);
  auto build = [&](std::size_t n) {
    Tensor rows(n, 16);
    std::vector<std::uint32_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor y = gen_teacher(i % 4, cfg, rng);
      for (std::size_t j = 0; j < 16; ++j) rows.at(i, j) = y.v[j];
      labels[i] = static_cast<std::uint32_t>(i % 4);
    }
    return table_from(rows, labels);
  };
  const EmbeddingTable train = build(400);
  const EmbeddingTable held_out = build(200);
  double mean_acc = 0.0;
  const int seeds = 5;
  for (int s = 0; s < seeds; ++s) {
    EmbeddingTable shuffled = train;
    Rng shuffle_rng(100 + s);
    for (std::uint32_t& l : shuffled.labels) {
      l = static_cast<std::uint32_t>(shuffle_rng.uniform_int(4));
    }
    mean_acc += linear_probe(shuffled, held_out, 200, 0.1);
  }
  mean_acc /= seeds;
  CHECK(mean_acc > 0.20);
  CHECK(mean_acc < 0.30);
}

TEST_CASE("linear_probe: teacher embeddings at sigma 0.3 probe above 0.95", "[evalkit]") {
  SynthConfig cfg;
  cfg.classes = 4;
  cfg.embed_dim = 32;
  cfg.teacher_noise_sigma = 0.3;
  Rng rng(21);
  auto build = [&](std::size_t n) {
    Tensor rows(n, 32);
    std::vector<std::uint32_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = i % 4;
      const Tensor y = gen_teacher(k, cfg, rng);
      for (std::size_t j = 0; j < 32; ++j) rows.at(i, j) = y.v[j];
      labels[i] = static_cast<std::uint32_t>(k);
    }
    return table_from(rows, labels);
  };
  const EmbeddingTable train = build(256);
  const EmbeddingTable test_set = build(128);
  CHECK(linear_probe(train, test_set) >= 0.95);
}

TEST_CASE("linear_probe: unlabeled tables are rejected", "[evalkit]") {
  const EmbeddingTable t = table_from(Tensor::zeros(4, 2));
  try {
    linear_probe(t, t);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::unlabeled_data);
  }
}

TEST_CASE("collapse_metrics: degenerate and orthogonal cases", "[evalkit]") {
  SECTION("identical rows collapse completely") {
    Tensor rows(8, 4);
    for (std::size_t i = 0; i < 8; ++i) {
      rows.at(i, 0) = 0.3;
      rows.at(i, 2) = -1.2;
    }
    const CollapseMetrics m = collapse_metrics(rows);
    CHECK_THAT(m.mean_pairwise_cos, Catch::Matchers::WithinAbs(1.0, 1e-9));
    CHECK_THAT(m.effective_rank, Catch::Matchers::WithinAbs(1.0, 1e-6));
    CHECK_THAT(m.per_dim_std_min, Catch::Matchers::WithinAbs(0.0, 1e-12));
  }
  SECTION("orthonormal rows have zero mean cosine") {
    Tensor rows(4, 4);
    for (std::size_t i = 0; i < 4; ++i) rows.at(i, i) = 1.0;
    const CollapseMetrics m = collapse_metrics(rows);
    CHECK_THAT(m.mean_pairwise_cos, Catch::Matchers::WithinAbs(0.0, 1e-12));
    CHECK_THAT(m.effective_rank, Catch::Matchers::WithinAbs(4.0, 1e-6));
  }
  SECTION("zero-norm row is rejected") {
    Tensor rows(2, 3);
    rows.at(0, 0) = 1.0;
    try {
      collapse_metrics(rows);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::degenerate_row);
    }
  }
  SECTION("random gaussian 100x32 has effective rank in [24, 32]") {
    for (int s = 0; s < 5; ++s) {
      Rng rng(derive_seed(999, s));
      Tensor rows(100, 32);
      for (double& v : rows.v) v = rng.normal();
      const CollapseMetrics m = collapse_metrics(rows);
      CHECK(m.effective_rank >= 24.0);
      CHECK(m.effective_rank <= 32.0);
    }
  }
}

TEST_CASE("train_val_split: per-class budgets in table order", "[evalkit]") {
  const std::vector<std::uint32_t> labels = {0, 0, 0, 0, 1, 1, 1, 1};
  const auto [train, val] = train_val_split(labels, 0.75);
  CHECK(train == std::vector<std::size_t>{0, 1, 2, 4, 5, 6});
  CHECK(val == std::vector<std::size_t>{3, 7});
}

TEST_CASE("subset: picks rows and labels", "[evalkit]") {
  Tensor rows(3, 2);
  rows.at(0, 0) = 1;
  rows.at(1, 0) = 2;
  rows.at(2, 0) = 3;
  const EmbeddingTable t = table_from(rows, {7, 8, 9});
  const EmbeddingTable s = subset(t, {2, 0});
  CHECK(s.rows.at(0, 0) == 3);
  CHECK(s.rows.at(1, 0) == 1);
  CHECK(s.labels == std::vector<std::uint32_t>{9, 7});
}

TEST_CASE("ETAB roundtrip is byte-identical", "[evalkit]") {
  Rng rng(3);
  SECTION("labeled") {
    EmbeddingTable t = table_from(test::random_tensor(rng, 12, 7), std::vector<std::uint32_t>(12, 2));
    const auto bytes = encode_etab(t);
    const EmbeddingTable back = decode_etab(bytes);
    CHECK(encode_etab(back) == bytes);
    CHECK(back.rows.v == t.rows.v);
    CHECK(back.labels == t.labels);
  }
  SECTION("unlabeled") {
    EmbeddingTable t = table_from(test::random_tensor(rng, 5, 3));
    const auto bytes = encode_etab(t);
    CHECK(encode_etab(decode_etab(bytes)) == bytes);
  }
  SECTION("truncation detected") {
    EmbeddingTable t = table_from(test::random_tensor(rng, 5, 3));
    auto bytes = encode_etab(t);
    bytes.pop_back();
    try {
      decode_etab(bytes);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::truncated);
    }
  }
}
