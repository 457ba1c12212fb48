#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "evssl/synth.hpp"
#include "evssl/viewgen.hpp"
#include "helpers.hpp"

using namespace evssl;

TEST_CASE("gen_stream: invariants, exact count, determinism", "[synth]") {
  SynthConfig cfg;
  cfg.classes = 4;
  cfg.samples_per_class = 1;
  cfg.width = 64;
  cfg.height = 64;
  cfg.events_per_sample = 2000;

  for (std::size_t k = 0; k < cfg.classes; ++k) {
    Rng rng(derive_seed(5, k));
    const EventStream s = gen_stream(k, cfg, rng);
    s.validate();
    CHECK(s.size() == cfg.events_per_sample);
  }
  SECTION("same (class, seed) gives an identical stream") {
    Rng r1(9), r2(9);
    CHECK(gen_stream(1, cfg, r1) == gen_stream(1, cfg, r2));
  }
  SECTION("class id out of range") {
    Rng rng(1);
    CHECK_THROWS_AS(gen_stream(4, cfg, rng), Error);
  }
}

TEST_CASE("gen_stream: different classes produce different histograms", "[synth]") {
  SynthConfig cfg;
  cfg.width = 64;
  cfg.height = 64;
  cfg.events_per_sample = 2000;
  Rng r0(3), r1(3);
  const EventImage h0 = event_histogram(gen_stream(0, cfg, r0));
  const EventImage h1 = event_histogram(gen_stream(1, cfg, r1));
  double l1 = 0.0;
  for (std::size_t i = 0; i < h0.values.size(); ++i) l1 += std::abs(h0.values[i] - h1.values[i]);
  CHECK(l1 > 0.0);
}

TEST_CASE("gen_teacher: basis vector at sigma 0, unit norm always", "[synth]") {
  SynthConfig cfg;
  cfg.embed_dim = 8;
  SECTION("sigma = 0 gives the exact basis vector") {
    cfg.teacher_noise_sigma = 0.0;
    Rng rng(4);
    const Tensor y = gen_teacher(2, cfg, rng);
    for (std::size_t i = 0; i < 8; ++i) CHECK(y.v[i] == (i == 2 ? 1.0 : 0.0));
  }
  SECTION("unit norm at sigma 0.3") {
    cfg.teacher_noise_sigma = 0.3;
    Rng rng(5);
    for (int it = 0; it < 200; ++it) {
      const Tensor y = gen_teacher(it % cfg.classes, cfg, rng);
      CHECK_THAT(l2_norm(y), Catch::Matchers::WithinAbs(1.0, 1e-12));
    }
  }
}

TEST_CASE("gen_teacher: same-class cosines exceed cross-class cosines", "[synth]") {
  SynthConfig cfg;
  cfg.embed_dim = 8;
  cfg.teacher_noise_sigma = 0.3;
  Rng rng(6);
  double same = 0.0, cross = 0.0;
  const int pairs = 1000;
  for (int i = 0; i < pairs; ++i) {
    const Tensor a = gen_teacher(0, cfg, rng);
    const Tensor b = gen_teacher(0, cfg, rng);
    const Tensor c = gen_teacher(1, cfg, rng);
    same += dot_values(a, b);
    cross += dot_values(a, c);
  }
  CHECK(same / pairs > cross / pairs);
}

TEST_CASE("gen_teacher: nearest-prototype classification", "[synth]") {
  SynthConfig cfg;
  cfg.classes = 4;
  cfg.embed_dim = 32;
  auto accuracy_at = [&](double sigma) {
    cfg.teacher_noise_sigma = sigma;
    Rng rng(7);
    int correct = 0;
    const int trials = 1000;
    for (int i = 0; i < trials; ++i) {
      const std::size_t k = i % cfg.classes;
      const Tensor y = gen_teacher(k, cfg, rng);
      std::size_t best = 0;
      for (std::size_t c = 1; c < cfg.classes; ++c) {
        if (y.v[c] > y.v[best]) best = c;
      }
      correct += best == k ? 1 : 0;
    }
    return static_cast<double>(correct) / trials;
  };
  CHECK(accuracy_at(0.0) == 1.0);
  CHECK(accuracy_at(0.3) >= 0.95);
}

TEST_CASE("gen_dataset: manifest size, determinism, codec integration", "[synth]") {
  test::TempDir dir("synth_ds");
  SynthConfig cfg;
  cfg.classes = 4;
  cfg.samples_per_class = 128;
  cfg.width = 32;
  cfg.height = 32;
  cfg.events_per_sample = 200;
  cfg.embed_dim = 16;
  cfg.seed = 77;

  const auto manifest_path = gen_dataset(cfg, dir.path() / "a");
  const DatasetManifest manifest = load_manifest(manifest_path);
  REQUIRE(manifest.size() == 512);
  CHECK(manifest.labeled());
  CHECK(manifest.entries.front().label.value() == 0);
  CHECK(manifest.entries.back().label.value() == 3);

  SECTION("all artifacts load through the codecs") {
    for (std::size_t i = 0; i < manifest.size(); i += 97) {
      const EventStream s = load_evt1(manifest.entries[i].event_path);
      s.validate();
      const Tensor y = load_tvec(manifest.entries[i].teacher_path, cfg.embed_dim);
      CHECK_THAT(l2_norm(y), Catch::Matchers::WithinAbs(1.0, 1e-9));
    }
  }
  SECTION("regeneration with the same seed is byte-identical") {
    const auto manifest_b = gen_dataset(cfg, dir.path() / "b");
    CHECK(read_file(manifest_b) == read_file(manifest_path));
    CHECK(read_file(dir.path() / "b" / "c2_s17.evt1") ==
          read_file(dir.path() / "a" / "c2_s17.evt1"));
    CHECK(read_file(dir.path() / "b" / "c3_s101.tvec") ==
          read_file(dir.path() / "a" / "c3_s101.tvec"));
  }
}
