#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

#include "evssl/cli.hpp"
#include "fixtures.hpp"
#include "helpers.hpp"

using namespace evssl;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliResult r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

}  // namespace

TEST_CASE("cli: usage errors exit with 2 and print a synopsis", "[cli]") {
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"no-such-command"}).code == 2);
  const CliResult r = run_cli({"pretrain", "--config", "x.cfg", "--bogus-flag"});
  CHECK(r.code == 2);
  CHECK(r.err.find("Usage") != std::string::npos);
}

TEST_CASE("cli: --help exits 0", "[cli]") {
  const CliResult r = run_cli({"--help"});
  CHECK(r.code == 0);
  CHECK(r.out.find("evssl") != std::string::npos);
}

TEST_CASE("cli: missing config file is a domain error (exit 1)", "[cli]") {
  CHECK(run_cli({"pretrain", "--config", "/nonexistent/c.cfg"}).code == 1);
}

TEST_CASE("cli: synth-gen then pretrain produces checkpoint and metrics", "[cli]") {
  test::TempDir dir("cli_pipeline");
  RunConfig cfg = test::small_run_config(dir.path(), 5);
  // Point the config at a dataset the CLI itself will generate.
  cfg.manifest = (dir.path() / "gen" / "manifest.tsv").string();
  const auto cfg_path = dir.path() / "c.cfg";
  {
    std::ofstream f(cfg_path);
    f << test::config_text(cfg);
  }

  const CliResult gen = run_cli({"synth-gen", "--config", cfg_path.string(), "--out",
                                 (dir.path() / "gen").string()});
  REQUIRE(gen.code == 0);
  CHECK(std::filesystem::exists(dir.path() / "gen" / "manifest.tsv"));

  const CliResult pre = run_cli({"pretrain", "--config", cfg_path.string(), "--steps", "3",
                                 "--out", (dir.path() / "run").string()});
  REQUIRE(pre.code == 0);
  CHECK(std::filesystem::exists(dir.path() / "run" / "ckpt_final.evck"));
  CHECK(std::filesystem::exists(dir.path() / "run" / "metrics.csv"));

  SECTION("embed and probe wire together") {
    const auto etab = (dir.path() / "feats.etab").string();
    const CliResult emb = run_cli({"embed", "--checkpoint",
                                   (dir.path() / "run" / "ckpt_final.evck").string(),
                                   "--manifest", cfg.manifest, "--out", etab});
    REQUIRE(emb.code == 0);
    REQUIRE(std::filesystem::exists(etab));
    const CliResult probe = run_cli({"probe", "--train", etab, "--test", etab,
                                     "--epochs", "50"});
    REQUIRE(probe.code == 0);
    const double acc = std::stod(probe.out);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
  }

  SECTION("vanilla event-loss flag is accepted") {
    const CliResult van = run_cli({"pretrain", "--config", cfg_path.string(), "--steps", "2",
                                   "--event-loss", "vanilla", "--out",
                                   (dir.path() / "run_v").string()});
    CHECK(van.code == 0);
  }
}

TEST_CASE("cli: inspect dumps a PGM page pair and the patch distribution", "[cli]") {
  test::TempDir dir("cli_inspect");
  SynthConfig scfg = test::small_synth_config(9);
  const auto manifest = gen_dataset(scfg, dir.path() / "data");
  const DatasetManifest m = load_manifest(manifest);
  const std::string events = m.entries[0].event_path.string();
  const auto hist_path = dir.path() / "h.pgm";
  const auto probs_path = dir.path() / "p.csv";

  const CliResult r = run_cli({"inspect", "--events", events, "--dump-hist",
                               hist_path.string(), "--dump-probs", probs_path.string(),
                               "--patch-size", "8"});
  REQUIRE(r.code == 0);

  SECTION("PGM header and page geometry") {
    std::ifstream pgm(hist_path, std::ios::binary);
    std::string magic;
    std::size_t w = 0, h = 0, maxv = 0;
    pgm >> magic >> w >> h >> maxv;
    CHECK(magic == "P5");
    CHECK(w == 32);
    CHECK(h == 64);  // two channel pages stacked
    CHECK(maxv == 255);
  }
  SECTION("distribution CSV has one line per patch and sums to 1") {
    std::ifstream csv(probs_path);
    std::string header;
    std::getline(csv, header);
    CHECK(header == "index,prob");
    double total = 0.0;
    std::string line;
    std::size_t lines = 0;
    while (std::getline(csv, line)) {
      total += std::stod(line.substr(line.find(',') + 1));
      ++lines;
    }
    CHECK(lines == 16);  // (32/8)^2
    CHECK_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-9));
  }
  SECTION("repeated invocations write identical files") {
    const auto again = dir.path() / "h2.pgm";
    run_cli({"inspect", "--events", events, "--dump-hist", again.string()});
    CHECK(read_file(again) == read_file(hist_path));
  }
}

TEST_CASE("cli: gradcheck exits 0 and reports per-loss errors", "[cli]") {
  const CliResult r = run_cli({"gradcheck", "--seed", "7", "--instances", "2"});
  CHECK(r.code == 0);
  CHECK(r.out.find("info_nce") != std::string::npos);
  CHECK(r.out.find("l_kl") != std::string::npos);
  CHECK(r.out.find("model_composite") != std::string::npos);
  CHECK(r.err.find("passed") != std::string::npos);
}
