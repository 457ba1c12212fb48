#pragma once

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "evssl/config.hpp"
#include "evssl/errors.hpp"
#include "evssl/evalkit.hpp"
#include "evssl/event.hpp"
#include "evssl/fdcheck.hpp"
#include "evssl/synth.hpp"
#include "evssl/trainer.hpp"
#include "evssl/viewgen.hpp"

namespace evssl::cli {

namespace detail {

inline void write_pgm_pages(const std::filesystem::path& path, const EventImage& img) {
  // One P5 raster with the two channel pages stacked vertically: +polarity
  // counts on top, -polarity counts below. Pixel value = min(count, 255).
  std::string data = "P5\n" + std::to_string(img.width) + " " +
                     std::to_string(2 * img.height) + "\n255\n";
  data.reserve(data.size() + 2 * img.height * img.width);
  for (std::size_t c = 0; c < EventImage::kChannels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) {
        const double v = img.at(c, y, x);
        data.push_back(static_cast<char>(static_cast<unsigned char>(std::min(v, 255.0))));
      }
    }
  }
  write_text_atomic(path, data);
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

struct StudyRow {
  std::string mode;
  double l_total = 0.0;
  double probe_top1 = 0.0;
  double mean_cos_evt = 0.0;
  double eff_rank_evt = 0.0;
  double mean_cos_feat = 0.0;
  double eff_rank_feat = 0.0;
};

/// Pretrain with one event-loss mode, then probe + collapse diagnostics on
/// the held-out split (per-class 75/25, table order).
inline StudyRow run_study_arm(RunConfig cfg, EventLossMode mode,
                              const std::filesystem::path& out_dir, std::ostream& err) {
  cfg.loss.event_loss = mode;
  cfg.out_dir = out_dir.string();
  const char* name = mode == EventLossMode::projection ? "projection" : "vanilla";
  err << "[collapse-study] pretraining (" << name << ", " << cfg.optim.steps << " steps)\n";
  PretrainResult run = pretrain(cfg);

  ViewConfig vcfg = cfg.view;
  EmbeddingTable feats = embed_dataset(run.final_checkpoint, cfg.manifest, vcfg, cfg.seed,
                                       EmbedSpace::features);
  EmbeddingTable heads = embed_dataset(run.final_checkpoint, cfg.manifest, vcfg, cfg.seed,
                                       EmbedSpace::evt_head);
  require(feats.labeled(), Errc::unlabeled_data, "collapse study needs a labeled manifest");

  const auto split = train_val_split(feats.labels, 0.75);
  const EmbeddingTable train = subset(feats, split.first);
  const EmbeddingTable val = subset(feats, split.second);
  const CollapseMetrics head_metrics = collapse_metrics(subset(heads, split.second));
  const CollapseMetrics feat_metrics = collapse_metrics(val);

  StudyRow row;
  row.mode = name;
  row.l_total = run.last.l_total;
  row.probe_top1 = linear_probe(train, val);
  row.mean_cos_evt = head_metrics.mean_pairwise_cos;
  row.eff_rank_evt = head_metrics.effective_rank;
  row.mean_cos_feat = feat_metrics.mean_pairwise_cos;
  row.eff_rank_feat = feat_metrics.effective_rank;
  return row;
}

}  // namespace detail

/// Runs one CLI invocation. args excludes the program name. Exit codes:
/// 0 success, 1 domain/runtime error, 2 usage error.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"evssl: self-supervised pre-training on event-camera data"};
  app.require_subcommand(1);

  // synth-gen
  auto* synth_cmd = app.add_subcommand("synth-gen", "Generate the synthetic paired dataset");
  std::string sg_config;
  std::string sg_out = "data";
  std::uint64_t sg_seed = 0;
  synth_cmd->add_option("--config", sg_config, "Run configuration file")->required();
  synth_cmd->add_option("--out", sg_out, "Output directory");
  auto* sg_seed_opt = synth_cmd->add_option("--seed", sg_seed, "Seed override");

  // pretrain
  auto* pre_cmd = app.add_subcommand("pretrain", "Run the pre-training loop");
  std::string pt_config, pt_out, pt_resume, pt_event_loss;
  std::uint64_t pt_seed = 0, pt_steps = 0;
  pre_cmd->add_option("--config", pt_config, "Run configuration file")->required();
  auto* pt_seed_opt = pre_cmd->add_option("--seed", pt_seed, "Seed override");
  pre_cmd->add_option("--out", pt_out, "Output directory override");
  auto* pt_steps_opt = pre_cmd->add_option("--steps", pt_steps, "Step budget override");
  pre_cmd->add_option("--event-loss", pt_event_loss, "Event loss mode")
      ->check(CLI::IsMember({"projection", "vanilla"}));
  pre_cmd->add_option("--resume", pt_resume, "Checkpoint to resume from");

  // embed
  auto* emb_cmd = app.add_subcommand("embed", "Extract frozen features for a manifest");
  std::string em_ckpt, em_manifest, em_out, em_space = "features";
  std::uint32_t em_clip = 10;
  emb_cmd->add_option("--checkpoint", em_ckpt, "EVCK checkpoint")->required();
  emb_cmd->add_option("--manifest", em_manifest, "Dataset manifest")->required();
  emb_cmd->add_option("--out", em_out, "Output ETAB path")->required();
  emb_cmd->add_option("--space", em_space, "features | evt-head")
      ->check(CLI::IsMember({"features", "evt-head"}));
  emb_cmd->add_option("--clip", em_clip, "Histogram clip value");

  // probe
  auto* probe_cmd = app.add_subcommand("probe", "Linear probe on frozen features");
  std::string pr_train, pr_test;
  std::size_t pr_epochs = 500;
  double pr_lr = 0.1;
  probe_cmd->add_option("--train", pr_train, "Training ETAB")->required();
  probe_cmd->add_option("--test", pr_test, "Test ETAB")->required();
  probe_cmd->add_option("--epochs", pr_epochs, "Gradient-descent epochs");
  probe_cmd->add_option("--lr", pr_lr, "Learning rate");

  // inspect
  auto* ins_cmd = app.add_subcommand("inspect", "Dump histogram / patch distribution");
  std::string in_events, in_hist, in_probs;
  std::size_t in_patch = 16;
  std::uint32_t in_clip = 10;
  ins_cmd->add_option("--events", in_events, "EVT1 event file")->required();
  ins_cmd->add_option("--dump-hist", in_hist,
                      "Write the histogram as a PGM (channel pages stacked vertically)");
  ins_cmd->add_option("--dump-probs", in_probs, "Write the patch distribution as CSV");
  ins_cmd->add_option("--patch-size", in_patch, "Patch side for the distribution");
  ins_cmd->add_option("--clip", in_clip, "Histogram clip value");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  std::uint64_t gc_seed = 7;
  int gc_instances = 20;
  grad_cmd->add_option("--seed", gc_seed, "Suite seed");
  grad_cmd->add_option("--instances", gc_instances, "Random instances per check");

  // collapse-study
  auto* study_cmd = app.add_subcommand(
      "collapse-study", "Matched pretraining: projection loss vs vanilla InfoNCE");
  std::string cs_config, cs_out;
  std::uint64_t cs_seed = 0;
  study_cmd->add_option("--config", cs_config, "Run configuration file")->required();
  auto* cs_seed_opt = study_cmd->add_option("--seed", cs_seed, "Seed override");
  study_cmd->add_option("--out", cs_out, "Output directory override");

  std::vector<std::string> argv_store = args;
  std::vector<char*> argv;
  static char prog_name[] = "evssl";
  argv.push_back(prog_name);
  for (std::string& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (app.got_subcommand(synth_cmd)) {
      RunConfig cfg = load_config(sg_config);
      SynthConfig scfg = cfg.synth;
      if (sg_seed_opt->count() > 0) scfg.seed = sg_seed;
      const std::filesystem::path manifest = gen_dataset(scfg, sg_out);
      err << "wrote " << scfg.classes * scfg.samples_per_class << " samples, manifest "
          << manifest.string() << "\n";
      return 0;
    }

    if (app.got_subcommand(pre_cmd)) {
      RunConfig cfg = load_config(pt_config);
      if (pt_seed_opt->count() > 0) cfg.seed = pt_seed;
      if (pt_steps_opt->count() > 0) cfg.optim.steps = pt_steps;
      if (!pt_out.empty()) cfg.out_dir = pt_out;
      if (pt_event_loss == "vanilla") cfg.loss.event_loss = EventLossMode::vanilla;
      if (pt_event_loss == "projection") cfg.loss.event_loss = EventLossMode::projection;
      PretrainResult result = pretrain(cfg, pt_resume);
      err << "step " << result.last.step << ": l_total=" << detail::fmt(result.last.l_total)
          << " (evt=" << detail::fmt(result.last.l_evt)
          << ", rgb=" << detail::fmt(result.last.l_rgb)
          << ", kl=" << detail::fmt(result.last.l_kl) << ")\n";
      err << "checkpoint " << result.final_checkpoint.string() << "\n";
      err << "metrics " << result.metrics_csv.string() << "\n";
      return 0;
    }

    if (app.got_subcommand(emb_cmd)) {
      const ModelState state = load_checkpoint(em_ckpt);
      ViewConfig vcfg;
      vcfg.patch_size = state.dims.P;
      vcfg.patches_per_view = state.dims.L;
      vcfg.clip = em_clip;
      const EmbedSpace space =
          em_space == "features" ? EmbedSpace::features : EmbedSpace::evt_head;
      const EmbeddingTable table = embed_dataset(em_ckpt, em_manifest, vcfg, 0, space);
      save_etab(em_out, table);
      err << "wrote " << table.size() << " x " << table.rows.cols << " table to " << em_out
          << "\n";
      return 0;
    }

    if (app.got_subcommand(probe_cmd)) {
      const EmbeddingTable train = load_etab(pr_train);
      const EmbeddingTable test = load_etab(pr_test);
      const double acc = linear_probe(train, test, pr_epochs, pr_lr);
      out << detail::fmt(acc) << "\n";
      return 0;
    }

    if (app.got_subcommand(ins_cmd)) {
      const EventStream stream = load_evt1(in_events);
      const EventImage hist = event_histogram(stream);
      if (!in_hist.empty()) {
        detail::write_pgm_pages(in_hist, hist);
        err << "wrote histogram pages to " << in_hist << "\n";
      }
      if (!in_probs.empty()) {
        const std::vector<Patch> patches = patchify(normalize_image(hist, in_clip), in_patch);
        const std::vector<double> prob = patch_distribution(info_quantities(patches));
        std::string csv = "index,prob\n";
        for (std::size_t i = 0; i < prob.size(); ++i) {
          char buf[64];
          std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, prob[i]);
          csv += buf;
        }
        write_text_atomic(in_probs, csv);
        err << "wrote patch distribution to " << in_probs << "\n";
      }
      err << "events=" << stream.size() << " geometry=" << stream.width << "x"
          << stream.height << " duration_us=" << stream.duration() << "\n";
      return 0;
    }

    if (app.got_subcommand(grad_cmd)) {
      const std::vector<FdResult> results = gradient_check_suite(gc_seed, gc_instances);
      bool ok = true;
      for (const FdResult& r : results) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%-16s max_rel_err=%.3e\n", r.name.c_str(),
                      r.max_rel_err);
        out << buf;
        ok = ok && r.max_rel_err < 1e-5;
      }
      err << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (threshold 1e-5)\n";
      return ok ? 0 : 1;
    }

    if (app.got_subcommand(study_cmd)) {
      RunConfig cfg = load_config(cs_config);
      if (cs_seed_opt->count() > 0) {
        cfg.seed = cs_seed;
        cfg.synth.seed = cs_seed;
      }
      const std::filesystem::path out_root = cs_out.empty() ? cfg.out_dir : cs_out;
      if (cfg.manifest.empty() || !std::filesystem::exists(cfg.manifest)) {
        err << "[collapse-study] manifest missing; generating synthetic dataset\n";
        cfg.manifest = gen_dataset(cfg.synth, out_root / "data").string();
      }
      const detail::StudyRow proj =
          detail::run_study_arm(cfg, EventLossMode::projection, out_root / "projection", err);
      const detail::StudyRow van =
          detail::run_study_arm(cfg, EventLossMode::vanilla, out_root / "vanilla", err);

      const char* header =
          "mode        l_total   probe_top1  mean_cos_evt  eff_rank_evt  mean_cos_feat  "
          "eff_rank_feat";
      out << header << "\n";
      std::string csv = "mode,l_total,probe_top1,mean_cos_evt,eff_rank_evt,mean_cos_feat,"
                        "eff_rank_feat\n";
      for (const detail::StudyRow& row : {proj, van}) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%-11s %-9.4f %-11.4f %-13.4f %-13.4f %-14.4f %.4f\n",
                      row.mode.c_str(), row.l_total, row.probe_top1, row.mean_cos_evt,
                      row.eff_rank_evt, row.mean_cos_feat, row.eff_rank_feat);
        out << buf;
        std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      row.mode.c_str(), row.l_total, row.probe_top1, row.mean_cos_evt,
                      row.eff_rank_evt, row.mean_cos_feat, row.eff_rank_feat);
        csv += buf;
      }
      write_text_atomic(out_root / "collapse_summary.csv", csv);
      err << "summary " << (out_root / "collapse_summary.csv").string() << "\n";
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace evssl::cli
