// mimicforge command-line front end.
//
//   mimicforge prepare --data ROOT --out DIR
//   mimicforge train   --pairs DIR/pairs.jsonl --ckpt model.mfck
//   mimicforge edit    --ckpt model.mfck --source S --mask M --reference R [--depth D] --out O.png
//   mimicforge eval    --manifest bench.json --outputs DIR [--scores scores.jsonl] --report report
//   mimicforge synth   --out ROOT
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mimicforge/config.hpp"
#include "mimicforge/error.hpp"
#include "mimicforge/parallel.hpp"
#include "mimicforge/pipeline.hpp"

namespace {

using namespace mimicforge;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "TOML-style config file");
  cmd->add_option("--seed", c.seed, "Random seed (overrides the config)");
  cmd->add_option("--set", c.overrides, "Override a config value: section.key=value (repeatable)");
}

config::RunConfig resolve(const Common& c) {
  config::RunConfig cfg = c.config_path.empty() ? config::RunConfig{} : config::load(c.config_path);
  for (const auto& o : c.overrides) config::apply_override(cfg, o);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mimicforge: self-supervised imitative editing at desk scale"};
  app.require_subcommand(1);

  Common common;
  pipeline::PrepareOptions prep;
  std::string prep_data, prep_out;
  auto* c_prep = app.add_subcommand("prepare", "Build training pairs, masks and the pair manifest");
  add_common(c_prep, common);
  c_prep->add_option("--data", prep_data, "Dataset root (videos/, stills/)")->required();
  c_prep->add_option("--out", prep_out, "Output directory")->required();
  c_prep->add_flag("--dump-matches", prep.dump_matches, "Write per-pair keypoint matches as JSON lines");

  std::string tr_pairs, tr_ckpt, tr_resume, tr_log;
  std::optional<int> tr_steps;
  auto* c_train = app.add_subcommand("train", "Train the dual U-Net on a pair manifest");
  add_common(c_train, common);
  c_train->add_option("--pairs", tr_pairs, "pairs.jsonl written by prepare")->required();
  c_train->add_option("--ckpt", tr_ckpt, "Checkpoint output path")->required();
  c_train->add_option("--resume", tr_resume, "Continue from this checkpoint");
  c_train->add_option("--steps", tr_steps, "Optimizer steps to run (overrides train.steps)");
  c_train->add_option("--loss-log", tr_log, "Loss log path (default: <ckpt>.loss.jsonl)");

  pipeline::EditOptions ed;
  std::string ed_ckpt, ed_src, ed_mask, ed_ref, ed_depth, ed_out;
  auto* c_edit = app.add_subcommand("edit", "Fill the masked region of a source image from a reference");
  add_common(c_edit, common);
  c_edit->add_option("--ckpt", ed_ckpt, "Trained checkpoint")->required();
  c_edit->add_option("--source", ed_src, "Source PNG")->required();
  c_edit->add_option("--mask", ed_mask, "Binary mask PNG (white = regenerate)")->required();
  c_edit->add_option("--reference", ed_ref, "Reference PNG")->required();
  c_edit->add_option("--depth", ed_depth, "Optional depth PNG; omitted means a zero depth latent");
  c_edit->add_option("--scale", ed.scale, "Guidance scale (default 5)");
  c_edit->add_option("--steps", ed.steps, "Sampling steps");
  c_edit->add_option("--out", ed_out, "Output PNG (a .json run record is written next to it)")->required();

  pipeline::EvalOptions ev;
  std::string ev_manifest, ev_outputs, ev_scores, ev_report;
  auto* c_eval = app.add_subcommand("eval", "Score outputs against a benchmark manifest");
  add_common(c_eval, common);
  c_eval->add_option("--manifest", ev_manifest, "Benchmark manifest (JSON array)")->required();
  c_eval->add_option("--outputs", ev_outputs, "Directory holding <id>.png outputs")->required();
  c_eval->add_option("--scores", ev_scores, "External scores file (JSON lines)");
  c_eval->add_option("--report", ev_report, "Report path stem; .json and .md are written")->required();

  std::string sy_out;
  int sy_videos = 12, sy_stills = 6, sy_size = 64, sy_frames = 8;
  auto* c_synth = app.add_subcommand("synth", "Write a small procedural dataset");
  add_common(c_synth, common);
  c_synth->add_option("--out", sy_out, "Dataset root to create")->required();
  c_synth->add_option("--videos", sy_videos, "Number of videos")->check(CLI::NonNegativeNumber);
  c_synth->add_option("--stills", sy_stills, "Number of stills")->check(CLI::NonNegativeNumber);
  c_synth->add_option("--size", sy_size, "Frame side in pixels")->check(CLI::Range(16, 4096));
  c_synth->add_option("--frames", sy_frames, "Frames per video")->check(CLI::Range(2, 1000));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const config::RunConfig cfg = resolve(common);
    std::clog << "[mimicforge] workers=" << worker_count() << " config_hash=" << config::config_hash(cfg) << "\n";
    if (*c_prep) {
      prep.dataset_root = prep_data;
      prep.out_dir = prep_out;
      const auto s = pipeline::prepare(cfg, prep);
      std::cout << "prepared " << s.video_pairs + s.pseudo_pairs << " pairs (" << s.video_pairs << " video, "
                << s.pseudo_pairs << " pseudo)\n";
    } else if (*c_train) {
      config::RunConfig tcfg = cfg;
      if (tr_steps) {
        tcfg.train.steps = *tr_steps;
        tcfg.validate();
      }
      pipeline::TrainOptions to;
      to.manifest = tr_pairs;
      to.checkpoint_out = tr_ckpt;
      if (!tr_resume.empty()) to.resume = tr_resume;
      to.loss_log = tr_log.empty() ? tr_ckpt + ".loss.jsonl" : tr_log;
      const auto s = pipeline::train(tcfg, to);
      std::cout << "trained steps " << s.first_step << ".." << s.last_step << ", last loss " << s.last_loss << "\n";
    } else if (*c_edit) {
      ed.checkpoint = ed_ckpt;
      ed.source = ed_src;
      ed.mask = ed_mask;
      ed.reference = ed_ref;
      if (!ed_depth.empty()) ed.depth = ed_depth;
      ed.out = ed_out;
      const auto rec = pipeline::edit(cfg, ed);
      std::cout << "wrote " << ed_out << " (scale " << rec["scale"] << ", steps " << rec["steps"] << ")\n";
    } else if (*c_eval) {
      ev.manifest = ev_manifest;
      ev.outputs_dir = ev_outputs;
      if (!ev_scores.empty()) ev.scores = ev_scores;
      ev.report_out = ev_report;
      const auto s = pipeline::evaluate(cfg, ev);
      std::cout << eval::report_markdown(s.reports);
    } else if (*c_synth) {
      pipeline::write_synthetic_dataset(sy_out, sy_videos, sy_stills, sy_size, sy_frames, cfg.seed);
      std::cout << "wrote " << sy_videos << " videos and " << sy_stills << " stills under " << sy_out << "\n";
    }
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
