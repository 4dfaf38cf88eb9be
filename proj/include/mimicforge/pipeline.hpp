#pragma once

// End-to-end stages behind the command-line front end: dataset ingestion,
// pair preparation, training, editing and evaluation.
//
// Dataset layout:
//   <root>/videos/<video_id>/NNNNN.png        frames, sorted by name
//   <root>/videos/<video_id>/depth/NNNNN.png  optional per-frame depth
//   <root>/stills/<image_id>/image.png + mask_K.png [+ depth.png]

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimicforge/config.hpp"
#include "mimicforge/diffcore/checkpoint.hpp"
#include "mimicforge/diffcore/sampling.hpp"
#include "mimicforge/diffcore/training.hpp"
#include "mimicforge/error.hpp"
#include "mimicforge/evalharness.hpp"
#include "mimicforge/imgcore.hpp"
#include "mimicforge/imgio.hpp"
#include "mimicforge/masker.hpp"
#include "mimicforge/matcher.hpp"
#include "mimicforge/parallel.hpp"
#include "mimicforge/sampler.hpp"
#include "mimicforge/synthetic.hpp"

namespace mimicforge::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;
using img::ImageBuf;

struct VideoEntry {
  std::string id;
  std::vector<fs::path> frames;
  std::vector<std::optional<fs::path>> depth;  // parallel to frames
};

struct StillEntry {
  std::string id;
  fs::path image;
  std::vector<fs::path> masks;
  std::optional<fs::path> depth;
};

struct Dataset {
  std::vector<VideoEntry> videos;
  std::vector<StillEntry> stills;
};

namespace detail {
inline std::vector<fs::path> sorted_children(const fs::path& dir, bool dirs) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir))
    if (dirs ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}
}  // namespace detail

inline Dataset scan_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw InvalidInput("dataset root " + root.string() + " is not a directory");
  Dataset ds;
  const std::regex frame_re(R"(\d+\.png)"), mask_re(R"(mask_(\d+)\.png)");
  for (const auto& vdir : detail::sorted_children(root / "videos", true)) {
    VideoEntry v;
    v.id = vdir.filename().string();
    for (const auto& f : detail::sorted_children(vdir, false)) {
      if (!std::regex_match(f.filename().string(), frame_re)) continue;
      v.frames.push_back(f);
      const fs::path d = vdir / "depth" / f.filename();
      v.depth.push_back(fs::is_regular_file(d) ? std::optional<fs::path>(d) : std::nullopt);
    }
    if (v.frames.size() >= 2) ds.videos.push_back(std::move(v));
  }
  for (const auto& sdir : detail::sorted_children(root / "stills", true)) {
    StillEntry s;
    s.id = sdir.filename().string();
    s.image = sdir / "image.png";
    if (!fs::is_regular_file(s.image)) continue;
    std::vector<std::pair<int, fs::path>> masks;
    std::smatch m;
    for (const auto& f : detail::sorted_children(sdir, false)) {
      const std::string name = f.filename().string();
      if (std::regex_match(name, m, mask_re)) masks.emplace_back(std::stoi(m[1].str()), f);
    }
    std::sort(masks.begin(), masks.end());
    for (auto& [k, p] : masks) s.masks.push_back(p);
    if (fs::is_regular_file(sdir / "depth.png")) s.depth = sdir / "depth.png";
    if (!s.masks.empty()) ds.stills.push_back(std::move(s));
  }
  return ds;
}

// Square working copy at the model resolution.
inline ImageBuf to_model_size(const ImageBuf& im, int size, bool nearest = false) {
  const ImageBuf sq = img::pad_to_square(im, 0.0f).image;
  return nearest ? img::resize_nearest(sq, size, size) : img::resize_bilinear(sq, size, size);
}

// ----------------------------------------------------------------- prepare

struct PrepareOptions {
  fs::path dataset_root;
  fs::path out_dir;
  bool dump_matches = false;
};

struct PrepareSummary {
  std::size_t video_pairs = 0;
  std::size_t pseudo_pairs = 0;
};

struct PreparedPair {
  sampler::FramePair pair;
  std::optional<ImageBuf> depth;
};

inline PrepareSummary prepare(const config::RunConfig& cfg, const PrepareOptions& opt) {
  cfg.validate();
  const Dataset ds = scan_dataset(opt.dataset_root);
  if (ds.videos.empty() && ds.stills.empty())
    throw InvalidInput("dataset " + opt.dataset_root.string() + " has no videos (>= 2 frames) and no stills");
  const std::string hash = config::config_hash(cfg);
  const int S = cfg.model.image_size;

  std::vector<std::vector<PreparedPair>> per_video(ds.videos.size());
  parallel_for(ds.videos.size(), [&](std::size_t i) {
    const auto& v = ds.videos[i];
    std::vector<ImageBuf> frames;
    for (const auto& f : v.frames) frames.push_back(img::to_rgb(img::read_png(f)));
    for (std::size_t k = 1; k < frames.size(); ++k)
      if (frames[k].height() != frames[0].height() || frames[k].width() != frames[0].width())
        throw InvalidInput("video " + v.id + ": frame sizes differ");
    auto pairs = sampler::select_pairs(frames, cfg.selection, static_cast<std::size_t>(cfg.data.pairs_per_video),
                                       derive_seed(cfg.seed, {101, i}), v.id);
    for (auto& p : pairs) {
      PreparedPair pp{std::move(p), std::nullopt};
      if (const auto& d = v.depth[pp.pair.origin.idx_a]) pp.depth = img::read_png(*d);
      per_video[i].push_back(std::move(pp));
    }
  });
  std::vector<PreparedPair> video_pairs, pseudo_pairs;
  for (auto& v : per_video)
    for (auto& p : v) video_pairs.push_back(std::move(p));

  std::vector<std::vector<PreparedPair>> per_still(ds.stills.size());
  parallel_for(ds.stills.size(), [&](std::size_t i) {
    const auto& s = ds.stills[i];
    sampler::SegmentedStill still;
    still.id = s.id;
    still.image = img::to_rgb(img::read_png(s.image));
    for (const auto& m : s.masks) still.object_masks.push_back(img::read_mask_png(m));
    std::optional<ImageBuf> depth;
    if (s.depth) depth = img::read_png(*s.depth);
    for (int k = 0; k < cfg.data.pseudo_per_still; ++k)
      per_still[i].push_back(
          {sampler::make_pseudo_pair(still, derive_seed(cfg.seed, {102, i, static_cast<std::uint64_t>(k)}), cfg.augment),
           depth});
  });
  for (auto& v : per_still)
    for (auto& p : v) pseudo_pairs.push_back(std::move(p));

  // Mix by index so the emitted pairs keep their depth maps.
  auto index_source = [](std::size_t n, sampler::OriginKind kind) {
    auto pos = std::make_shared<std::size_t>(0);
    return sampler::PairSource([n, pos, kind]() -> std::optional<sampler::FramePair> {
      if (*pos >= n) return std::nullopt;
      sampler::FramePair fp;
      fp.origin.kind = kind;
      fp.origin.idx_a = static_cast<int>((*pos)++);
      return fp;
    });
  };
  sampler::MixedStream mix(index_source(video_pairs.size(), sampler::OriginKind::video),
                           index_source(pseudo_pairs.size(), sampler::OriginKind::pseudo), cfg.data.video_fraction,
                           derive_seed(cfg.seed, {103}));
  std::vector<const PreparedPair*> order;
  const std::size_t limit = cfg.data.total_pairs > 0 ? static_cast<std::size_t>(cfg.data.total_pairs) : SIZE_MAX;
  while (order.size() < limit) {
    auto p = mix.next();
    if (!p) break;
    const auto& pool = p->origin.kind == sampler::OriginKind::video ? video_pairs : pseudo_pairs;
    order.push_back(&pool[static_cast<std::size_t>(p->origin.idx_a)]);
  }
  if (order.empty()) throw InvalidInput("prepare: no training pairs could be built from " + opt.dataset_root.string());

  fs::create_directories(opt.out_dir / "pairs");
  std::vector<json> lines(order.size());
  parallel_for(order.size(), [&](std::size_t i) {
    const PreparedPair& pp = *order[i];
    const auto& fp = pp.pair;
    char name[32];
    std::snprintf(name, sizeof name, "%06zu", i);
    const fs::path dir = opt.out_dir / "pairs" / name;
    fs::create_directories(dir);
    const ImageBuf src = to_model_size(fp.source, S), ref = to_model_size(fp.reference, S);
    json line = {{"index", i},
                 {"pair_id", name},
                 {"origin", fp.origin.kind == sampler::OriginKind::video ? "video" : "pseudo"},
                 {"id", fp.origin.id},
                 {"ssim_score", fp.ssim_score},
                 {"source", "pairs/" + std::string(name) + "/source.png"},
                 {"reference", "pairs/" + std::string(name) + "/reference.png"},
                 {"mask", "pairs/" + std::string(name) + "/mask.png"},
                 {"config_hash", hash}};
    ImageBuf mask;
    if (fp.origin.kind == sampler::OriginKind::video) {
      line["idx_a"] = fp.origin.idx_a;
      line["idx_b"] = fp.origin.idx_b;
      const auto matches =
          match::match_ratio_test(match::detect_and_describe(src), match::detect_and_describe(ref));
      const auto g = masker::grid_mask(S, S, matches, cfg.mask, derive_seed(cfg.seed, {104, i}));
      mask = g.rendered;
      std::vector<int> flags(g.cell_flags.begin(), g.cell_flags.end());
      std::ofstream(dir / "grid.json") << json({{"n", g.n}, {"cell_flags", flags}}).dump() << "\n";
      line["grid"] = "pairs/" + std::string(name) + "/grid.json";
      line["match_count"] = matches.size();
      if (opt.dump_matches) {
        std::ofstream mo(dir / "matches.jsonl");
        for (const auto& m : matches.matches)
          mo << json({{"sx", m.src.x}, {"sy", m.src.y}, {"rx", m.ref.x}, {"ry", m.ref.y}, {"dist", m.distance}}).dump()
             << "\n";
      }
    } else {
      line["mask_index"] = fp.mask_index;
      const ImageBuf obj = to_model_size(*fp.object_mask, S, true);
      mask = masker::segmentation_mask(obj, std::nullopt, derive_seed(cfg.seed, {105, i}));
    }
    img::write_png(dir / "source.png", src);
    img::write_png(dir / "reference.png", ref);
    img::write_mask_png(dir / "mask.png", mask);
    if (pp.depth) {
      img::write_png(dir / "depth.png", to_model_size(*pp.depth, S));
      line["depth"] = "pairs/" + std::string(name) + "/depth.png";
    }
    lines[i] = std::move(line);
  });

  PrepareSummary sum;
  std::ofstream out(opt.out_dir / "pairs.jsonl");
  if (!out) throw RuntimeFailure("prepare: cannot write " + (opt.out_dir / "pairs.jsonl").string());
  for (const auto& l : lines) {
    out << l.dump() << "\n";
    (l["origin"] == "video" ? sum.video_pairs : sum.pseudo_pairs)++;
  }
  return sum;
}

// ------------------------------------------------------------------- train

struct TrainOptions {
  fs::path manifest;  // pairs.jsonl
  fs::path checkpoint_out;
  std::optional<fs::path> resume;
  fs::path loss_log;
};

struct TrainSummary {
  std::uint64_t first_step = 0;
  std::uint64_t last_step = 0;
  double last_loss = 0;
};

inline std::vector<diff::TrainingSample> load_training_samples(const fs::path& manifest, int image_size) {
  std::ifstream in(manifest);
  if (!in) throw InvalidInput("train: cannot open manifest " + manifest.string());
  const fs::path base = manifest.parent_path();
  std::vector<json> lines;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      lines.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw InvalidInput("train: manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (lines.empty()) throw InvalidInput("train: manifest " + manifest.string() + " is empty");
  std::vector<diff::TrainingSample> out(lines.size());
  parallel_for(lines.size(), [&](std::size_t i) {
    const json& l = lines[i];
    const ImageBuf src = img::to_rgb(img::read_png(base / l.at("source").get<std::string>()));
    const ImageBuf ref = img::to_rgb(img::read_png(base / l.at("reference").get<std::string>()));
    const ImageBuf mask = img::read_mask_png(base / l.at("mask").get<std::string>());
    if (src.height() != image_size || src.width() != image_size)
      throw InvalidInput("train: pair " + std::to_string(i) + " is " + img::shape_str(src) + ", model expects " +
                         std::to_string(image_size) + "x" + std::to_string(image_size));
    std::optional<ImageBuf> depth;
    if (l.contains("depth")) depth = img::read_png(base / l["depth"].get<std::string>());
    out[i] = diff::prepare_sample(src, mask, depth ? &*depth : nullptr, ref);
  });
  return out;
}

// Every step draws from its own seed derived from (seed, step), so a resumed
// run follows the same trajectory as an uninterrupted one.
inline TrainSummary train(const config::RunConfig& cfg, const TrainOptions& opt) {
  cfg.validate();
  const std::string hash = config::config_hash(cfg);
  const auto samples = load_training_samples(opt.manifest, cfg.model.image_size);
  diff::DualUNet<float> model(cfg.model, derive_seed(cfg.seed, {201}));
  diff::Adam<float> adam;
  adam.reset(model.params());
  if (opt.resume) diff::restore_checkpoint(diff::read_checkpoint(*opt.resume), model, &adam);
  const auto sched = diff::NoiseSchedule::linear(cfg.model.train_timesteps);
  diff::DiffusionObjective<float> obj(model, sched);

  TrainSummary sum;
  sum.first_step = model.trained_steps();
  std::ofstream log(opt.loss_log, opt.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw RuntimeFailure("train: cannot write loss log " + opt.loss_log.string());
  const std::uint64_t end = sum.first_step + static_cast<std::uint64_t>(cfg.train.steps);
  for (std::uint64_t step = sum.first_step; step < end; ++step) {
    Rng rng(derive_seed(cfg.seed, {202, step}));
    std::vector<diff::TrainingSample> batch;
    for (int b = 0; b < cfg.train.batch; ++b)
      batch.push_back(samples[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(samples.size()) - 1))]);
    diff::StepResult r;
    try {
      r = diff::train_step(std::span<const diff::TrainingSample>(batch), obj, adam, cfg.train, sched, rng);
    } catch (const RuntimeFailure&) {
      // Keep the last good state on disk, then report.
      diff::save_checkpoint(opt.checkpoint_out, model, &adam, hash);
      throw;
    }
    model.set_trained_steps(step + 1);
    sum.last_loss = r.loss;
    if ((step + 1) % static_cast<std::uint64_t>(cfg.train.log_interval) == 0)
      log << json({{"step", step + 1},
                   {"loss", r.loss},
                   {"reference_dropped", r.reference_dropped},
                   {"depth_dropped", r.depth_dropped}})
                 .dump()
          << "\n";
  }
  sum.last_step = model.trained_steps();
  diff::save_checkpoint(opt.checkpoint_out, model, &adam, hash);
  return sum;
}

// -------------------------------------------------------------------- edit

struct EditOptions {
  fs::path checkpoint;
  fs::path source, mask, reference;
  std::optional<fs::path> depth;
  fs::path out;
  std::optional<double> scale;  // defaults to the config's sample.scale
  std::optional<int> steps;
};

inline json edit(const config::RunConfig& cfg, const EditOptions& opt) {
  cfg.validate();
  const auto ck = diff::read_checkpoint(opt.checkpoint);
  diff::DualUNet<float> model(ck.model_config, 0);
  diff::restore_checkpoint(ck, model);
  const int S = ck.model_config.image_size;

  const ImageBuf source = img::to_rgb(img::read_png(opt.source));
  const ImageBuf mask = img::read_mask_png(opt.mask);
  const ImageBuf reference = img::to_rgb(img::read_png(opt.reference));
  if (mask.height() != source.height() || mask.width() != source.width())
    throw InvalidInput("edit: mask " + img::shape_str(mask) + " does not match source " + img::shape_str(source));
  std::optional<ImageBuf> depth;
  if (opt.depth) {
    depth = img::read_png(*opt.depth);
    if (depth->height() != source.height() || depth->width() != source.width())
      throw InvalidInput("edit: depth " + img::shape_str(*depth) + " does not match source " + img::shape_str(source));
  }

  const auto padded = img::pad_to_square(source, 0.0f);
  const int side = padded.image.height();
  const ImageBuf src_s = img::resize_bilinear(padded.image, S, S);
  const ImageBuf mask_s = to_model_size(mask, S, true);
  const ImageBuf ref_s = to_model_size(reference, S);
  std::optional<ImageBuf> depth_s;
  if (depth) depth_s = to_model_size(*depth, S);
  if (src_s.height() != mask_s.height() || src_s.width() != ref_s.width())
    throw InvalidInput("edit: inputs disagree in size after pad/resize");

  diff::SampleOptions so;
  so.scale = opt.scale.value_or(cfg.sample.scale);
  so.steps = opt.steps.value_or(cfg.sample.steps);
  so.seed = cfg.seed;
  const auto sched = diff::NoiseSchedule::linear(ck.model_config.train_timesteps);
  const ImageBuf gen = diff::cfg_sample(src_s, mask_s, ref_s, depth_s ? &*depth_s : nullptr, so, model, sched);

  ImageBuf out = img::unpad(img::resize_bilinear(gen, side, side), padded.padding);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      if (mask.at(y, x, 0) < 0.5f)
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = source.at(y, x, c);
  if (!opt.out.parent_path().empty()) fs::create_directories(opt.out.parent_path());
  img::write_png(opt.out, out);

  json record = {{"seed", cfg.seed},
                 {"scale", so.scale},
                 {"steps", so.steps},
                 {"config_hash", config::config_hash(cfg)},
                 {"checkpoint_config_hash", ck.config_hash},
                 {"checkpoint_step", ck.step},
                 {"depth", opt.depth.has_value()},
                 {"source", opt.source.filename().string()},
                 {"output", opt.out.filename().string()}};
  std::ofstream(fs::path(opt.out).replace_extension(".json")) << record.dump(2) << "\n";
  return record;
}

// -------------------------------------------------------------------- eval

struct EvalOptions {
  fs::path manifest;
  fs::path outputs_dir;
  std::optional<fs::path> scores;
  fs::path report_out;  // extension replaced by .json / .md
};

struct EvalSummary {
  std::vector<eval::TrackReport> reports;
  std::vector<eval::RecordIssue> issues;
};

inline EvalSummary evaluate(const config::RunConfig& cfg, const EvalOptions& opt) {
  EvalSummary sum;
  const auto check = eval::validate_manifest(opt.manifest);
  sum.issues = check.issues;
  for (const auto& is : check.issues)
    std::clog << "[eval] manifest record " << is.index << (is.id.empty() ? "" : " (" + is.id + ")") << ": " << is.message
              << "\n";
  if (check.records.empty()) throw InvalidInput("eval: no valid records in " + opt.manifest.string());
  std::optional<eval::ScoreLoad> scores;
  if (opt.scores) {
    scores = eval::load_scores(*opt.scores);
    for (const auto& w : scores->warnings) std::clog << "[eval] " << w << "\n";
  }
  sum.reports = eval::evaluate(check.records, opt.outputs_dir, scores ? &scores->scores : nullptr);
  const std::string hash = config::config_hash(cfg);
  if (!opt.report_out.parent_path().empty()) fs::create_directories(opt.report_out.parent_path());
  std::ofstream(fs::path(opt.report_out).replace_extension(".json")) << eval::report_json(sum.reports, hash).dump(2)
                                                                      << "\n";
  std::ofstream(fs::path(opt.report_out).replace_extension(".md")) << eval::report_markdown(sum.reports, hash);
  return sum;
}

// ------------------------------------------------------------------- synth

// Writes a small procedural dataset in the layout scan_dataset expects.
inline void write_synthetic_dataset(const fs::path& root, int videos, int stills, int size, int frames,
                                    std::uint64_t seed) {
  for (int v = 0; v < videos; ++v) {
    char id[32];
    std::snprintf(id, sizeof id, "video_%04d", v);
    const fs::path dir = root / "videos" / id;
    fs::create_directories(dir / "depth");
    const auto clip = synth::moving_shapes_video(derive_seed(seed, {301, static_cast<std::uint64_t>(v)}), size, frames);
    for (int f = 0; f < frames; ++f) {
      char name[32];
      std::snprintf(name, sizeof name, "%05d.png", f);
      img::write_png(dir / name, clip[f].image);
      img::write_png(dir / "depth" / name, clip[f].depth);
    }
  }
  for (int s = 0; s < stills; ++s) {
    char id[32];
    std::snprintf(id, sizeof id, "still_%04d", s);
    const fs::path dir = root / "stills" / id;
    fs::create_directories(dir);
    const auto st = synth::shapes_still(derive_seed(seed, {302, static_cast<std::uint64_t>(s)}), size, id);
    img::write_png(dir / "image.png", st.image);
    for (std::size_t k = 0; k < st.object_masks.size(); ++k)
      img::write_mask_png(dir / ("mask_" + std::to_string(k) + ".png"), st.object_masks[k]);
  }
}

}  // namespace mimicforge::pipeline
