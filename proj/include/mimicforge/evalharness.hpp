#pragma once

// Benchmark manifest validation, metric evaluation, and report emission.
// Inner-ID tracks score SSIM/PSNR internally (full image) and take LPIPS
// from an external scores file; inter-ID tracks take DINO-I/CLIP-I/CLIP-T
// from the scores file only.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mimicforge/error.hpp"
#include "mimicforge/imgcore.hpp"
#include "mimicforge/imgio.hpp"
#include "mimicforge/metrics.hpp"
#include "mimicforge/parallel.hpp"

namespace mimicforge::eval {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class Task { part_composition, texture_transfer };
enum class Track { inter_id, inner_id };

inline std::string to_string(Task t) { return t == Task::part_composition ? "part_composition" : "texture_transfer"; }
inline std::string to_string(Track t) { return t == Track::inter_id ? "inter_id" : "inner_id"; }

inline std::optional<Task> parse_task(const std::string& s) {
  if (s == "part_composition") return Task::part_composition;
  if (s == "texture_transfer") return Task::texture_transfer;
  return std::nullopt;
}
inline std::optional<Track> parse_track(const std::string& s) {
  if (s == "inter_id") return Track::inter_id;
  if (s == "inner_id") return Track::inner_id;
  return std::nullopt;
}

// Metric columns per track, in report order.
inline const std::vector<std::string>& track_metrics(Track t) {
  static const std::vector<std::string> inner{"ssim", "psnr", "lpips"};
  static const std::vector<std::string> inter{"dino_i", "clip_i", "clip_t"};
  return t == Track::inner_id ? inner : inter;
}

inline std::string metric_label(const std::string& m) {
  static const std::map<std::string, std::string> labels{{"ssim", "SSIM"},     {"psnr", "PSNR"},     {"lpips", "LPIPS"},
                                                         {"dino_i", "DINO-I"}, {"clip_i", "CLIP-I"}, {"clip_t", "CLIP-T"}};
  auto it = labels.find(m);
  return it == labels.end() ? m : it->second;
}

struct BenchmarkRecord {
  std::string id;
  Task task = Task::part_composition;
  Track track = Track::inner_id;
  fs::path source_path, mask_path, reference_path;
  std::optional<fs::path> ground_truth_path;
  std::optional<fs::path> reference_region_mask_path;
  std::optional<fs::path> depth_path;
  std::optional<std::string> prompt_text;
  bool depth_required = false;
};

struct RecordIssue {
  std::size_t index = 0;
  std::string id;
  std::string message;
};

struct ManifestCheck {
  std::vector<BenchmarkRecord> records;
  std::vector<RecordIssue> issues;
  std::size_t total = 0;
};

namespace detail {
inline std::optional<std::string> opt_string(const json& o, const char* key) {
  if (!o.contains(key) || o.at(key).is_null()) return std::nullopt;
  if (!o.at(key).is_string()) throw InvalidInput(std::string("field '") + key + "' must be a string");
  return o.at(key).get<std::string>();
}
inline std::string req_string(const json& o, const char* key) {
  auto v = opt_string(o, key);
  if (!v || v->empty()) throw InvalidInput(std::string("missing field '") + key + "'");
  return *v;
}
}  // namespace detail

// Per-record problems are collected, not thrown; an unreadable or
// non-array manifest is fatal.
inline ManifestCheck validate_manifest(const fs::path& path, bool check_files = true) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("manifest: cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidInput("manifest: " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!doc.is_array()) throw InvalidInput("manifest: top level must be a JSON array");
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

  ManifestCheck out;
  out.total = doc.size();
  std::map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const json& o = doc[i];
    std::string id = o.is_object() && o.contains("id") && o["id"].is_string() ? o["id"].get<std::string>() : "";
    std::vector<std::string> problems;
    BenchmarkRecord r;
    try {
      if (!o.is_object()) throw InvalidInput("record must be an object");
      r.id = detail::req_string(o, "id");
      const auto task = parse_task(detail::req_string(o, "task"));
      const auto track = parse_track(detail::req_string(o, "track"));
      if (!task) throw InvalidInput("unknown task '" + o["task"].get<std::string>() + "'");
      if (!track) throw InvalidInput("unknown track '" + o["track"].get<std::string>() + "'");
      r.task = *task;
      r.track = *track;
      r.source_path = resolve(detail::req_string(o, "source_path"));
      r.mask_path = resolve(detail::req_string(o, "mask_path"));
      r.reference_path = resolve(detail::req_string(o, "reference_path"));
      if (auto v = detail::opt_string(o, "ground_truth_path")) r.ground_truth_path = resolve(*v);
      if (auto v = detail::opt_string(o, "reference_region_mask_path")) r.reference_region_mask_path = resolve(*v);
      if (auto v = detail::opt_string(o, "depth_path")) r.depth_path = resolve(*v);
      r.prompt_text = detail::opt_string(o, "prompt_text");
      if (o.contains("depth_required")) {
        if (!o["depth_required"].is_boolean()) throw InvalidInput("field 'depth_required' must be a boolean");
        r.depth_required = o["depth_required"].get<bool>();
      }
    } catch (const std::exception& e) {
      out.issues.push_back({i, id, e.what()});
      continue;
    }
    if (r.track == Track::inner_id && !r.ground_truth_path) problems.push_back("inner_id record needs ground_truth_path");
    if (r.track == Track::inter_id && !r.reference_region_mask_path)
      problems.push_back("inter_id record needs reference_region_mask_path");
    if (r.track == Track::inter_id && (!r.prompt_text || r.prompt_text->empty()))
      problems.push_back("inter_id record needs prompt_text");
    if (r.task == Task::texture_transfer && !r.depth_required)
      problems.push_back("texture_transfer record must set depth_required");
    if (auto it = seen.find(r.id); it != seen.end())
      problems.push_back("duplicate id (first at record " + std::to_string(it->second) + ")");
    if (check_files) {
      std::vector<std::pair<std::string, fs::path>> files{
          {"source_path", r.source_path}, {"mask_path", r.mask_path}, {"reference_path", r.reference_path}};
      if (r.ground_truth_path) files.emplace_back("ground_truth_path", *r.ground_truth_path);
      if (r.reference_region_mask_path) files.emplace_back("reference_region_mask_path", *r.reference_region_mask_path);
      if (r.depth_path) files.emplace_back("depth_path", *r.depth_path);
      for (const auto& [k, f] : files)
        if (!fs::is_regular_file(f)) problems.push_back(k + " not found: " + f.string());
    }
    seen.emplace(r.id, i);
    if (problems.empty()) {
      out.records.push_back(std::move(r));
    } else {
      for (auto& m : problems) out.issues.push_back({i, r.id, std::move(m)});
    }
  }
  return out;
}

using ScoreTable = std::map<std::pair<std::string, std::string>, double>;

struct ScoreLoad {
  ScoreTable scores;
  std::vector<std::string> warnings;
};

// JSON lines {"id": string, "metric": string, "value": number}. Blank
// lines are skipped; duplicates keep the last value.
inline ScoreLoad load_scores(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("scores: cannot open " + path.string());
  ScoreLoad out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json o;
    try {
      o = json::parse(line);
    } catch (const json::parse_error& e) {
      throw InvalidInput("scores: line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!o.is_object() || !o.contains("id") || !o["id"].is_string() || !o.contains("metric") ||
        !o["metric"].is_string() || !o.contains("value") || !o["value"].is_number())
      throw InvalidInput("scores: line " + std::to_string(lineno) + ": expected {\"id\",\"metric\",\"value\"}");
    const auto key = std::make_pair(o["id"].get<std::string>(), o["metric"].get<std::string>());
    const double v = o["value"].get<double>();
    if (out.scores.count(key))
      out.warnings.push_back("scores: duplicate (" + key.first + ", " + key.second + ") at line " +
                             std::to_string(lineno) + ", keeping the last value");
    out.scores[key] = v;
  }
  return out;
}

struct TrackReport {
  Task task = Task::part_composition;
  Track track = Track::inner_id;
  std::size_t records_in = 0;
  std::size_t records_scored = 0;
  std::size_t records_skipped = 0;
  std::vector<std::string> skipped_ids;
  std::map<std::string, double> means;            // only metrics with at least one value
  std::map<std::string, std::size_t> value_counts;  // records contributing to each mean

  bool operator==(const TrackReport&) const = default;
};

struct RecordScore {
  bool skipped = false;
  std::string reason;
  std::map<std::string, double> values;
};

inline RecordScore score_record(const BenchmarkRecord& r, const fs::path& outputs_dir, const ScoreTable* scores) {
  RecordScore s;
  const fs::path out = outputs_dir / (r.id + ".png");
  if (!fs::is_regular_file(out)) {
    s.skipped = true;
    s.reason = "missing output " + out.string();
    return s;
  }
  if (r.track == Track::inner_id) {
    try {
      const img::ImageBuf o = img::read_png(out);
      const img::ImageBuf gt = img::read_png(*r.ground_truth_path);
      if (o.height() != gt.height() || o.width() != gt.width()) {
        s.skipped = true;
        s.reason = "output " + img::shape_str(o) + " and ground truth " + img::shape_str(gt) + " differ in size";
        return s;
      }
      s.values["ssim"] = metrics::ssim(o, gt);
      s.values["psnr"] = metrics::psnr(img::to_rgb(o), img::to_rgb(gt));
    } catch (const std::exception& e) {
      s.skipped = true;
      s.reason = e.what();
      return s;
    }
  }
  if (scores)
    for (const auto& m : track_metrics(r.track)) {
      if (m == "ssim" || m == "psnr") continue;
      if (auto it = scores->find({r.id, m}); it != scores->end()) s.values[m] = it->second;
    }
  return s;
}

// One report per (task, track) present in `records`, ordered by (task, track).
inline std::vector<TrackReport> evaluate(const std::vector<BenchmarkRecord>& records, const fs::path& outputs_dir,
                                         const ScoreTable* scores = nullptr) {
  std::vector<RecordScore> per(records.size());
  parallel_for(records.size(), [&](std::size_t i) { per[i] = score_record(records[i], outputs_dir, scores); });

  std::map<std::pair<Task, Track>, TrackReport> groups;
  std::map<std::pair<Task, Track>, std::map<std::string, double>> sums;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto key = std::make_pair(records[i].task, records[i].track);
    auto& rep = groups[key];
    rep.task = key.first;
    rep.track = key.second;
    ++rep.records_in;
    if (per[i].skipped) {
      ++rep.records_skipped;
      rep.skipped_ids.push_back(records[i].id);
      std::clog << "[eval] skipping " << records[i].id << ": " << per[i].reason << "\n";
      continue;
    }
    ++rep.records_scored;
    for (const auto& [m, v] : per[i].values) {
      sums[key][m] += v;
      ++rep.value_counts[m];
    }
  }
  std::vector<TrackReport> out;
  for (auto& [key, rep] : groups) {
    for (const auto& [m, total] : sums[key]) rep.means[m] = total / static_cast<double>(rep.value_counts[m]);
    out.push_back(std::move(rep));
  }
  return out;
}

namespace detail {
inline json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "+inf" : "-inf";
  return v;
}
inline double parse_number_or_inf(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw InvalidInput("report: bad numeric string '" + s + "'");
  }
  return j.get<double>();
}
inline std::string format_value(const std::string& metric, double v) {
  if (std::isinf(v)) return v > 0 ? "+inf" : "-inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(metric == "psnr" ? 2 : 4) << v;
  return os.str();
}
}  // namespace detail

inline json report_json(const std::vector<TrackReport>& reports, const std::string& config_hash = "") {
  json tracks = json::array();
  for (const auto& r : reports) {
    json means = json::object(), counts = json::object();
    for (const auto& m : track_metrics(r.track)) {
      if (auto it = r.means.find(m); it != r.means.end()) means[m] = detail::number_or_inf(it->second);
      if (auto it = r.value_counts.find(m); it != r.value_counts.end()) counts[m] = it->second;
    }
    tracks.push_back({{"task", to_string(r.task)},
                      {"track", to_string(r.track)},
                      {"records_in", r.records_in},
                      {"records_scored", r.records_scored},
                      {"records_skipped", r.records_skipped},
                      {"skipped_ids", r.skipped_ids},
                      {"metrics", means},
                      {"value_counts", counts}});
  }
  json doc = {{"reports", tracks}};
  if (!config_hash.empty()) doc["config_hash"] = config_hash;
  return doc;
}

inline std::vector<TrackReport> reports_from_json(const json& doc) {
  std::vector<TrackReport> out;
  for (const auto& t : doc.at("reports")) {
    TrackReport r;
    const auto task = parse_task(t.at("task").get<std::string>());
    const auto track = parse_track(t.at("track").get<std::string>());
    if (!task || !track) throw InvalidInput("report: unknown task or track");
    r.task = *task;
    r.track = *track;
    r.records_in = t.at("records_in").get<std::size_t>();
    r.records_scored = t.at("records_scored").get<std::size_t>();
    r.records_skipped = t.at("records_skipped").get<std::size_t>();
    r.skipped_ids = t.at("skipped_ids").get<std::vector<std::string>>();
    for (const auto& [k, v] : t.at("metrics").items()) r.means[k] = detail::parse_number_or_inf(v);
    for (const auto& [k, v] : t.at("value_counts").items()) r.value_counts[k] = v.get<std::size_t>();
    out.push_back(std::move(r));
  }
  return out;
}

// One table per (task, track); absent metrics render as an em dash.
inline std::string report_markdown(const std::vector<TrackReport>& reports, const std::string& config_hash = "") {
  std::ostringstream os;
  os << "# Benchmark report\n";
  if (!config_hash.empty()) os << "\nconfig_hash: `" << config_hash << "`\n";
  for (const auto& r : reports) {
    const auto& ms = track_metrics(r.track);
    os << "\n## " << to_string(r.task) << " / " << to_string(r.track) << "\n\n|";
    for (const auto& m : ms) os << ' ' << metric_label(m) << " |";
    os << " records | skipped |\n|";
    for (std::size_t i = 0; i < ms.size() + 2; ++i) os << "---|";
    os << "\n|";
    for (const auto& m : ms) {
      auto it = r.means.find(m);
      os << ' ' << (it == r.means.end() ? std::string("—") : detail::format_value(m, it->second)) << " |";
    }
    os << ' ' << r.records_scored << " | " << r.records_skipped << " |\n";
  }
  return os.str();
}

}  // namespace mimicforge::eval
