#pragma once

// Run configuration: a small TOML subset ([section] headers, key = value
// with numbers, booleans, quoted strings and flat numeric arrays, # comments)
// plus "section.key=value" overrides. The config hash is a SHA-256 over the
// canonical (sorted-key) JSON form of the resolved values, so it does not
// depend on key order or formatting in the file.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "mimicforge/augment.hpp"
#include "mimicforge/diffcore/checkpoint.hpp"
#include "mimicforge/diffcore/model.hpp"
#include "mimicforge/diffcore/training.hpp"
#include "mimicforge/error.hpp"
#include "mimicforge/masker.hpp"
#include "mimicforge/sampler.hpp"

namespace mimicforge::config {

using Value = std::variant<double, bool, std::string, std::vector<double>>;

struct DataConfig {
  double video_fraction = 0.7;
  int pairs_per_video = 4;
  int pseudo_per_still = 1;
  int total_pairs = 0;  // 0: every selected pair, mixed until both sources run dry
};

struct SampleConfig {
  double scale = 5.0;
  int steps = 50;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  sampler::SelectionBand selection;
  augment::AugmentConfig augment = augment::AugmentConfig::strong();
  masker::MaskPolicy mask;
  diff::UNetConfig model;
  diff::TrainConfig train;
  SampleConfig sample;

  void validate() const {
    selection.validate();
    augment.validate();
    mask.validate();
    model.validate();
    train.validate();
    if (data.video_fraction < 0 || data.video_fraction > 1) throw InvalidInput("data.video_fraction must be in [0,1]");
    if (data.pairs_per_video < 1 || data.pseudo_per_still < 1 || data.total_pairs < 0)
      throw InvalidInput("data: pair counts must be positive");
    if (sample.scale < 0) throw InvalidInput("sample.scale must be >= 0");
    if (sample.steps < 1 || sample.steps > model.train_timesteps)
      throw InvalidInput("sample.steps must be in [1, model.train_timesteps]");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Strips a trailing # comment that is not inside a quoted string.
inline std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

inline double parse_number(const std::string& s, const std::string& where) {
  std::string t;
  for (char c : s)
    if (c != '_') t += c;
  std::size_t used = 0;
  double v;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    throw InvalidInput(where + ": expected a number, got '" + s + "'");
  }
  if (used != t.size()) throw InvalidInput(where + ": expected a number, got '" + s + "'");
  return v;
}

}  // namespace detail

inline Value parse_value(const std::string& raw, const std::string& where) {
  const std::string s = detail::trim(raw);
  if (s.empty()) throw InvalidInput(where + ": missing value");
  if (s == "true") return true;
  if (s == "false") return false;
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"') throw InvalidInput(where + ": unterminated string");
    return s.substr(1, s.size() - 2);
  }
  if (s.front() == '[') {
    if (s.back() != ']') throw InvalidInput(where + ": unterminated array");
    std::vector<double> out;
    std::stringstream ss(s.substr(1, s.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (detail::trim(item).empty()) continue;
      out.push_back(detail::parse_number(detail::trim(item), where));
    }
    return out;
  }
  return detail::parse_number(s, where);
}

// Flat "section.key" -> value map, in file order of first appearance.
inline std::vector<std::pair<std::string, Value>> parse_toml(std::istream& in, const std::string& name = "config") {
  std::vector<std::pair<std::string, Value>> out;
  std::string section, line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = name + ":" + std::to_string(lineno);
    line = detail::trim(detail::strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw InvalidInput(where + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw InvalidInput(where + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidInput(where + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw InvalidInput(where + ": empty key");
    out.emplace_back(section.empty() ? key : section + "." + key, parse_value(line.substr(eq + 1), where));
  }
  return out;
}

namespace detail {

inline double as_num(const Value& v, const std::string& key) {
  if (auto p = std::get_if<double>(&v)) return *p;
  throw InvalidInput(key + ": expected a number");
}
inline int as_int(const Value& v, const std::string& key) {
  const double d = as_num(v, key);
  if (d != std::floor(d) || std::abs(d) > 2e9) throw InvalidInput(key + ": expected an integer");
  return static_cast<int>(d);
}
inline std::pair<double, double> as_range(const Value& v, const std::string& key) {
  auto p = std::get_if<std::vector<double>>(&v);
  if (!p || p->size() != 2) throw InvalidInput(key + ": expected [lo, hi]");
  return {(*p)[0], (*p)[1]};
}

using Setter = std::function<void(RunConfig&, const Value&, const std::string&)>;

inline const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed",
       [](RunConfig& c, const Value& v, const std::string& k) {
         const double d = as_num(v, k);
         if (d < 0 || d != std::floor(d) || d > 9.007199254740992e15) throw InvalidInput(k + ": expected a non-negative integer");
         c.seed = static_cast<std::uint64_t>(d);
       }},
      {"data.video_fraction", [](RunConfig& c, const Value& v, const std::string& k) { c.data.video_fraction = as_num(v, k); }},
      {"data.pairs_per_video", [](RunConfig& c, const Value& v, const std::string& k) { c.data.pairs_per_video = as_int(v, k); }},
      {"data.pseudo_per_still", [](RunConfig& c, const Value& v, const std::string& k) { c.data.pseudo_per_still = as_int(v, k); }},
      {"data.total_pairs", [](RunConfig& c, const Value& v, const std::string& k) { c.data.total_pairs = as_int(v, k); }},
      {"selection.t_low", [](RunConfig& c, const Value& v, const std::string& k) { c.selection.t_low = as_num(v, k); }},
      {"selection.t_high", [](RunConfig& c, const Value& v, const std::string& k) { c.selection.t_high = as_num(v, k); }},
      {"augment.brightness_delta", [](RunConfig& c, const Value& v, const std::string& k) { c.augment.brightness_delta = as_range(v, k); }},
      {"augment.contrast_range", [](RunConfig& c, const Value& v, const std::string& k) { c.augment.contrast_range = as_range(v, k); }},
      {"augment.saturation_range", [](RunConfig& c, const Value& v, const std::string& k) { c.augment.saturation_range = as_range(v, k); }},
      {"augment.hflip_prob", [](RunConfig& c, const Value& v, const std::string& k) { c.augment.hflip_prob = as_num(v, k); }},
      {"augment.vflip_prob", [](RunConfig& c, const Value& v, const std::string& k) { c.augment.vflip_prob = as_num(v, k); }},
      {"augment.rotation_max_deg", [](RunConfig& c, const Value& v, const std::string& k) { c.augment.rotation_max_deg = as_num(v, k); }},
      {"augment.scale_range", [](RunConfig& c, const Value& v, const std::string& k) { c.augment.scale_range = as_range(v, k); }},
      {"augment.projective_jitter", [](RunConfig& c, const Value& v, const std::string& k) { c.augment.projective_jitter = as_num(v, k); }},
      {"mask.p_matched", [](RunConfig& c, const Value& v, const std::string& k) { c.mask.p_matched = as_num(v, k); }},
      {"mask.p_other", [](RunConfig& c, const Value& v, const std::string& k) { c.mask.p_other = as_num(v, k); }},
      {"model.image_size", [](RunConfig& c, const Value& v, const std::string& k) { c.model.image_size = as_int(v, k); }},
      {"model.widths",
       [](RunConfig& c, const Value& v, const std::string& k) {
         auto p = std::get_if<std::vector<double>>(&v);
         if (!p || p->size() != 3) throw InvalidInput(k + ": expected three widths");
         for (int i = 0; i < 3; ++i) c.model.widths[i] = as_int((*p)[i], k);
       }},
      {"model.time_dim", [](RunConfig& c, const Value& v, const std::string& k) { c.model.time_dim = as_int(v, k); }},
      {"model.train_timesteps",
       [](RunConfig& c, const Value& v, const std::string& k) { c.model.train_timesteps = as_int(v, k); }},
      {"train.lr", [](RunConfig& c, const Value& v, const std::string& k) { c.train.lr = as_num(v, k); }},
      {"train.batch", [](RunConfig& c, const Value& v, const std::string& k) { c.train.batch = as_int(v, k); }},
      {"train.steps", [](RunConfig& c, const Value& v, const std::string& k) { c.train.steps = as_int(v, k); }},
      {"train.ref_dropout_prob", [](RunConfig& c, const Value& v, const std::string& k) { c.train.ref_dropout_prob = as_num(v, k); }},
      {"train.depth_dropout_prob", [](RunConfig& c, const Value& v, const std::string& k) { c.train.depth_dropout_prob = as_num(v, k); }},
      {"train.log_interval", [](RunConfig& c, const Value& v, const std::string& k) { c.train.log_interval = as_int(v, k); }},
      {"sample.scale",
       [](RunConfig& c, const Value& v, const std::string& k) {
         c.sample.scale = as_num(v, k);
         c.train.guidance_scale = c.sample.scale;
       }},
      {"sample.steps", [](RunConfig& c, const Value& v, const std::string& k) { c.sample.steps = as_int(v, k); }},
  };
  return table;
}

}  // namespace detail

inline void apply(RunConfig& c, const std::string& key, const Value& v) {
  const auto& t = detail::setters();
  auto it = t.find(key);
  if (it == t.end()) throw InvalidInput("config: unknown key '" + key + "'");
  it->second(c, v, key);
}

// "section.key=value" with the same literal syntax as the file.
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw InvalidInput("override '" + assignment + "' must look like section.key=value");
  const std::string key = detail::trim(assignment.substr(0, eq));
  apply(c, key, parse_value(assignment.substr(eq + 1), "override " + key));
}

inline RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("config: cannot open " + path.string());
  RunConfig c;
  for (const auto& [k, v] : parse_toml(in, path.filename().string())) apply(c, k, v);
  return c;
}

inline nlohmann::json canonical_json(const RunConfig& c) {
  using nlohmann::json;
  auto range = [](const std::pair<double, double>& r) { return json::array({r.first, r.second}); };
  json j;
  j["seed"] = c.seed;
  j["data"] = {{"video_fraction", c.data.video_fraction},
               {"pairs_per_video", c.data.pairs_per_video},
               {"pseudo_per_still", c.data.pseudo_per_still},
               {"total_pairs", c.data.total_pairs}};
  j["selection"] = {{"t_low", c.selection.t_low}, {"t_high", c.selection.t_high}};
  j["augment"] = {{"brightness_delta", range(c.augment.brightness_delta)},
                  {"contrast_range", range(c.augment.contrast_range)},
                  {"saturation_range", range(c.augment.saturation_range)},
                  {"hflip_prob", c.augment.hflip_prob},
                  {"vflip_prob", c.augment.vflip_prob},
                  {"rotation_max_deg", c.augment.rotation_max_deg},
                  {"scale_range", range(c.augment.scale_range)},
                  {"projective_jitter", c.augment.projective_jitter}};
  j["mask"] = {{"p_matched", c.mask.p_matched}, {"p_other", c.mask.p_other}};
  j["model"] = diff::unet_config_json(c.model);
  j["train"] = {{"lr", c.train.lr},
                {"batch", c.train.batch},
                {"steps", c.train.steps},
                {"ref_dropout_prob", c.train.ref_dropout_prob},
                {"depth_dropout_prob", c.train.depth_dropout_prob},
                {"log_interval", c.train.log_interval}};
  j["sample"] = {{"scale", c.sample.scale}, {"steps", c.sample.steps}};
  return j;  // nlohmann::json objects keep keys sorted
}

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr))
    throw RuntimeFailure("sha256: digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

// First 16 hex digits of SHA-256 over the canonical JSON.
inline std::string config_hash(const RunConfig& c) { return sha256_hex(canonical_json(c).dump()).substr(0, 16); }

}  // namespace mimicforge::config
