#pragma once

// MFCK checkpoint layout (all integers little-endian):
//   "MFCK" | u32 version | u32 len + config hash | u64 step
//   | u32 len + model config JSON | u32 tensor count
//   | per tensor: u32 len + name | u32 rank | u32 dims[rank] | f32 data
// Optimizer moments are stored as ordinary tensors named adam.m.<param> / adam.v.<param>.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimicforge/diffcore/model.hpp"
#include "mimicforge/diffcore/training.hpp"
#include "mimicforge/error.hpp"

namespace mimicforge::diff {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json unet_config_json(const UNetConfig& c) {
  return {{"image_size", c.image_size},
          {"widths", {c.widths[0], c.widths[1], c.widths[2]}},
          {"time_dim", c.time_dim},
          {"train_timesteps", c.train_timesteps}};
}

inline UNetConfig unet_config_from_json(const nlohmann::json& j) {
  UNetConfig c;
  c.image_size = j.at("image_size").get<int>();
  const auto w = j.at("widths").get<std::vector<int>>();
  if (w.size() != 3) throw InvalidInput("checkpoint: widths must have 3 entries");
  for (int i = 0; i < 3; ++i) c.widths[i] = w[i];
  c.time_dim = j.at("time_dim").get<int>();
  c.train_timesteps = j.at("train_timesteps").get<int>();
  c.validate();
  return c;
}

namespace ckpt_detail {
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void get_bytes(std::istream& is, void* dst, std::size_t n, const std::string& what) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw InvalidInput("checkpoint: truncated while reading " + what);
}
inline std::uint32_t get_u32(std::istream& is, const std::string& what) {
  std::uint32_t v;
  get_bytes(is, &v, 4, what);
  return v;
}
inline std::uint64_t get_u64(std::istream& is, const std::string& what) {
  std::uint64_t v;
  get_bytes(is, &v, 8, what);
  return v;
}
inline std::string get_str(std::istream& is, const std::string& what, std::uint32_t max_len = 1u << 20) {
  const std::uint32_t n = get_u32(is, what);
  if (n > max_len) throw InvalidInput("checkpoint: implausible length for " + what);
  std::string s(n, '\0');
  get_bytes(is, s.data(), n, what);
  return s;
}

inline void put_tensor(std::ostream& os, const std::string& name, const Tensor<float>& t) {
  put_str(os, name);
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
}
}  // namespace ckpt_detail

struct Checkpoint {
  UNetConfig model_config;
  std::string config_hash;
  std::uint64_t step = 0;
  std::map<std::string, Tensor<float>> tensors;
};

inline void save_checkpoint(const std::filesystem::path& path, DualUNet<float>& model, Adam<float>* opt,
                            const std::string& config_hash) {
  using namespace ckpt_detail;
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw RuntimeFailure("checkpoint: cannot open " + tmp.string() + " for writing");
    os.write("MFCK", 4);
    put_u32(os, kCheckpointVersion);
    put_str(os, config_hash);
    put_u64(os, model.trained_steps());
    put_str(os, unet_config_json(model.config()).dump());
    auto& ps = model.params();
    const bool with_opt = opt && opt->first_moments().size() == ps.size();
    put_u32(os, static_cast<std::uint32_t>(ps.size() * (with_opt ? 3 : 1)));
    for (std::size_t i = 0; i < ps.size(); ++i) put_tensor(os, ps[i].name, ps[i].value);
    if (with_opt) {
      for (std::size_t i = 0; i < ps.size(); ++i) put_tensor(os, "adam.m." + ps[i].name, opt->first_moments()[i]);
      for (std::size_t i = 0; i < ps.size(); ++i) put_tensor(os, "adam.v." + ps[i].name, opt->second_moments()[i]);
    }
    if (!os) throw RuntimeFailure("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  using namespace ckpt_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("checkpoint: cannot open " + path.string());
  char magic[4];
  get_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, "MFCK", 4) != 0) throw InvalidInput("checkpoint: bad magic in " + path.string());
  const std::uint32_t version = get_u32(is, "version");
  if (version != kCheckpointVersion)
    throw InvalidInput("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.config_hash = get_str(is, "config hash", 256);
  ck.step = get_u64(is, "step");
  ck.model_config = unet_config_from_json(nlohmann::json::parse(get_str(is, "model config")));
  const std::uint32_t count = get_u32(is, "tensor count");
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = get_str(is, "tensor name", 4096);
    const std::uint32_t rank = get_u32(is, name + " rank");
    if (rank > 8) throw InvalidInput("checkpoint: implausible rank for " + name);
    std::vector<int> shape(rank);
    std::uint64_t n = 1;
    for (auto& d : shape) {
      d = static_cast<int>(get_u32(is, name + " dims"));
      n *= static_cast<std::uint64_t>(d);
    }
    if (n > (1ull << 30)) throw InvalidInput("checkpoint: implausible size for " + name);
    Tensor<float> t(shape);
    get_bytes(is, t.data.data(), t.numel() * sizeof(float), name);
    ck.tensors[name] = std::move(t);
  }
  return ck;
}

// Restores model parameters (and optimizer moments when present and `opt` given).
inline void restore_checkpoint(const Checkpoint& ck, DualUNet<float>& model, Adam<float>* opt = nullptr) {
  if (!(ck.model_config == model.config())) throw InvalidInput("checkpoint: model config differs from the target model");
  auto& ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto it = ck.tensors.find(ps[i].name);
    if (it == ck.tensors.end()) throw InvalidInput("checkpoint: missing tensor " + ps[i].name);
    if (it->second.shape != ps[i].value.shape)
      throw InvalidInput("checkpoint: shape mismatch for " + ps[i].name + ": " + shape_str(it->second.shape) + " vs " +
                         shape_str(ps[i].value.shape));
    ps[i].value = it->second;
  }
  model.set_trained_steps(ck.step);
  if (!opt) return;
  opt->reset(ps);
  if (!ck.tensors.count("adam.m." + ps[0].name)) return;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    opt->first_moments()[i] = ck.tensors.at("adam.m." + ps[i].name);
    opt->second_moments()[i] = ck.tensors.at("adam.v." + ps[i].name);
  }
  opt->set_steps(static_cast<long>(ck.step));
}

}  // namespace mimicforge::diff
