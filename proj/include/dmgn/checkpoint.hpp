#pragma once

#include <cstring>
#include <fstream>

#include "dmgn/adam.hpp"
#include "dmgn/model.hpp"
#include "dmgn/objectives.hpp"

// Versioned binary checkpoint. Byte layout (all integers little-endian):
//
//   magic            8 bytes  "DMGNCKP1"
//   version          u32      currently 1
//   fingerprint      u64      FNV-1a of the config block bytes
//   config_len       u32
//   config block     text     "key=value\n" lines: variant + model geometry
//   step             u64
//   adam_t_model     u64      shared Adam step for the generator side
//   adam_t_disc      u64
//   rng_len          u32
//   rng state        text     mt19937 stream state of the training loop
//   tensor_count     u32
//   tensor records:  u32 name_len, name, u8 trainable, u32 rank, u32 dims[],
//                    f32 data (little-endian), one record per tensor
//
// Records carry the model under "model/", the critic under "disc/" and Adam
// moments under "adam_m/", "adam_d/" prefixes. Loading rebuilds everything
// from the records; the fingerprint guards against mixing checkpoints and
// configs.

namespace dmgn {

struct Checkpoint {
  ModelConfig config;
  std::string variant = "full";
  uint64_t model_seed = 1;
  ParamSet<float> model;
  ParamSet<float> disc;
  std::map<std::string, AdamState<float>> adam_model;
  std::map<std::string, AdamState<float>> adam_disc;
  long step = 0;
  std::string rng_state;

  std::string config_block() const {
    std::ostringstream os;
    os << "variant=" << variant << "\n";
    os << "width=" << config.width << "\n";
    os << "stage_cells=" << config.stage_cells << "\n";
    os << "refine_cells=" << config.refine_cells << "\n";
    os << "pyramid_levels=" << config.pyramid_levels << "\n";
    os << "alpha_fuse=" << config.alpha_fuse << "\n";
    os << "decay_q=" << config.decay_q << "\n";
    os << "se_ratio=" << config.se_ratio << "\n";
    os << "pyramid_seed=" << config.pyramid_seed << "\n";
    os << "model_seed=" << model_seed << "\n";
    return os.str();
  }

  uint64_t fingerprint() const { return fnv1a(config_block()); }
};

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw IoError("truncated checkpoint");
  return v;
}
inline uint64_t get_u64(std::istream& is) {
  uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8)) throw IoError("truncated checkpoint");
  return v;
}

inline void put_tensor(std::ostream& os, const std::string& name, const Tensor<float>& t,
                       bool trainable) {
  put_u32(os, static_cast<uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  const unsigned char flag = trainable ? 1 : 0;
  os.write(reinterpret_cast<const char*>(&flag), 1);
  put_u32(os, static_cast<uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) put_u32(os, static_cast<uint32_t>(t.dim(i)));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(t.numel())));
}

struct RawTensor {
  std::string name;
  bool trainable = true;
  Tensor<float> tensor;
};

inline RawTensor get_tensor(std::istream& is) {
  RawTensor r;
  const uint32_t len = get_u32(is);
  r.name.resize(len);
  if (!is.read(r.name.data(), len)) throw IoError("truncated checkpoint");
  unsigned char flag = 0;
  if (!is.read(reinterpret_cast<char*>(&flag), 1)) throw IoError("truncated checkpoint");
  r.trainable = flag != 0;
  const uint32_t rank = get_u32(is);
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<int>(get_u32(is));
  r.tensor = Tensor<float>(shape);
  if (!is.read(reinterpret_cast<char*>(r.tensor.data()),
               static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(r.tensor.numel()))))
    throw IoError("truncated checkpoint tensor " + r.name);
  return r;
}

inline Tensor<float> from_state(const std::vector<float>& v) {
  return Tensor<float>::from({static_cast<int>(v.size())}, std::vector<float>(v));
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write("DMGNCKP1", 8);
  detail::put_u32(os, 1);
  const std::string cfg = c.config_block();
  detail::put_u64(os, fnv1a(cfg));
  detail::put_u32(os, static_cast<uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  detail::put_u64(os, static_cast<uint64_t>(c.step));
  const uint64_t t_model = c.adam_model.empty() ? 0 : c.adam_model.begin()->second.t;
  const uint64_t t_disc = c.adam_disc.empty() ? 0 : c.adam_disc.begin()->second.t;
  detail::put_u64(os, t_model);
  detail::put_u64(os, t_disc);
  detail::put_u32(os, static_cast<uint32_t>(c.rng_state.size()));
  os.write(c.rng_state.data(), static_cast<std::streamsize>(c.rng_state.size()));

  uint32_t count = 0;
  c.model.for_each([&](const std::string&, const auto&) { ++count; });
  c.disc.for_each([&](const std::string&, const auto&) { ++count; });
  count += 2 * static_cast<uint32_t>(c.adam_model.size());
  count += 2 * static_cast<uint32_t>(c.adam_disc.size());
  detail::put_u32(os, count);

  c.model.for_each([&](const std::string& name, const auto& e) {
    detail::put_tensor(os, "model/" + name, e.tensor, e.trainable);
  });
  c.disc.for_each([&](const std::string& name, const auto& e) {
    detail::put_tensor(os, "disc/" + name, e.tensor, e.trainable);
  });
  for (const auto& [name, st] : c.adam_model) {
    detail::put_tensor(os, "adam_m/" + name + "/m", detail::from_state(st.m), false);
    detail::put_tensor(os, "adam_m/" + name + "/v", detail::from_state(st.v), false);
  }
  for (const auto& [name, st] : c.adam_disc) {
    detail::put_tensor(os, "adam_d/" + name + "/m", detail::from_state(st.m), false);
    detail::put_tensor(os, "adam_d/" + name + "/v", detail::from_state(st.v), false);
  }
  if (!os.flush()) throw IoError("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, "DMGNCKP1", 8) != 0)
    throw IoError("not a checkpoint file: " + path);
  if (detail::get_u32(is) != 1) throw IoError("unsupported checkpoint version in " + path);
  const uint64_t fp = detail::get_u64(is);
  const uint32_t cfg_len = detail::get_u32(is);
  std::string cfg(cfg_len, '\0');
  if (!is.read(cfg.data(), cfg_len)) throw IoError("truncated checkpoint");
  if (fnv1a(cfg) != fp) throw IoError("checkpoint fingerprint mismatch in " + path);

  Checkpoint c;
  {
    std::istringstream lines(cfg);
    std::string line;
    std::map<std::string, std::string> kv;
    while (std::getline(lines, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    c.variant = kv.at("variant");
    c.config.width = std::stoi(kv.at("width"));
    c.config.stage_cells = std::stoi(kv.at("stage_cells"));
    c.config.refine_cells = std::stoi(kv.at("refine_cells"));
    c.config.pyramid_levels = std::stoi(kv.at("pyramid_levels"));
    c.config.alpha_fuse = std::stod(kv.at("alpha_fuse"));
    c.config.decay_q = std::stod(kv.at("decay_q"));
    c.config.se_ratio = std::stoi(kv.at("se_ratio"));
    c.config.pyramid_seed = std::stoull(kv.at("pyramid_seed"));
    c.model_seed = std::stoull(kv.at("model_seed"));
  }
  c.step = static_cast<long>(detail::get_u64(is));
  const uint64_t t_model = detail::get_u64(is);
  const uint64_t t_disc = detail::get_u64(is);
  const uint32_t rng_len = detail::get_u32(is);
  c.rng_state.resize(rng_len);
  if (rng_len && !is.read(c.rng_state.data(), rng_len)) throw IoError("truncated checkpoint");

  const uint32_t count = detail::get_u32(is);
  for (uint32_t i = 0; i < count; ++i) {
    detail::RawTensor r = detail::get_tensor(is);
    if (r.name.rfind("model/", 0) == 0) {
      c.model.add(r.name.substr(6), r.tensor, r.trainable);
    } else if (r.name.rfind("disc/", 0) == 0) {
      c.disc.add(r.name.substr(5), r.tensor, r.trainable);
    } else if (r.name.rfind("adam_m/", 0) == 0 || r.name.rfind("adam_d/", 0) == 0) {
      const bool model_side = r.name[5] == 'm';
      std::string rest = r.name.substr(7);
      const bool is_m = rest.size() > 2 && rest.substr(rest.size() - 2) == "/m";
      rest = rest.substr(0, rest.size() - 2);
      auto& st = model_side ? c.adam_model[rest] : c.adam_disc[rest];
      std::vector<float> vals(r.tensor.data(), r.tensor.data() + r.tensor.numel());
      (is_m ? st.m : st.v) = std::move(vals);
      st.t = static_cast<long>(model_side ? t_model : t_disc);
    } else {
      throw IoError("unknown checkpoint record '" + r.name + "'");
    }
  }
  return c;
}

}  // namespace dmgn
