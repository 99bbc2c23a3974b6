// Copyright 2026 The sphereg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "sphereg/errors.hpp"
#include "sphereg/field.hpp"
#include "sphereg/registration.hpp"
#include "sphereg/unet.hpp"

namespace sphereg::io {

inline constexpr const char* kLibraryVersion = "0.1.0";
inline constexpr std::uint16_t kFormatVersion = 1;

// ---------------------------------------------------------------------------
// CRC-32 (IEEE 802.3): reflected, polynomial 0xEDB88320, init and final xor
// 0xFFFFFFFF. Matches zlib's crc32().

namespace detail {

inline const std::array<std::uint32_t, 256>& crc_table() {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t n = 0; n < 256; ++n) {
      std::uint32_t c = n;
      for (int k = 0; k < 8; ++k) {
        c = (c & 1u) ? (0xEDB88320u ^ (c >> 1)) : (c >> 1);
      }
      t[n] = c;
    }
    return t;
  }();
  return table;
}

}  // namespace detail

inline std::uint32_t crc32(const unsigned char* data, std::size_t len) {
  const auto& t = detail::crc_table();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t k = 0; k < len; ++k) {
    c = t[(c ^ data[k]) & 0xFFu] ^ (c >> 8);
  }
  return c ^ 0xFFFFFFFFu;
}

// ---------------------------------------------------------------------------
// Little-endian byte packing. Explicit byte shuffling, so the formats are
// identical on any host.

namespace detail {

using Bytes = std::vector<unsigned char>;

inline void put_u16(Bytes& b, std::uint16_t v) {
  b.push_back(static_cast<unsigned char>(v & 0xFFu));
  b.push_back(static_cast<unsigned char>((v >> 8) & 0xFFu));
}

inline void put_u32(Bytes& b, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) {
    b.push_back(static_cast<unsigned char>((v >> s) & 0xFFu));
  }
}

inline void put_u64(Bytes& b, std::uint64_t v) {
  for (int s = 0; s < 64; s += 8) {
    b.push_back(static_cast<unsigned char>((v >> s) & 0xFFu));
  }
}

inline void put_f32(Bytes& b, float v) {
  put_u32(b, std::bit_cast<std::uint32_t>(v));
}

inline void put_f64(Bytes& b, double v) {
  put_u64(b, std::bit_cast<std::uint64_t>(v));
}

struct Reader {
  const Bytes& b;
  std::size_t pos = 0;
  std::string what;  // file label for error messages

  void need(std::size_t n) const {
    if (pos + n > b.size()) {
      throw IoError("io: " + what + ": truncated at byte " +
                    std::to_string(pos));
    }
  }
  std::uint8_t u8() {
    need(1);
    return b[pos++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(b[pos]) |
                      static_cast<std::uint16_t>(b[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) {
      v |= static_cast<std::uint32_t>(b[pos + static_cast<std::size_t>(k)])
           << (8 * k);
    }
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) {
      v |= static_cast<std::uint64_t>(b[pos + static_cast<std::size_t>(k)])
           << (8 * k);
    }
    pos += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Whole-file read and atomic write

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("io: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("io: read failed for " + path);
  return bytes;
}

// Writes to a sibling temp file and renames over the target, so readers
// never observe a half-written file.
inline void atomic_write(const std::string& path,
                         const unsigned char* data, std::size_t len) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("io: cannot create " + tmp);
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(len));
    if (!out) throw IoError("io: write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("io: rename to " + path + " failed: " + ec.message());
}

inline void atomic_write(const std::string& path, const std::string& text) {
  atomic_write(path, reinterpret_cast<const unsigned char*>(text.data()),
               text.size());
}

// ---------------------------------------------------------------------------
// Grid map container: magic "SMGM", version u16, kind u8, channels u16,
// rows u32, cols u32, payload (f32, or u32 for labels, channel-major then
// latitude-major), CRC-32 of the payload bytes. All integers little-endian.

enum class MapKind : std::uint8_t {
  feature = 0,
  label = 1,
  velocity = 2,
  deformation = 3,
  variance = 4
};

namespace detail {

inline void check_kind_channels(MapKind kind, std::size_t channels,
                                const std::string& who) {
  if (channels == 0) throw ShapeError(who + ": zero channels");
  if ((kind == MapKind::velocity || kind == MapKind::deformation) &&
      channels != 2) {
    throw ShapeError(who + ": velocity/deformation maps need 2 channels, got " +
                     std::to_string(channels));
  }
}

}  // namespace detail

inline void write_map(const std::string& path, const Field<double>& map,
                      MapKind kind) {
  if (kind == MapKind::label) {
    throw ShapeError("write_map: label maps take the integer overload");
  }
  detail::check_kind_channels(kind, map.channels, "write_map");
  detail::Bytes b;
  b.reserve(17 + map.size() * 4 + 4);
  b.insert(b.end(), {'S', 'M', 'G', 'M'});
  detail::put_u16(b, kFormatVersion);
  b.push_back(static_cast<unsigned char>(kind));
  detail::put_u16(b, static_cast<std::uint16_t>(map.channels));
  detail::put_u32(b, static_cast<std::uint32_t>(map.rows));
  detail::put_u32(b, static_cast<std::uint32_t>(map.cols));
  const std::size_t payload_start = b.size();
  for (double v : map.data) detail::put_f32(b, static_cast<float>(v));
  detail::put_u32(b, crc32(b.data() + payload_start,
                           b.size() - payload_start));
  atomic_write(path, b.data(), b.size());
}

inline void write_labels(const std::string& path, const LabelMap& labels) {
  detail::check_kind_channels(MapKind::label, labels.channels, "write_labels");
  detail::Bytes b;
  b.reserve(17 + labels.size() * 4 + 4);
  b.insert(b.end(), {'S', 'M', 'G', 'M'});
  detail::put_u16(b, kFormatVersion);
  b.push_back(static_cast<unsigned char>(MapKind::label));
  detail::put_u16(b, static_cast<std::uint16_t>(labels.channels));
  detail::put_u32(b, static_cast<std::uint32_t>(labels.rows));
  detail::put_u32(b, static_cast<std::uint32_t>(labels.cols));
  const std::size_t payload_start = b.size();
  for (std::uint32_t v : labels.data) detail::put_u32(b, v);
  detail::put_u32(b, crc32(b.data() + payload_start,
                           b.size() - payload_start));
  atomic_write(path, b.data(), b.size());
}

struct LoadedMap {
  MapKind kind = MapKind::feature;
  Field<double> values;  // empty for label maps
  LabelMap labels;       // empty otherwise
  bool is_label() const { return kind == MapKind::label; }
};

inline LoadedMap read_map(const std::string& path) {
  const auto bytes = read_file(path);
  detail::Reader r{bytes, 0, path};
  r.need(4);
  if (!(bytes[0] == 'S' && bytes[1] == 'M' && bytes[2] == 'G' &&
        bytes[3] == 'M')) {
    throw IoError("io: " + path + ": bad magic, not a grid map file");
  }
  r.pos = 4;
  const std::uint16_t version = r.u16();
  if (version != kFormatVersion) {
    throw IoError("io: " + path + ": unsupported version " +
                  std::to_string(version));
  }
  const std::uint8_t kind_raw = r.u8();
  if (kind_raw > static_cast<std::uint8_t>(MapKind::variance)) {
    throw IoError("io: " + path + ": unknown map kind " +
                  std::to_string(kind_raw));
  }
  const MapKind kind = static_cast<MapKind>(kind_raw);
  const std::size_t channels = r.u16();
  const std::size_t rows = r.u32();
  const std::size_t cols = r.u32();
  detail::check_kind_channels(kind, channels, "read_map(" + path + ")");
  if (rows == 0 || cols == 0) {
    throw ShapeError("read_map(" + path + "): zero-sized grid");
  }
  const std::size_t count = channels * rows * cols;
  const std::size_t expected = r.pos + count * 4 + 4;
  if (bytes.size() != expected) {
    throw ShapeError("read_map(" + path + "): payload length " +
                     std::to_string(bytes.size() - r.pos) +
                     " bytes does not match header (expected " +
                     std::to_string(expected - r.pos) + ")");
  }
  const std::uint32_t want =
      crc32(bytes.data() + r.pos, count * 4);
  LoadedMap out;
  out.kind = kind;
  if (kind == MapKind::label) {
    out.labels = LabelMap(rows, cols, channels);
    for (std::size_t k = 0; k < count; ++k) out.labels.data[k] = r.u32();
  } else {
    out.values = Field<double>(rows, cols, channels);
    for (std::size_t k = 0; k < count; ++k) {
      out.values.data[k] = static_cast<double>(r.f32());
    }
  }
  const std::uint32_t got = r.u32();
  if (want != got) {
    throw IoError("io: " + path + ": CRC mismatch (payload corrupted)");
  }
  return out;
}

inline Field<double> read_values(const std::string& path) {
  LoadedMap m = read_map(path);
  if (m.is_label()) {
    throw ShapeError("read_values(" + path + "): file holds a label map");
  }
  return std::move(m.values);
}

inline VectorField read_vector(const std::string& path) {
  LoadedMap m = read_map(path);
  if (m.kind != MapKind::velocity && m.kind != MapKind::deformation) {
    throw ShapeError("read_vector(" + path +
                     "): file is not a velocity/deformation map");
  }
  return VectorField(std::move(m.values));
}

inline LabelMap read_labels(const std::string& path) {
  LoadedMap m = read_map(path);
  if (!m.is_label()) {
    throw ShapeError("read_labels(" + path + "): file is not a label map");
  }
  return std::move(m.labels);
}

// ---------------------------------------------------------------------------
// Named tensor container for network weights: magic "SMWT", version u16,
// count u32, then per tensor: name length u16, name bytes, rank u32, dims
// u32 each, f64 payload. CRC-32 of everything after the 10-byte header.

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<double> data;
};

inline void save_tensors(const std::string& path,
                         const std::vector<NamedTensor>& tensors) {
  detail::Bytes b;
  b.insert(b.end(), {'S', 'M', 'W', 'T'});
  detail::put_u16(b, kFormatVersion);
  detail::put_u32(b, static_cast<std::uint32_t>(tensors.size()));
  const std::size_t body_start = b.size();
  for (const auto& t : tensors) {
    detail::put_u16(b, static_cast<std::uint16_t>(t.name.size()));
    b.insert(b.end(), t.name.begin(), t.name.end());
    detail::put_u32(b, static_cast<std::uint32_t>(t.dims.size()));
    std::size_t count = 1;
    for (std::uint32_t d : t.dims) {
      detail::put_u32(b, d);
      count *= d;
    }
    if (count != t.data.size()) {
      throw ShapeError("save_tensors: dims of '" + t.name +
                       "' do not match data size");
    }
    for (double v : t.data) detail::put_f64(b, v);
  }
  detail::put_u32(b, crc32(b.data() + body_start, b.size() - body_start));
  atomic_write(path, b.data(), b.size());
}

inline std::vector<NamedTensor> load_tensors(const std::string& path) {
  const auto bytes = read_file(path);
  detail::Reader r{bytes, 0, path};
  r.need(4);
  if (!(bytes[0] == 'S' && bytes[1] == 'M' && bytes[2] == 'W' &&
        bytes[3] == 'T')) {
    throw IoError("io: " + path + ": bad magic, not a weight file");
  }
  r.pos = 4;
  const std::uint16_t version = r.u16();
  if (version != kFormatVersion) {
    throw IoError("io: " + path + ": unsupported version " +
                  std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  const std::size_t body_start = r.pos;
  if (bytes.size() < body_start + 4) {
    throw IoError("io: " + path + ": truncated");
  }
  const std::uint32_t want =
      crc32(bytes.data() + body_start, bytes.size() - body_start - 4);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t t = 0; t < count; ++t) {
    NamedTensor nt;
    const std::uint16_t nlen = r.u16();
    r.need(nlen);
    nt.name.assign(reinterpret_cast<const char*>(bytes.data() + r.pos), nlen);
    r.pos += nlen;
    const std::uint32_t rank = r.u32();
    std::size_t cnt = 1;
    nt.dims.resize(rank);
    for (std::uint32_t d = 0; d < rank; ++d) {
      nt.dims[d] = r.u32();
      cnt *= nt.dims[d];
    }
    nt.data.resize(cnt);
    for (std::size_t k = 0; k < cnt; ++k) nt.data[k] = r.f64();
    out.push_back(std::move(nt));
  }
  if (r.pos + 4 != bytes.size()) {
    throw IoError("io: " + path + ": trailing bytes after tensor table");
  }
  const std::uint32_t got = r.u32();
  if (want != got) {
    throw IoError("io: " + path + ": CRC mismatch (weights corrupted)");
  }
  return out;
}

namespace detail {

inline const std::vector<std::string>& unet_layer_names() {
  static const std::vector<std::string> names = {
      "enc0", "enc1",    "enc2",    "enc3",      "bottleneck", "dec0",
      "dec1", "dec2",    "dec3",    "head_mu",   "head_logvar"};
  return names;
}

}  // namespace detail

inline void save_unet(const std::string& path, const reg::SphericalUNet& net) {
  std::vector<NamedTensor> tensors;
  NamedTensor meta;
  meta.name = "meta";
  meta.dims = {static_cast<std::uint32_t>(1 + net.widths.size())};
  meta.data.push_back(static_cast<double>(net.in_channels));
  for (std::size_t w : net.widths) meta.data.push_back(static_cast<double>(w));
  tensors.push_back(std::move(meta));
  const auto layers = reg::unet_layers(net);
  const auto& names = detail::unet_layer_names();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    NamedTensor w;
    w.name = names[k] + ".w";
    w.dims = {static_cast<std::uint32_t>(layers[k]->c_out),
              static_cast<std::uint32_t>(layers[k]->c_in), 9};
    w.data = layers[k]->w;
    tensors.push_back(std::move(w));
    NamedTensor b;
    b.name = names[k] + ".b";
    b.dims = {static_cast<std::uint32_t>(layers[k]->c_out)};
    b.data = layers[k]->b;
    tensors.push_back(std::move(b));
  }
  save_tensors(path, tensors);
}

inline reg::SphericalUNet load_unet(const std::string& path) {
  const auto tensors = load_tensors(path);
  auto find = [&](const std::string& name) -> const NamedTensor& {
    for (const auto& t : tensors) {
      if (t.name == name) return t;
    }
    throw IoError("io: " + path + ": missing tensor '" + name + "'");
  };
  const NamedTensor& meta = find("meta");
  if (meta.data.size() != 1 + reg::kUnetLevels) {
    throw IoError("io: " + path + ": malformed meta tensor");
  }
  std::vector<std::size_t> widths;
  for (std::size_t k = 1; k < meta.data.size(); ++k) {
    widths.push_back(static_cast<std::size_t>(meta.data[k]));
  }
  reg::SphericalUNet net = reg::make_unet_skeleton(
      static_cast<std::size_t>(meta.data[0]), widths);
  auto layers = reg::unet_layers(net);
  const auto& names = detail::unet_layer_names();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const NamedTensor& w = find(names[k] + ".w");
    const NamedTensor& b = find(names[k] + ".b");
    if (w.data.size() != layers[k]->w.size() ||
        b.data.size() != layers[k]->b.size()) {
      throw IoError("io: " + path + ": tensor '" + names[k] +
                    "' does not match the architecture in meta");
    }
    layers[k]->w = w.data;
    layers[k]->b = b.data;
  }
  if (tensors.size() != 1 + 2 * layers.size()) {
    throw IoError("io: " + path + ": unexpected extra tensors");
  }
  return net;
}

// ---------------------------------------------------------------------------
// Run configuration: JSON mirroring RegistrationConfig plus dataset paths.
// Unknown keys are rejected so typos fail loudly.

struct RunConfig {
  reg::RegistrationConfig reg;
  std::string moving;
  std::string atlas_mean;
  std::string atlas_var;
  std::string atlas_mask;
  std::string weights;
  std::string out_dir;
};

inline reg::RegMode parse_mode(const std::string& s) {
  if (s == "instance") return reg::RegMode::instance;
  if (s == "amortized") return reg::RegMode::amortized;
  if (s == "voxelmorph2d-ablation") return reg::RegMode::voxelmorph2d_ablation;
  throw ConfigError("config: unknown mode '" + s + "'");
}

inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");

  RunConfig cfg;
  auto number = [&](const char* key, double& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) {
      throw ConfigError(std::string("config: '") + key + "' must be a number");
    }
    dst = j[key].get<double>();
  };
  auto integer = [&](const char* key, int& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_integer()) {
      throw ConfigError(std::string("config: '") + key +
                        "' must be an integer");
    }
    dst = j[key].get<int>();
  };
  auto boolean = [&](const char* key, bool& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_boolean()) {
      throw ConfigError(std::string("config: '") + key +
                        "' must be a boolean");
    }
    dst = j[key].get<bool>();
  };
  auto str = [&](const char* key, std::string& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_string()) {
      throw ConfigError(std::string("config: '") + key + "' must be a string");
    }
    dst = j[key].get<std::string>();
  };

  static const std::vector<std::string> allowed = {
      "mode",       "lambda",          "steps",      "iters",
      "lr",         "sample_stochastic", "seed",     "multires_levels",
      "rigid",      "rigid_coarse_step", "moving",   "atlas_mean",
      "atlas_var",  "atlas_mask",      "weights",    "out_dir"};
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const auto& a : allowed) ok = ok || (a == key);
    if (!ok) throw ConfigError("config: unknown key '" + key + "'");
  }

  if (j.contains("mode")) {
    if (!j["mode"].is_string()) {
      throw ConfigError("config: 'mode' must be a string");
    }
    cfg.reg.mode = parse_mode(j["mode"].get<std::string>());
  }
  number("lambda", cfg.reg.lambda);
  integer("steps", cfg.reg.steps);
  integer("iters", cfg.reg.iters);
  number("lr", cfg.reg.lr);
  boolean("sample_stochastic", cfg.reg.sample_stochastic);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer() || j["seed"].get<double>() < 0) {
      throw ConfigError("config: 'seed' must be a nonnegative integer");
    }
    cfg.reg.seed = j["seed"].get<std::uint64_t>();
  }
  integer("multires_levels", cfg.reg.multires_levels);
  boolean("rigid", cfg.reg.rigid);
  number("rigid_coarse_step", cfg.reg.rigid_coarse_step);
  str("moving", cfg.moving);
  str("atlas_mean", cfg.atlas_mean);
  str("atlas_var", cfg.atlas_var);
  str("atlas_mask", cfg.atlas_mask);
  str("weights", cfg.weights);
  str("out_dir", cfg.out_dir);

  cfg.reg.validate();
  return cfg;
}

inline std::string run_config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["mode"] = reg::mode_name(cfg.reg.mode);
  j["lambda"] = cfg.reg.lambda;
  j["steps"] = cfg.reg.steps;
  j["iters"] = cfg.reg.iters;
  j["lr"] = cfg.reg.lr;
  j["sample_stochastic"] = cfg.reg.sample_stochastic;
  j["seed"] = cfg.reg.seed;
  j["multires_levels"] = cfg.reg.multires_levels;
  j["rigid"] = cfg.reg.rigid;
  j["rigid_coarse_step"] = cfg.reg.rigid_coarse_step;
  if (!cfg.moving.empty()) j["moving"] = cfg.moving;
  if (!cfg.atlas_mean.empty()) j["atlas_mean"] = cfg.atlas_mean;
  if (!cfg.atlas_var.empty()) j["atlas_var"] = cfg.atlas_var;
  if (!cfg.atlas_mask.empty()) j["atlas_mask"] = cfg.atlas_mask;
  if (!cfg.weights.empty()) j["weights"] = cfg.weights;
  if (!cfg.out_dir.empty()) j["out_dir"] = cfg.out_dir;
  return j.dump(2) + "\n";
}

// Reproducibility sidecar written next to every output: the exact command,
// a CRC of the config file it ran under, the seed, and format/library
// versions. Deliberately no timestamps, so reruns produce identical bytes.
inline void write_provenance(const std::string& out_path,
                             const std::string& command,
                             std::uint32_t config_crc, std::uint64_t seed) {
  nlohmann::json j;
  j["command"] = command;
  j["config_crc32"] = config_crc;
  j["seed"] = seed;
  j["format_version"] = kFormatVersion;
  j["library_version"] = kLibraryVersion;
  atomic_write(out_path + ".prov.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Text matrix escape hatch for importing external data: first line
// "rows cols channels", then rows*cols*channels whitespace-separated values
// in channel-major order.

inline Field<double> read_text_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("io: cannot open " + path);
  std::size_t rows = 0, cols = 0, channels = 0;
  if (!(in >> rows >> cols >> channels)) {
    throw IoError("io: " + path + ": malformed text map header");
  }
  if (rows == 0 || cols == 0 || channels == 0) {
    throw ShapeError("read_text_map(" + path + "): zero-sized map");
  }
  Field<double> out(rows, cols, channels);
  for (double& v : out.data) {
    if (!(in >> v)) {
      throw IoError("io: " + path + ": not enough values for declared shape");
    }
  }
  double extra;
  if (in >> extra) {
    throw IoError("io: " + path + ": trailing values beyond declared shape");
  }
  return out;
}

inline void write_text_map(const std::string& path, const Field<double>& map) {
  std::ostringstream os;
  os.precision(17);
  os << map.rows << " " << map.cols << " " << map.channels << "\n";
  for (std::size_t k = 0; k < map.data.size(); ++k) {
    os << map.data[k] << ((k + 1) % map.cols == 0 ? "\n" : " ");
  }
  atomic_write(path, os.str());
}

}  // namespace sphereg::io
