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

#include <catch2/catch_amalgamated.hpp>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "sphereg/sphereg.hpp"

namespace fs = std::filesystem;
using namespace sphereg;

namespace {

// Fresh scratch directory per test case; the [io] suite runs in one process.
std::string scratch() {
  const fs::path dir = fs::temp_directory_path() / "sphereg_io_scratch";
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

// Values pushed through the f32 payload must be float-representable for
// bit-exact round trips.
Field<double> f32_field(std::size_t rows, std::size_t cols, std::size_t ch,
                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Field<double> f(rows, cols, ch);
  for (double& x : f.data) x = static_cast<double>(static_cast<float>(nd(rng)));
  return f;
}

std::vector<unsigned char> slurp(const std::string& path) {
  return io::read_file(path);
}

void dump(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("grid maps round-trip every kind bit-exactly", "[io]") {
  const std::string dir = scratch();

  const Field<double> feat = f32_field(5, 8, 3, 1);
  io::write_map(dir + "/f.smgm", feat, io::MapKind::feature);
  const io::LoadedMap lf = io::read_map(dir + "/f.smgm");
  REQUIRE(lf.kind == io::MapKind::feature);
  REQUIRE(lf.values.data == feat.data);
  REQUIRE(io::read_values(dir + "/f.smgm").data == feat.data);

  const Field<double> vel = f32_field(5, 8, 2, 2);
  io::write_map(dir + "/v.smgm", vel, io::MapKind::velocity);
  REQUIRE(io::read_vector(dir + "/v.smgm").data == vel.data);
  io::write_map(dir + "/d.smgm", vel, io::MapKind::deformation);
  REQUIRE(io::read_map(dir + "/d.smgm").kind == io::MapKind::deformation);

  const Field<double> var = f32_field(5, 8, 1, 3);
  io::write_map(dir + "/s.smgm", var, io::MapKind::variance);
  REQUIRE(io::read_values(dir + "/s.smgm").data == var.data);

  LabelMap labels(5, 8, 1);
  for (std::size_t k = 0; k < labels.data.size(); ++k) {
    labels.data[k] = static_cast<std::uint32_t>(k % 7);
  }
  io::write_labels(dir + "/l.smgm", labels);
  REQUIRE(io::read_labels(dir + "/l.smgm").data == labels.data);
}

TEST_CASE("read-then-write reproduces the file byte for byte", "[io]") {
  const std::string dir = scratch();
  io::write_map(dir + "/a.smgm", f32_field(6, 10, 2, 4), io::MapKind::velocity);
  const auto original = slurp(dir + "/a.smgm");
  io::write_map(dir + "/b.smgm", io::read_vector(dir + "/a.smgm"),
                io::MapKind::velocity);
  REQUIRE(slurp(dir + "/b.smgm") == original);
}

TEST_CASE("grid map readers reject corrupted files", "[io]") {
  const std::string dir = scratch();
  io::write_map(dir + "/ok.smgm", f32_field(4, 6, 1, 5), io::MapKind::feature);
  const auto good = slurp(dir + "/ok.smgm");

  auto mutate = [&](std::size_t pos, unsigned char value) {
    auto bad = good;
    bad[pos] = value;
    dump(dir + "/bad.smgm", bad);
  };

  mutate(0, 'X');  // magic
  REQUIRE_THROWS_AS(io::read_map(dir + "/bad.smgm"), IoError);
  mutate(4, 0xFF);  // version
  REQUIRE_THROWS_AS(io::read_map(dir + "/bad.smgm"), IoError);
  mutate(6, 99);  // kind
  REQUIRE_THROWS_AS(io::read_map(dir + "/bad.smgm"), IoError);
  mutate(20, good[20] ^ 0x01);  // one payload bit
  REQUIRE_THROWS_AS(io::read_map(dir + "/bad.smgm"), IoError);

  auto truncated = good;
  truncated.resize(truncated.size() - 3);
  dump(dir + "/bad.smgm", truncated);
  REQUIRE_THROWS_AS(io::read_map(dir + "/bad.smgm"), ShapeError);

  REQUIRE_THROWS_AS(io::read_map(dir + "/missing.smgm"), IoError);
}

TEST_CASE("map writers enforce the kind/channel contract", "[io]") {
  const std::string dir = scratch();
  const Field<double> one = f32_field(4, 6, 1, 6);
  REQUIRE_THROWS_AS(io::write_map(dir + "/x.smgm", one, io::MapKind::label),
                    ShapeError);
  REQUIRE_THROWS_AS(io::write_map(dir + "/x.smgm", one, io::MapKind::velocity),
                    ShapeError);
  REQUIRE_THROWS_AS(
      io::write_map(dir + "/x.smgm", one, io::MapKind::deformation),
      ShapeError);

  io::write_map(dir + "/f.smgm", one, io::MapKind::feature);
  REQUIRE_THROWS_AS(io::read_labels(dir + "/f.smgm"), ShapeError);
  REQUIRE_THROWS_AS(io::read_vector(dir + "/f.smgm"), ShapeError);
  LabelMap labels(4, 6, 1);
  io::write_labels(dir + "/l.smgm", labels);
  REQUIRE_THROWS_AS(io::read_values(dir + "/l.smgm"), ShapeError);
}

TEST_CASE("named tensors round-trip and validate", "[io]") {
  const std::string dir = scratch();
  std::vector<io::NamedTensor> tensors(2);
  tensors[0].name = "w";
  tensors[0].dims = {2, 3};
  tensors[0].data = {1.0, -2.5, 3.25, 4.0, 0.125, -6.5};
  tensors[1].name = "b";
  tensors[1].dims = {3};
  tensors[1].data = {0.0, 1e-300, -1.0};
  io::save_tensors(dir + "/t.smwt", tensors);
  const auto loaded = io::load_tensors(dir + "/t.smwt");
  REQUIRE(loaded.size() == 2);
  REQUIRE(loaded[0].name == "w");
  REQUIRE(loaded[0].dims == tensors[0].dims);
  REQUIRE(loaded[0].data == tensors[0].data);
  REQUIRE(loaded[1].data == tensors[1].data);

  io::NamedTensor bad;
  bad.name = "bad";
  bad.dims = {2, 2};
  bad.data = {1.0};
  REQUIRE_THROWS_AS(io::save_tensors(dir + "/x.smwt", {bad}), ShapeError);

  auto bytes = slurp(dir + "/t.smwt");
  bytes[0] = 'X';
  dump(dir + "/bad.smwt", bytes);
  REQUIRE_THROWS_AS(io::load_tensors(dir + "/bad.smwt"), IoError);
  bytes = slurp(dir + "/t.smwt");
  bytes[bytes.size() - 6] ^= 0x10;
  dump(dir + "/bad.smwt", bytes);
  REQUIRE_THROWS_AS(io::load_tensors(dir + "/bad.smwt"), IoError);
}

TEST_CASE("network weights survive a save/load cycle unchanged", "[io]") {
  const std::string dir = scratch();
  const SphereGrid g = make_grid(16, 32);
  reg::SphericalUNet net = reg::build_unet(g, {16, 32, 32, 32}, 2, 9);
  // Nonzero heads so the round trip is not trivially zeros.
  std::mt19937_64 rng(10);
  std::normal_distribution<double> nd(0.0, 0.1);
  for (double& w : net.head_mu.w) w = nd(rng);
  io::save_unet(dir + "/net.smwt", net);
  const reg::SphericalUNet back = io::load_unet(dir + "/net.smwt");
  REQUIRE(back.in_channels == net.in_channels);
  REQUIRE(back.widths == net.widths);
  std::vector<double> p0, p1;
  reg::unet_pack(net, p0);
  reg::unet_pack(back, p1);
  REQUIRE(p1 == p0);
}

TEST_CASE("run configs parse, validate, and round-trip", "[io]") {
  io::RunConfig cfg = io::parse_run_config(R"({
    "mode": "instance", "lambda": 42.0, "steps": 6, "iters": 50,
    "lr": 0.02, "sample_stochastic": true, "seed": 7,
    "multires_levels": 2, "rigid": true, "rigid_coarse_step": 0.1,
    "moving": "m.smgm", "atlas_mean": "mean.smgm", "atlas_var": "var.smgm",
    "out_dir": "out"
  })");
  REQUIRE(cfg.reg.mode == reg::RegMode::instance);
  REQUIRE(cfg.reg.lambda == 42.0);
  REQUIRE(cfg.reg.steps == 6);
  REQUIRE(cfg.reg.sample_stochastic);
  REQUIRE(cfg.reg.seed == 7);
  REQUIRE(cfg.reg.rigid);
  REQUIRE(cfg.moving == "m.smgm");

  const io::RunConfig again = io::parse_run_config(io::run_config_to_json(cfg));
  REQUIRE(again.reg.lambda == cfg.reg.lambda);
  REQUIRE(again.reg.mode == cfg.reg.mode);
  REQUIRE(again.out_dir == cfg.out_dir);

  REQUIRE_THROWS_AS(io::parse_run_config("not json"), ConfigError);
  REQUIRE_THROWS_AS(io::parse_run_config("[1,2]"), ConfigError);
  REQUIRE_THROWS_AS(io::parse_run_config(R"({"lamda": 1.0})"), ConfigError);
  REQUIRE_THROWS_AS(io::parse_run_config(R"({"lambda": "big"})"), ConfigError);
  REQUIRE_THROWS_AS(io::parse_run_config(R"({"seed": -3})"), ConfigError);
  REQUIRE_THROWS_AS(io::parse_run_config(R"({"mode": "magic"})"), ConfigError);
  REQUIRE_THROWS_AS(io::parse_run_config(R"({"lambda": -1.0})"), ConfigError);
  REQUIRE_THROWS_AS(io::parse_run_config(R"({"iters": 0})"), ConfigError);
}

TEST_CASE("provenance sidecars are deterministic and complete", "[io]") {
  const std::string dir = scratch();
  io::write_provenance(dir + "/out.smgm", "sphereg register --moving m", 123,
                       9);
  const auto first = slurp(dir + "/out.smgm.prov.json");
  io::write_provenance(dir + "/out.smgm", "sphereg register --moving m", 123,
                       9);
  REQUIRE(slurp(dir + "/out.smgm.prov.json") == first);

  const auto j = nlohmann::json::parse(first.begin(), first.end());
  REQUIRE(j["command"] == "sphereg register --moving m");
  REQUIRE(j["config_crc32"] == 123);
  REQUIRE(j["seed"] == 9);
  REQUIRE(j["format_version"] == io::kFormatVersion);
  REQUIRE(j["library_version"] == io::kLibraryVersion);
}

TEST_CASE("atomic writes leave no temp file behind", "[io]") {
  const std::string dir = scratch();
  io::atomic_write(dir + "/x.txt", std::string("payload"));
  REQUIRE(fs::exists(dir + "/x.txt"));
  REQUIRE_FALSE(fs::exists(dir + "/x.txt.tmp"));
  std::size_t count = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    (void)e;
    ++count;
  }
  REQUIRE(count == 1);
}

TEST_CASE("text maps round-trip doubles exactly and reject bad shapes",
          "[io]") {
  const std::string dir = scratch();
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0.0, 1.0);
  Field<double> f(3, 5, 2);
  for (double& x : f.data) x = nd(rng);
  io::write_text_map(dir + "/m.txt", f);
  const Field<double> back = io::read_text_map(dir + "/m.txt");
  REQUIRE(back.rows == 3);
  REQUIRE(back.cols == 5);
  REQUIRE(back.channels == 2);
  REQUIRE(back.data == f.data);

  io::atomic_write(dir + "/bad.txt", std::string("oops"));
  REQUIRE_THROWS_AS(io::read_text_map(dir + "/bad.txt"), IoError);
  io::atomic_write(dir + "/bad.txt", std::string("2 2 1\n1 2 3"));
  REQUIRE_THROWS_AS(io::read_text_map(dir + "/bad.txt"), IoError);
  io::atomic_write(dir + "/bad.txt", std::string("2 2 1\n1 2 3 4 5"));
  REQUIRE_THROWS_AS(io::read_text_map(dir + "/bad.txt"), IoError);
  io::atomic_write(dir + "/bad.txt", std::string("0 2 1\n"));
  REQUIRE_THROWS_AS(io::read_text_map(dir + "/bad.txt"), ShapeError);
}
