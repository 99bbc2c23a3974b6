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

// Command-line driver. Exit codes: 0 success, 2 argument parsing, 3 config,
// 4 I/O, 5 numeric failure, 6 shape mismatch. Errors print a single
// machine-parsable line: error category=<cat> msg=<message>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sphereg/sphereg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sphereg;

namespace {

int exit_code_for(const Error& e) {
  const std::string cat = e.category();
  if (cat == "config") return 3;
  if (cat == "io") return 4;
  if (cat == "numeric") return 5;
  return 6;  // shape
}

SphereGrid parse_grid_arg(const std::string& s) {
  const auto x = s.find_first_of("xX");
  if (x == std::string::npos || x == 0 || x + 1 >= s.size()) {
    throw ConfigError("config: --grid expects MxN, got '" + s + "'");
  }
  std::size_t rows = 0, cols = 0;
  try {
    rows = std::stoul(s.substr(0, x));
    cols = std::stoul(s.substr(x + 1));
  } catch (const std::exception&) {
    throw ConfigError("config: --grid expects MxN, got '" + s + "'");
  }
  return make_grid(rows, cols);
}

std::string join_command(int argc, char** argv) {
  std::string cmd;
  for (int k = 0; k < argc; ++k) {
    if (k) cmd += ' ';
    cmd += argv[k];
  }
  return cmd;
}

std::string subject_path(const std::string& dir, std::size_t k,
                         const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "subject_%03zu_%s.smgm", k, suffix);
  return dir + "/" + buf;
}

likelihood::Atlas load_atlas(const std::string& mean_path,
                             const std::string& var_path,
                             const std::string& mask_path) {
  Field<double> mean = io::read_values(mean_path);
  Field<double> var = io::read_values(var_path);
  Field<double> mask;
  if (!mask_path.empty()) mask = io::read_values(mask_path);
  return likelihood::make_atlas(std::move(mean), std::move(var),
                                std::move(mask));
}

json report_json(const SphereGrid& g, const reg::RegistrationResult& res,
                 const reg::RegistrationConfig& cfg) {
  json j;
  j["mode"] = reg::mode_name(cfg.mode);
  j["lambda"] = cfg.lambda;
  j["iterations"] = res.diagnostics.iterations;
  if (!res.loss_trace.empty()) {
    j["loss_first"] = res.loss_trace.front();
    j["loss_last"] = res.loss_trace.back();
    j["loss_trace"] = res.loss_trace;
  }
  j["mean_displacement_rad"] = synth::mean_displacement(g, res.phi);
  j["fraction_nonpositive_jacobian"] = res.diagnostics.fraction_nonpositive;
  j["clamped_samples"] = res.diagnostics.clamped_samples;
  j["rigid_alpha"] = res.diagnostics.rigid_alpha;
  j["rigid_beta"] = res.diagnostics.rigid_beta;
  j["wall_time_s"] = res.diagnostics.wall_time_s;
  return j;
}

void write_registration_outputs(const std::string& out_dir,
                                const SphereGrid& g, const FeatureMap& moving,
                                const reg::RegistrationResult& res,
                                const reg::RegistrationConfig& cfg,
                                const std::string& command,
                                std::uint32_t config_crc) {
  fs::create_directories(out_dir);
  const std::vector<std::pair<std::string, int>> outputs = {
      {out_dir + "/phi.smgm", 0},
      {out_dir + "/phi_inv.smgm", 1},
      {out_dir + "/mu.smgm", 2},
      {out_dir + "/sigma2.smgm", 3},
      {out_dir + "/warped_features.smgm", 4},
  };
  io::write_map(outputs[0].first, res.phi, io::MapKind::deformation);
  io::write_map(outputs[1].first, res.phi_inv, io::MapKind::deformation);
  io::write_map(outputs[2].first, res.mu, io::MapKind::velocity);
  io::write_map(outputs[3].first, res.sigma2, io::MapKind::variance);
  const Field<double> warped = ops::sample_periodic(g, moving, res.phi);
  io::write_map(outputs[4].first, warped, io::MapKind::feature);
  const std::string report_path = out_dir + "/report.json";
  io::atomic_write(report_path, report_json(g, res, cfg).dump(2) + "\n");
  for (const auto& [path, tag] : outputs) {
    io::write_provenance(path, command, config_crc, cfg.seed);
  }
  io::write_provenance(report_path, command, config_crc, cfg.seed);
}

// ---------------------------------------------------------------------------
// synth

struct SynthOpts {
  std::string grid = "64x128";
  std::size_t subjects = 20;
  double amplitude = 0.15;
  int smoothness = 4;
  std::size_t regions = 12;
  std::uint64_t seed = 7;
  std::string window = "none";
  std::string out;
};

int run_synth(const SynthOpts& o, const std::string& command) {
  const SphereGrid g = parse_grid_arg(o.grid);
  synth::LatWindow window;
  if (o.window == "none") {
    window = synth::LatWindow::none;
  } else if (o.window == "polar") {
    window = synth::LatWindow::polar;
  } else {
    throw ConfigError("config: --window must be none or polar");
  }
  fs::create_directories(o.out);
  const synth::Template tmpl = synth::make_template(g, o.regions, o.seed,
                                                    window);
  io::write_map(o.out + "/template_features.smgm", tmpl.features,
                io::MapKind::feature);
  io::write_labels(o.out + "/template_labels.smgm", tmpl.labels);

  FeatureMap mean(g.rows, g.cols, 1);
  std::vector<FeatureMap> features;
  features.reserve(o.subjects);
  for (std::size_t k = 0; k < o.subjects; ++k) {
    const synth::SyntheticSubject s =
        synth::make_subject(g, tmpl, o.amplitude, o.smoothness, o.seed + 1 + k);
    io::write_map(subject_path(o.out, k, "features"), s.features,
                  io::MapKind::feature);
    io::write_labels(subject_path(o.out, k, "labels"), s.labels);
    io::write_map(subject_path(o.out, k, "truth"), s.true_phi,
                  io::MapKind::deformation);
    for (std::size_t n = 0; n < mean.data.size(); ++n) {
      mean.data[n] += s.features.data[n];
    }
    features.push_back(s.features);
  }
  const double inv = 1.0 / static_cast<double>(o.subjects);
  for (double& x : mean.data) x *= inv;
  FeatureMap var(g.rows, g.cols, 1);
  for (const auto& f : features) {
    for (std::size_t n = 0; n < var.data.size(); ++n) {
      const double r = f.data[n] - mean.data[n];
      var.data[n] += r * r;
    }
  }
  for (double& x : var.data) x *= inv;
  io::write_map(o.out + "/atlas_mean.smgm", mean, io::MapKind::feature);
  io::write_map(o.out + "/atlas_var.smgm", var, io::MapKind::variance);

  json manifest;
  manifest["grid"] = {g.rows, g.cols};
  manifest["subjects"] = o.subjects;
  manifest["amplitude"] = o.amplitude;
  manifest["smoothness"] = o.smoothness;
  manifest["regions"] = o.regions;
  manifest["seed"] = o.seed;
  manifest["window"] = o.window;
  const std::string manifest_path = o.out + "/dataset.json";
  io::atomic_write(manifest_path, manifest.dump(2) + "\n");
  io::write_provenance(manifest_path, command, 0, o.seed);
  std::cout << "synth: wrote " << o.subjects << " subjects on " << g.rows
            << "x" << g.cols << " to " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// register

struct RegisterOpts {
  std::string moving, atlas_mean, atlas_var, atlas_mask;
  std::string config_path;
  std::string out;
  std::string mode;
  double lambda = -1.0;
  int iters = -1;
  int steps = -1;
  double lr = -1.0;
  std::int64_t seed = -1;
  int multires = -1;
  bool rigid = false;
  bool stochastic = false;
};

int run_register(const RegisterOpts& o, const std::string& command) {
  io::RunConfig rc;
  std::uint32_t config_crc = 0;
  if (!o.config_path.empty()) {
    const auto bytes = io::read_file(o.config_path);
    config_crc = io::crc32(bytes.data(), bytes.size());
    rc = io::parse_run_config(
        std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  }
  if (!o.moving.empty()) rc.moving = o.moving;
  if (!o.atlas_mean.empty()) rc.atlas_mean = o.atlas_mean;
  if (!o.atlas_var.empty()) rc.atlas_var = o.atlas_var;
  if (!o.atlas_mask.empty()) rc.atlas_mask = o.atlas_mask;
  if (!o.out.empty()) rc.out_dir = o.out;
  if (!o.mode.empty()) rc.reg.mode = io::parse_mode(o.mode);
  if (o.lambda > 0.0) rc.reg.lambda = o.lambda;
  if (o.iters > 0) rc.reg.iters = o.iters;
  if (o.steps > 0) rc.reg.steps = o.steps;
  if (o.lr > 0.0) rc.reg.lr = o.lr;
  if (o.seed >= 0) rc.reg.seed = static_cast<std::uint64_t>(o.seed);
  if (o.multires > 0) rc.reg.multires_levels = o.multires;
  if (o.rigid) rc.reg.rigid = true;
  if (o.stochastic) rc.reg.sample_stochastic = true;
  if (rc.moving.empty() || rc.atlas_mean.empty() || rc.atlas_var.empty() ||
      rc.out_dir.empty()) {
    throw ConfigError(
        "config: register needs --moving, --atlas-mean, --atlas-var, --out "
        "(flags or config file)");
  }
  if (rc.reg.mode == reg::RegMode::amortized) {
    throw ConfigError("config: amortized mode is driven by `predict`");
  }

  const FeatureMap moving = io::read_values(rc.moving);
  const likelihood::Atlas atlas =
      load_atlas(rc.atlas_mean, rc.atlas_var, rc.atlas_mask);
  const SphereGrid g = make_grid(moving.rows, moving.cols);
  const reg::RegistrationResult res =
      reg::register_instance(g, moving, atlas, rc.reg);
  write_registration_outputs(rc.out_dir, g, moving, res, rc.reg, command,
                             config_crc);
  std::cout << "register: iters=" << res.diagnostics.iterations
            << " loss=" << (res.loss_trace.empty() ? 0.0
                                                   : res.loss_trace.back())
            << " mean_displacement_rad="
            << synth::mean_displacement(g, res.phi)
            << " wall_time_s=" << res.diagnostics.wall_time_s << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  std::string data;
  std::string out;
  int epochs = 100;
  double lambda = reg::kLambdaSyntheticDefault;
  int steps = 7;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::string widths = "16,32,32,32";
};

std::vector<std::size_t> parse_widths(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw ConfigError("config: --widths expects comma-separated integers");
    }
  }
  return out;
}

json read_manifest(const std::string& dir) {
  const auto bytes = io::read_file(dir + "/dataset.json");
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw IoError("io: " + dir + "/dataset.json: " + e.what());
  }
  if (!j.contains("subjects") || !j["subjects"].is_number_integer()) {
    throw IoError("io: " + dir + "/dataset.json: missing subject count");
  }
  return j;
}

int run_train(const TrainOpts& o, const std::string& command) {
  const json manifest = read_manifest(o.data);
  const std::size_t n_subjects = manifest["subjects"].get<std::size_t>();
  const likelihood::Atlas atlas = load_atlas(
      o.data + "/atlas_mean.smgm", o.data + "/atlas_var.smgm", "");
  const SphereGrid g = make_grid(atlas.mean.rows, atlas.mean.cols);
  std::vector<FeatureMap> movings;
  movings.reserve(n_subjects);
  for (std::size_t k = 0; k < n_subjects; ++k) {
    movings.push_back(io::read_values(subject_path(o.data, k, "features")));
  }
  reg::RegistrationConfig cfg;
  cfg.mode = reg::RegMode::amortized;
  cfg.lambda = o.lambda;
  cfg.steps = o.steps;
  cfg.lr = o.lr;
  cfg.seed = o.seed;
  cfg.sample_stochastic = !o.deterministic;
  reg::SphericalUNet net =
      reg::build_unet(g, parse_widths(o.widths), 2, o.seed);
  const reg::TrainReport report =
      reg::train_amortized(g, net, movings, atlas, cfg, o.epochs);
  fs::create_directories(o.out);
  const std::string weights_path = o.out + "/weights.smwt";
  io::save_unet(weights_path, net);
  io::write_provenance(weights_path, command, 0, o.seed);
  json rj;
  rj["epochs"] = o.epochs;
  rj["epoch_loss"] = report.epoch_loss;
  rj["lambda"] = o.lambda;
  rj["lr"] = o.lr;
  rj["seed"] = o.seed;
  const std::string report_path = o.out + "/train_report.json";
  io::atomic_write(report_path, rj.dump(2) + "\n");
  io::write_provenance(report_path, command, 0, o.seed);
  for (int e = 0; e < o.epochs; ++e) {
    std::cout << "epoch " << (e + 1) << " loss="
              << report.epoch_loss[static_cast<std::size_t>(e)] << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictOpts {
  std::string moving, atlas_mean, atlas_var, atlas_mask, weights, out;
  int steps = 7;
};

int run_predict(const PredictOpts& o, const std::string& command) {
  const FeatureMap moving = io::read_values(o.moving);
  const likelihood::Atlas atlas =
      load_atlas(o.atlas_mean, o.atlas_var, o.atlas_mask);
  const SphereGrid g = make_grid(moving.rows, moving.cols);
  const reg::SphericalUNet net = io::load_unet(o.weights);
  const reg::RegistrationResult res =
      reg::predict_amortized(net, g, moving, atlas, o.steps);
  reg::RegistrationConfig cfg;
  cfg.mode = reg::RegMode::amortized;
  cfg.steps = o.steps;
  write_registration_outputs(o.out, g, moving, res, cfg, command, 0);
  std::cout << "predict: wall_time_s=" << res.diagnostics.wall_time_s
            << " mean_displacement_rad="
            << synth::mean_displacement(g, res.phi) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// warp

struct WarpOpts {
  std::string input, phi, out;
  bool nearest = false;
};

int run_warp(const WarpOpts& o, const std::string& command) {
  const VectorField phi = io::read_vector(o.phi);
  const io::LoadedMap in = io::read_map(o.input);
  const std::size_t rows = in.is_label() ? in.labels.rows : in.values.rows;
  const std::size_t cols = in.is_label() ? in.labels.cols : in.values.cols;
  const SphereGrid g = make_grid(rows, cols);
  if (in.is_label()) {
    const LabelMap warped = ops::warp_labels(g, in.labels, phi);
    io::write_labels(o.out, warped);
  } else {
    const Field<double> warped = ops::sample_periodic(
        g, in.values, phi,
        o.nearest ? ops::Interp::nearest : ops::Interp::bilinear);
    io::write_map(o.out, warped, in.kind);
  }
  io::write_provenance(o.out, command, 0, 0);
  std::cout << "warp: wrote " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOpts {
  std::string labels_a, labels_b, phi, out;
  double radius_mm = 100.0;
};

int run_evaluate(const EvaluateOpts& o, const std::string& command) {
  const LabelMap a = io::read_labels(o.labels_a);
  const LabelMap b = io::read_labels(o.labels_b);
  const SphereGrid g = make_grid(a.rows, a.cols);
  std::optional<VectorField> phi;
  if (!o.phi.empty()) phi = io::read_vector(o.phi);
  const metrics::MetricReport r =
      metrics::make_report(g, a, b, phi ? &*phi : nullptr, o.radius_mm);
  json j;
  j["overall_dice"] = r.overall_dice;
  j["overall_mmd_rad"] = r.overall_mmd_rad;
  j["overall_mmd_mm"] = r.overall_mmd_mm;
  j["sphere_radius_mm"] = r.sphere_radius_mm;
  json pd = json::object(), pm = json::object();
  for (const auto& [label, v] : r.per_region_dice) {
    pd[std::to_string(label)] = v;
  }
  for (const auto& [label, v] : r.per_region_mmd) {
    pm[std::to_string(label)] = v;
  }
  j["per_region_dice"] = pd;
  j["per_region_mmd_rad"] = pm;
  if (r.has_jacobian) {
    j["jacobian"] = {{"min", r.jacobian.min},
                     {"max", r.jacobian.max},
                     {"mean", r.jacobian.mean},
                     {"fraction_nonpositive", r.jacobian.fraction_nonpositive}};
  }
  if (!o.out.empty()) {
    io::atomic_write(o.out, j.dump(2) + "\n");
    io::write_provenance(o.out, command, 0, 0);
  }
  std::cout << "evaluate: dice=" << r.overall_dice
            << " mmd_mm=" << r.overall_mmd_mm << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck: adjoint verification for every differentiable operator.

struct CheckLine {
  std::string name;
  double err;
  double tol;
};

int run_gradcheck() {
  std::vector<CheckLine> lines;
  auto record = [&](const std::string& name, double err, double tol) {
    lines.push_back({name, err, tol});
  };
  const SphereGrid g = make_grid(8, 16);
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd(0.0, 1.0);
  auto rand_vec = [&](std::size_t n, double scale) {
    std::vector<double> v(n);
    for (double& x : v) x = scale * nd(rng);
    return v;
  };
  const std::size_t plane = g.rows * g.cols;

  // Fixed random projections make each op a scalar function.
  const std::vector<double> c1 = rand_vec(plane, 1.0);
  const std::vector<double> c2 = rand_vec(2 * plane, 1.0);

  // Atlas for the data term.
  FeatureMap atlas_mean(g.rows, g.cols, 1), atlas_var(g.rows, g.cols, 1);
  for (std::size_t k = 0; k < plane; ++k) {
    atlas_mean.data[k] = nd(rng);
    atlas_var.data[k] = 0.5 + 0.4 * std::abs(nd(rng));
  }
  const likelihood::Atlas atlas =
      likelihood::make_atlas(atlas_mean, atlas_var);

  // data_term w.r.t. warped values (linear gradient).
  {
    auto f = [&](const std::vector<double>& x) {
      FeatureMap w(g.rows, g.cols, 1);
      w.data = x;
      return likelihood::data_term(g, w, atlas);
    };
    auto grad = [&](const std::vector<double>& x) {
      FeatureMap w(g.rows, g.cols, 1);
      w.data = x;
      return likelihood::data_term_grad(g, w, atlas).data;
    };
    // Quadratic in the warped values: central differences are exact at any
    // step, so a large step avoids cancellation noise.
    record("data_term", ops::grad_check(f, grad, rand_vec(plane, 1.0), 0.5),
           1e-9);
  }

  // Sampler, map path (linear).
  {
    VectorField d0(g.rows, g.cols);
    for (double& x : d0.data) x = 0.13 * nd(rng);
    auto f = [&](const std::vector<double>& x) {
      Field<double> m(g.rows, g.cols, 1);
      m.data = x;
      const auto out = ops::sample_periodic(g, m, d0);
      double acc = 0.0;
      for (std::size_t k = 0; k < plane; ++k) acc += c1[k] * out.data[k];
      return acc;
    };
    auto grad = [&](const std::vector<double>& x) {
      Field<double> m(g.rows, g.cols, 1);
      m.data = x;
      Field<double> up(g.rows, g.cols, 1);
      up.data = c1;
      return ops::sample_periodic_vjp(g, m, d0, up).first.data;
    };
    // Linear in the map values: any step is exact, large beats rounding.
    record("sampler_map", ops::grad_check(f, grad, rand_vec(plane, 1.0), 0.5),
           1e-9);
  }

  // Sampler, coordinate path (piecewise-linear kinks allowed in tolerance).
  {
    Field<double> m(g.rows, g.cols, 1);
    for (std::size_t i = 0; i < g.rows; ++i) {
      for (std::size_t j = 0; j < g.cols; ++j) {
        m.at(0, i, j) = std::sin(g.lat[i]) * std::cos(2.0 * g.lon[j]) +
                        0.3 * std::cos(3.0 * g.lon[j]);
      }
    }
    auto f = [&](const std::vector<double>& x) {
      VectorField d(g.rows, g.cols);
      d.data = x;
      const auto out = ops::sample_periodic(g, m, d);
      double acc = 0.0;
      for (std::size_t k = 0; k < plane; ++k) acc += c1[k] * out.data[k];
      return acc;
    };
    auto grad = [&](const std::vector<double>& x) {
      VectorField d(g.rows, g.cols);
      d.data = x;
      Field<double> up(g.rows, g.cols, 1);
      up.data = c1;
      return ops::sample_periodic_vjp(g, m, d, up).second.data;
    };
    record("sampler_coords",
           ops::grad_check(f, grad, rand_vec(2 * plane, 0.07), 1e-6), 1e-4);
  }

  // Scaling and squaring (velocity -> displacement, composite path).
  {
    auto f = [&](const std::vector<double>& x) {
      VectorField v(g.rows, g.cols);
      v.data = x;
      const auto phi = ops::scaling_and_squaring(g, v);
      double acc = 0.0;
      for (std::size_t k = 0; k < 2 * plane; ++k) acc += c2[k] * phi.data[k];
      return acc;
    };
    auto grad = [&](const std::vector<double>& x) {
      VectorField v(g.rows, g.cols);
      v.data = x;
      const auto tape = ops::scaling_and_squaring_tape(g, v);
      VectorField up(g.rows, g.cols);
      up.data = c2;
      return ops::scaling_and_squaring_vjp(g, tape, up).data;
    };
    record("scaling_and_squaring",
           ops::grad_check(f, grad, rand_vec(2 * plane, 0.06), 1e-6), 1e-4);
  }

  // Prior KL, mean path (smooth trig composition).
  const auto L = prior::build_weighted_laplacian(g);
  {
    Field<double> s2(g.rows, g.cols, 2);
    for (double& x : s2.data) x = 0.01 + 0.005 * std::abs(nd(rng));
    const Field<double> sc = prior::velocity_variance_to_cartesian(g, s2);
    auto f = [&](const std::vector<double>& x) {
      VectorField mu(g.rows, g.cols);
      mu.data = x;
      return prior::prior_kl_term(g, mu, sc, L, 10.0);
    };
    auto grad = [&](const std::vector<double>& x) {
      VectorField mu(g.rows, g.cols);
      mu.data = x;
      return prior::prior_kl_grad(g, mu, sc, L, 10.0).first.data;
    };
    record("prior_mu",
           ops::grad_check(f, grad, rand_vec(2 * plane, 0.1), 1e-6), 1e-6);
  }

  // Prior KL, variance path through the polar-to-Cartesian conversion.
  {
    VectorField mu0(g.rows, g.cols);
    for (double& x : mu0.data) x = 0.05 * nd(rng);
    // Variances near 1 keep the log term's cubic error below tolerance.
    std::vector<double> s0(2 * plane);
    for (double& x : s0) x = 1.0 + 0.3 * std::abs(nd(rng));
    auto f = [&](const std::vector<double>& x) {
      Field<double> s2(g.rows, g.cols, 2);
      s2.data = x;
      const auto sc = prior::velocity_variance_to_cartesian(g, s2);
      return prior::prior_kl_term(g, mu0, sc, L, 10.0);
    };
    auto grad = [&](const std::vector<double>& x) {
      Field<double> s2(g.rows, g.cols, 2);
      s2.data = x;
      const auto sc = prior::velocity_variance_to_cartesian(g, s2);
      const auto gs = prior::prior_kl_grad(g, mu0, sc, L, 10.0).second;
      return prior::velocity_variance_to_cartesian_vjp(g, gs).data;
    };
    record("prior_sigma", ops::grad_check(f, grad, s0, 1e-4), 1e-6);
  }

  // Spherical convolution: input path and weight path (both linear).
  {
    const auto off = ops::make_gnomonic_offsets(g);
    const std::size_t ci = 2, co = 3;
    const std::vector<double> w0 = rand_vec(co * ci * 9, 0.5);
    const std::vector<double> b0 = rand_vec(co, 0.1);
    const std::vector<double> x0 = rand_vec(ci * plane, 1.0);
    const std::vector<double> cp = rand_vec(co * plane, 1.0);
    auto scalarize = [&](const Field<double>& out) {
      double acc = 0.0;
      for (std::size_t k = 0; k < out.data.size(); ++k) {
        acc += cp[k] * out.data[k];
      }
      return acc;
    };
    Field<double> up(g.rows, g.cols, co);
    up.data = cp;
    auto fx = [&](const std::vector<double>& x) {
      Field<double> in(g.rows, g.cols, ci);
      in.data = x;
      return scalarize(ops::spherical_conv(g, off, in, w0, b0, co));
    };
    auto gx = [&](const std::vector<double>& x) {
      Field<double> in(g.rows, g.cols, ci);
      in.data = x;
      return std::get<0>(ops::spherical_conv_vjp(g, off, in, w0, co, up)).data;
    };
    record("conv_input", ops::grad_check(fx, gx, x0, 0.5), 1e-9);
    Field<double> in0(g.rows, g.cols, ci);
    in0.data = x0;
    auto fw = [&](const std::vector<double>& w) {
      return scalarize(ops::spherical_conv(g, off, in0, w, b0, co));
    };
    auto gw = [&](const std::vector<double>& w) {
      return std::get<1>(ops::spherical_conv_vjp(g, off, in0, w, co, up));
    };
    record("conv_weights", ops::grad_check(fw, gw, w0, 0.5), 1e-9);
  }

  // Pooling and upsampling (linear).
  {
    const std::vector<double> cq = rand_vec(plane / 4, 1.0);
    auto fp = [&](const std::vector<double>& x) {
      Field<double> in(g.rows, g.cols, 1);
      in.data = x;
      const auto out = ops::pool2(in);
      double acc = 0.0;
      for (std::size_t k = 0; k < out.data.size(); ++k) {
        acc += cq[k] * out.data[k];
      }
      return acc;
    };
    auto gp = [&](const std::vector<double>& x) {
      (void)x;
      Field<double> up(g.rows / 2, g.cols / 2, 1);
      up.data = cq;
      return ops::pool2_vjp(up, g.rows, g.cols).data;
    };
    record("pool2", ops::grad_check(fp, gp, rand_vec(plane, 1.0), 0.5), 1e-9);

    const std::vector<double> cu = rand_vec(plane, 1.0);
    auto fu = [&](const std::vector<double>& x) {
      Field<double> in(g.rows / 2, g.cols / 2, 1);
      in.data = x;
      const auto out = ops::upsample2(in);
      double acc = 0.0;
      for (std::size_t k = 0; k < out.data.size(); ++k) {
        acc += cu[k] * out.data[k];
      }
      return acc;
    };
    auto gu = [&](const std::vector<double>& x) {
      (void)x;
      Field<double> up(g.rows, g.cols, 1);
      up.data = cu;
      return ops::upsample2_vjp(up).data;
    };
    record("upsample2",
           ops::grad_check(fu, gu, rand_vec(plane / 4, 1.0), 0.5), 1e-9);
  }

  // Network end-to-end: scalar projection of both heads w.r.t. all weights.
  {
    const SphereGrid gu = make_grid(16, 32);
    reg::SphericalUNet net = reg::build_unet(gu, {4, 4, 4, 4}, 2, 5);
    // Zero-initialized heads have zero gradients into the trunk; perturb them.
    std::mt19937_64 hrng(17);
    std::normal_distribution<double> hn(0.0, 0.05);
    for (double& w : net.head_mu.w) w = hn(hrng);
    for (double& w : net.head_logvar.w) w = hn(hrng);
    Field<double> input(gu.rows, gu.cols, 2);
    for (double& x : input.data) x = hn(hrng) * 10.0;
    const std::size_t po = gu.rows * gu.cols;
    std::vector<double> cm(2 * po), cl(2 * po);
    for (double& x : cm) x = hn(hrng) * 10.0;
    for (double& x : cl) x = hn(hrng) * 10.0;
    std::vector<double> p0;
    reg::unet_pack(net, p0);
    auto f = [&](const std::vector<double>& p) {
      reg::SphericalUNet n2 = net;
      reg::unet_unpack(n2, p);
      const auto out = reg::unet_forward(n2, gu, input, nullptr);
      double acc = 0.0;
      for (std::size_t k = 0; k < 2 * po; ++k) {
        acc += cm[k] * out.mu.data[k] + cl[k] * out.logvar.data[k];
      }
      return acc;
    };
    auto grad = [&](const std::vector<double>& p) {
      reg::SphericalUNet n2 = net;
      reg::unet_unpack(n2, p);
      reg::UnetTape tape;
      (void)reg::unet_forward(n2, gu, input, &tape);
      Field<double> gm(gu.rows, gu.cols, 2), gl(gu.rows, gu.cols, 2);
      gm.data = cm;
      gl.data = cl;
      const auto ug = reg::unet_backward(n2, tape, gm, gl);
      std::vector<double> flat;
      reg::unet_pack_grads(ug, flat);
      return flat;
    };
    record("unet_params", ops::grad_check(f, grad, p0, 1e-5, 8), 1e-3);
  }

  // Full objective on 8x16: gradient w.r.t. mean and log-variance jointly.
  {
    FeatureMap mv(g.rows, g.cols, 1);
    for (std::size_t i = 0; i < g.rows; ++i) {
      for (std::size_t j = 0; j < g.cols; ++j) {
        mv.at(0, i, j) = std::sin(2.0 * g.lat[i]) * std::sin(g.lon[j]);
      }
    }
    reg::RegistrationConfig cfg;
    cfg.lambda = 5.0;
    cfg.sample_stochastic = true;  // score the variational bracket
    auto split = [&](const std::vector<double>& x, VectorField& mu,
                     Field<double>& s2) {
      mu = VectorField(g.rows, g.cols);
      s2 = Field<double>(g.rows, g.cols, 2);
      std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(2 * plane),
                mu.data.begin());
      for (std::size_t k = 0; k < 2 * plane; ++k) {
        s2.data[k] = std::exp(x[2 * plane + k]);
      }
    };
    auto f = [&](const std::vector<double>& x) {
      VectorField mu;
      Field<double> s2;
      split(x, mu, s2);
      return reg::detail::eval_loss(g, mv, atlas, L, cfg, mu, mu, s2, false)
          .total;
    };
    auto grad = [&](const std::vector<double>& x) {
      VectorField mu;
      Field<double> s2;
      split(x, mu, s2);
      const auto ev = reg::detail::eval_loss(g, mv, atlas, L, cfg, mu, mu, s2);
      std::vector<double> out(4 * plane);
      for (std::size_t k = 0; k < 2 * plane; ++k) {
        out[k] = ev.g_v.data[k] + ev.g_mu_prior.data[k];
        out[2 * plane + k] = ev.g_sigma2.data[k] * s2.data[k];
      }
      return out;
    };
    std::vector<double> x0(4 * plane);
    for (std::size_t k = 0; k < 2 * plane; ++k) x0[k] = 0.05 * nd(rng);
    for (std::size_t k = 2 * plane; k < 4 * plane; ++k) {
      x0[k] = -4.0 + 0.5 * nd(rng);
    }
    record("full_loss", ops::grad_check(f, grad, x0, 1e-5, 16), 1e-3);
  }

  bool all_ok = true;
  for (const auto& l : lines) {
    const bool ok = l.err < l.tol;
    all_ok = all_ok && ok;
    std::printf("gradcheck %-22s max_rel=%.3e tol=%.0e %s\n", l.name.c_str(),
                l.err, l.tol, ok ? "PASS" : "FAIL");
  }
  if (!all_ok) {
    std::cerr << "error category=numeric msg=gradient check failed\n";
    return 5;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// lambda-search: grid search over the prior weight, scored by mean Dice of
// instance registrations on a small synthetic validation set.

struct LambdaSearchOpts {
  std::string grid = "32x64";
  std::size_t subjects = 5;
  double amplitude = 0.15;
  int smoothness = 4;
  std::uint64_t seed = 7;
  int iters = 150;
  std::string lambdas = "1,10,100,1000,10000";
  std::string out;
};

int run_lambda_search(const LambdaSearchOpts& o, const std::string& command) {
  const SphereGrid g = parse_grid_arg(o.grid);
  std::vector<double> lambdas;
  {
    std::stringstream ss(o.lambdas);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        lambdas.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw ConfigError("config: --lambdas expects comma-separated numbers");
      }
    }
  }
  if (lambdas.empty()) throw ConfigError("config: empty lambda grid");

  const synth::Template tmpl = synth::make_template(g, 12, o.seed);
  std::vector<synth::SyntheticSubject> subjects;
  FeatureMap mean(g.rows, g.cols, 1);
  for (std::size_t k = 0; k < o.subjects; ++k) {
    subjects.push_back(
        synth::make_subject(g, tmpl, o.amplitude, o.smoothness, o.seed + 1 + k));
    for (std::size_t n = 0; n < mean.data.size(); ++n) {
      mean.data[n] += subjects.back().features.data[n];
    }
  }
  const double inv = 1.0 / static_cast<double>(o.subjects);
  for (double& x : mean.data) x *= inv;
  FeatureMap var(g.rows, g.cols, 1);
  for (const auto& s : subjects) {
    for (std::size_t n = 0; n < var.data.size(); ++n) {
      const double r = s.features.data[n] - mean.data[n];
      var.data[n] += r * r;
    }
  }
  for (double& x : var.data) x *= inv;
  const likelihood::Atlas atlas = likelihood::make_atlas(mean, var);

  double best_lambda = lambdas.front();
  double best_dice = -1.0;
  json results = json::array();
  for (double lambda : lambdas) {
    reg::RegistrationConfig cfg;
    cfg.lambda = lambda;
    cfg.iters = o.iters;
    cfg.seed = o.seed;
    double dice_sum = 0.0;
    for (const auto& s : subjects) {
      const auto res = reg::register_instance(g, s.features, atlas, cfg);
      const LabelMap warped = ops::warp_labels(g, s.labels, res.phi);
      dice_sum += metrics::dice_overall(g, warped, tmpl.labels);
    }
    const double mean_dice = dice_sum / static_cast<double>(o.subjects);
    std::cout << "lambda=" << lambda << " mean_dice=" << mean_dice << "\n";
    results.push_back({{"lambda", lambda}, {"mean_dice", mean_dice}});
    if (mean_dice > best_dice) {
      best_dice = mean_dice;
      best_lambda = lambda;
    }
  }
  std::cout << "best lambda=" << best_lambda << " mean_dice=" << best_dice
            << "\n";
  if (!o.out.empty()) {
    json j;
    j["results"] = results;
    j["best_lambda"] = best_lambda;
    j["best_mean_dice"] = best_dice;
    io::atomic_write(o.out, j.dump(2) + "\n");
    io::write_provenance(o.out, command, 0, o.seed);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "sphereg: diffeomorphic registration of scalar maps on the sphere"};
  app.require_subcommand(1);
  const std::string command = join_command(argc, argv);

  SynthOpts so;
  auto* synth_cmd =
      app.add_subcommand("synth", "Generate a synthetic dataset with truth");
  synth_cmd->add_option("--grid", so.grid, "Grid as MxN (rows x columns)");
  synth_cmd->add_option("--subjects", so.subjects, "Number of subjects");
  synth_cmd->add_option("--amplitude", so.amplitude,
                        "Max physical warp speed (radians)");
  synth_cmd->add_option("--smoothness", so.smoothness,
                        "Velocity band limit (max harmonic degree)");
  synth_cmd->add_option("--regions", so.regions, "Number of parcels");
  synth_cmd->add_option("--seed", so.seed, "Random seed");
  synth_cmd->add_option("--window", so.window,
                        "Feature latitude window: none|polar");
  synth_cmd->add_option("--out", so.out, "Output directory")->required();

  RegisterOpts ro;
  auto* reg_cmd =
      app.add_subcommand("register", "Instance-mode registration to an atlas");
  reg_cmd->add_option("--moving", ro.moving, "Moving feature map");
  reg_cmd->add_option("--atlas-mean", ro.atlas_mean, "Atlas mean map");
  reg_cmd->add_option("--atlas-var", ro.atlas_var, "Atlas variance map");
  reg_cmd->add_option("--atlas-mask", ro.atlas_mask, "Optional 0/1 mask map");
  reg_cmd->add_option("--config", ro.config_path, "JSON config file");
  reg_cmd->add_option("--out", ro.out, "Output directory");
  reg_cmd->add_option("--mode", ro.mode,
                      "instance|voxelmorph2d-ablation (default instance)");
  reg_cmd->add_option("--lambda", ro.lambda, "Prior weight");
  reg_cmd->add_option("--iters", ro.iters, "Max optimizer iterations");
  reg_cmd->add_option("--steps", ro.steps, "Scaling-and-squaring steps");
  reg_cmd->add_option("--lr", ro.lr, "Learning rate");
  reg_cmd->add_option("--seed", ro.seed, "Random seed");
  reg_cmd->add_option("--multires", ro.multires, "Resolution levels");
  reg_cmd->add_flag("--rigid", ro.rigid, "Rotation search before optimizing");
  reg_cmd->add_flag("--stochastic", ro.stochastic,
                    "Sample the posterior during optimization");

  TrainOpts to;
  auto* train_cmd =
      app.add_subcommand("train", "Train the amortized predictor");
  train_cmd->add_option("--data", to.data, "Dataset directory from `synth`")
      ->required();
  train_cmd->add_option("--out", to.out, "Output directory")->required();
  train_cmd->add_option("--epochs", to.epochs, "Training epochs");
  train_cmd->add_option("--lambda", to.lambda, "Prior weight");
  train_cmd->add_option("--steps", to.steps, "Scaling-and-squaring steps");
  train_cmd->add_option("--lr", to.lr, "Learning rate");
  train_cmd->add_option("--seed", to.seed, "Random seed");
  train_cmd->add_flag("--deterministic", to.deterministic,
                      "Disable reparameterized velocity draws (default on)");
  train_cmd->add_option("--widths", to.widths,
                        "Encoder widths, comma-separated");

  PredictOpts po;
  auto* predict_cmd =
      app.add_subcommand("predict", "One-shot amortized registration");
  predict_cmd->add_option("--moving", po.moving, "Moving feature map")
      ->required();
  predict_cmd->add_option("--atlas-mean", po.atlas_mean, "Atlas mean map")
      ->required();
  predict_cmd->add_option("--atlas-var", po.atlas_var, "Atlas variance map")
      ->required();
  predict_cmd->add_option("--atlas-mask", po.atlas_mask, "Optional mask map");
  predict_cmd->add_option("--weights", po.weights, "Weight file from `train`")
      ->required();
  predict_cmd->add_option("--out", po.out, "Output directory")->required();
  predict_cmd->add_option("--steps", po.steps, "Scaling-and-squaring steps");

  WarpOpts wo;
  auto* warp_cmd =
      app.add_subcommand("warp", "Apply a stored displacement to a map");
  warp_cmd->add_option("--input", wo.input, "Feature or label map")
      ->required();
  warp_cmd->add_option("--phi", wo.phi, "Displacement field file")->required();
  warp_cmd->add_option("--out", wo.out, "Output file")->required();
  warp_cmd->add_flag("--nearest", wo.nearest,
                     "Nearest-neighbor for value maps");

  EvaluateOpts eo;
  auto* eval_cmd =
      app.add_subcommand("evaluate", "Overlap and distortion metrics");
  eval_cmd->add_option("--labels-a", eo.labels_a, "First label map")
      ->required();
  eval_cmd->add_option("--labels-b", eo.labels_b, "Second label map")
      ->required();
  eval_cmd->add_option("--phi", eo.phi,
                       "Optional displacement for Jacobian stats");
  eval_cmd->add_option("--radius-mm", eo.radius_mm,
                       "Sphere radius for mm-scaled distances");
  eval_cmd->add_option("--out", eo.out, "Metric report JSON path");

  auto* grad_cmd = app.add_subcommand(
      "gradcheck", "Verify every adjoint against finite differences");

  LambdaSearchOpts lo;
  auto* lam_cmd = app.add_subcommand(
      "lambda-search", "Grid-search the prior weight on synthetic data");
  lam_cmd->add_option("--grid", lo.grid, "Grid as MxN");
  lam_cmd->add_option("--subjects", lo.subjects, "Validation subjects");
  lam_cmd->add_option("--amplitude", lo.amplitude, "Warp amplitude");
  lam_cmd->add_option("--smoothness", lo.smoothness, "Velocity band limit");
  lam_cmd->add_option("--seed", lo.seed, "Random seed");
  lam_cmd->add_option("--iters", lo.iters, "Iterations per registration");
  lam_cmd->add_option("--lambdas", lo.lambdas, "Comma-separated grid");
  lam_cmd->add_option("--out", lo.out, "Optional results JSON path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error category=parse msg=" << e.what() << "\n";
    return 2;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(so, command);
    if (reg_cmd->parsed()) return run_register(ro, command);
    if (train_cmd->parsed()) return run_train(to, command);
    if (predict_cmd->parsed()) return run_predict(po, command);
    if (warp_cmd->parsed()) return run_warp(wo, command);
    if (eval_cmd->parsed()) return run_evaluate(eo, command);
    if (grad_cmd->parsed()) return run_gradcheck();
    if (lam_cmd->parsed()) return run_lambda_search(lo, command);
  } catch (const Error& e) {
    std::cerr << "error category=" << e.category() << " msg=" << e.what()
              << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error category=internal msg=" << e.what() << "\n";
    return 1;
  }
  return 0;
}
