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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sphereg/errors.hpp"
#include "sphereg/field.hpp"
#include "sphereg/gnomonic.hpp"
#include "sphereg/integrate.hpp"
#include "sphereg/laplacian.hpp"
#include "sphereg/likelihood.hpp"
#include "sphereg/metrics.hpp"
#include "sphereg/optimizer.hpp"
#include "sphereg/sampler.hpp"
#include "sphereg/sphere_grid.hpp"
#include "sphereg/unet.hpp"

namespace sphereg::reg {

enum class RegMode {
  instance,              // per-pair MAP optimization, full objective
  amortized,             // network-predicted velocity, full objective
  voxelmorph2d_ablation  // uniform data weights + unweighted Laplacian
};

inline const char* mode_name(RegMode m) {
  switch (m) {
    case RegMode::instance: return "instance";
    case RegMode::amortized: return "amortized";
    case RegMode::voxelmorph2d_ablation: return "voxelmorph2d-ablation";
  }
  return "?";
}

// kLambdaFullScale is the published operating point for full-resolution
// cortical data; it is tied to that data's grid size and feature units. The
// synthetic-benchmark default below was chosen by the shipped lambda-search
// (5-point log grid {1,10,100,1000,10000}, best mean validation Dice 0.943
// at lambda = 100 on 5 held-out 32x64 subjects).
inline constexpr double kLambdaFullScale = 3e7;
inline constexpr double kLambdaSyntheticDefault = 1e2;

// Fixed per-channel polar velocity variance used when the posterior is
// collapsed to a point estimate (sample_stochastic = false).
inline constexpr double kPointEstimateSigma2 = 1e-6;

struct RegistrationConfig {
  double lambda = kLambdaSyntheticDefault;
  int steps = 7;      // scaling-and-squaring compositions
  int iters = 300;    // max optimizer iterations (per resolution level)
  double lr = 1e-2;   // instance default; amortized training wants ~1e-5..1e-3
  RegMode mode = RegMode::instance;
  bool sample_stochastic = false;  // one reparameterized draw vs mean only
  std::uint64_t seed = 0;
  int multires_levels = 1;
  bool rigid = false;                  // run rotation search first
  double rigid_coarse_step = kPi / 36.0;

  void validate() const {
    if (lambda <= 0.0) throw ConfigError("config: lambda must be positive");
    if (steps < 1) throw ConfigError("config: steps must be >= 1");
    if (iters < 1) throw ConfigError("config: iters must be >= 1");
    if (lr <= 0.0) throw ConfigError("config: lr must be positive");
    if (multires_levels < 1) {
      throw ConfigError("config: multires_levels must be >= 1");
    }
    if (rigid && rigid_coarse_step <= 0.0) {
      throw ConfigError("config: rigid_coarse_step must be positive");
    }
  }
};

struct Diagnostics {
  double rigid_alpha = 0.0;  // z-axis rotation applied to the moving map
  double rigid_beta = 0.0;   // y-axis rotation
  double fraction_nonpositive = 0.0;
  std::size_t clamped_samples = 0;
  double wall_time_s = 0.0;
  int iterations = 0;
};

struct RegistrationResult {
  VectorField mu;          // optimized mean velocity
  Field<double> sigma2;    // per-vertex polar variance (2 channels)
  DeformationField phi;      // exp(mu): warps moving toward the atlas
  DeformationField phi_inv;  // exp(-mu): maps atlas space to moving space
  std::vector<double> loss_trace;
  Diagnostics diagnostics;
};

// ---------------------------------------------------------------------------
// Rotation resampling

namespace detail {

// Pull-back point for rotating map content by R = Rz(alpha) Ry(beta):
// forward rotation samples at R^-1 p, inverse rotation at R p.
inline Vec3 rotation_pullback(const Vec3& p, double ca, double sa, double cb,
                              double sb, bool inverse) {
  if (inverse) {
    // R p: Ry(beta) first, then Rz(alpha).
    const double x1 = cb * p.x + sb * p.z;
    const double z1 = -sb * p.x + cb * p.z;
    return {ca * x1 - sa * p.y, sa * x1 + ca * p.y, z1};
  }
  // R^-1 p = Ry(-beta) Rz(-alpha) p.
  const double x1 = ca * p.x + sa * p.y;
  const double y1 = -sa * p.x + ca * p.y;
  return {cb * x1 - sb * p.z, y1, sb * x1 + cb * p.z};
}

}  // namespace detail

// Active rotation of map content by R = Rz(alpha) Ry(beta): each output cell
// takes the input value at R^-1 p. With inverse = true the content is
// rotated by R^-1 instead (sampling at R p), which undoes the forward call.
inline FeatureMap rotate_map(const SphereGrid& g, const FeatureMap& map,
                             double alpha, double beta, bool inverse = false) {
  require_grid_match(g, map.rows, map.cols, "rotate_map");
  const double ca = std::cos(alpha), sa = std::sin(alpha);
  const double cb = std::cos(beta), sb = std::sin(beta);
  FeatureMap out(map.rows, map.cols, map.channels);
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      const Vec3 p = polar_to_cartesian(g.lat[i], g.lon[j]);
      const Vec3 q = detail::rotation_pullback(p, ca, sa, cb, sb, inverse);
      const auto [lat, lon] = cartesian_to_polar(q);
      for (std::size_t ch = 0; ch < map.channels; ++ch) {
        out.at(ch, i, j) = ops::sample_point(g, map, ch, lat, lon);
      }
    }
  }
  return out;
}

inline LabelMap rotate_labels(const SphereGrid& g, const LabelMap& labels,
                              double alpha, double beta, bool inverse = false) {
  require_grid_match(g, labels.rows, labels.cols, "rotate_labels");
  const double ca = std::cos(alpha), sa = std::sin(alpha);
  const double cb = std::cos(beta), sb = std::sin(beta);
  LabelMap out(labels.rows, labels.cols, labels.channels);
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      const Vec3 p = polar_to_cartesian(g.lat[i], g.lon[j]);
      const Vec3 q = detail::rotation_pullback(p, ca, sa, cb, sb, inverse);
      const auto [lat, lon] = cartesian_to_polar(q);
      // Nearest grid cell, longitude-periodic.
      double u = lat / g.dlat - 0.5;
      long iu = std::lround(u);
      if (iu < 0) iu = 0;
      if (iu >= static_cast<long>(g.rows)) iu = static_cast<long>(g.rows) - 1;
      long jv = std::lround(lon / g.dlon);
      jv %= static_cast<long>(g.cols);
      if (jv < 0) jv += static_cast<long>(g.cols);
      for (std::size_t ch = 0; ch < labels.channels; ++ch) {
        out.at(ch, i, j) = labels.at(ch, static_cast<std::size_t>(iu),
                                     static_cast<std::size_t>(jv));
      }
    }
  }
  return out;
}

struct RigidResult {
  double alpha = 0.0;
  double beta = 0.0;
  double score = 0.0;
  FeatureMap rotated;
};

namespace detail {

inline double rotation_magnitude(double alpha, double beta) {
  // Rotation angle of Rz(alpha) Ry(beta) from its trace.
  const double tr = std::cos(alpha) * std::cos(beta) + std::cos(alpha) +
                    std::cos(beta);
  return std::acos(std::clamp(0.5 * (tr - 1.0), -1.0, 1.0));
}

}  // namespace detail

// Exhaustive two-angle rotation search minimizing the unwarped data term:
// z-rotation over [0, 2 pi), y-rotation over [-pi/2, pi/2] at coarse_step,
// then one local refinement pass at coarse_step / 8. Among equal scores the
// smallest rotation magnitude wins. Candidates are applied in the inverse
// sense, so the returned angles name the rotation that mapped the atlas
// onto the moving map and `rotated` is the moving map with it undone.
inline RigidResult rigid_align(const SphereGrid& g, const FeatureMap& moving,
                               const likelihood::Atlas& atlas,
                               double coarse_step = kPi / 36.0) {
  if (coarse_step <= 0.0 || coarse_step > kPi) {
    throw ConfigError("rigid_align: coarse_step out of range");
  }
  double best_a = 0.0, best_b = 0.0;
  double best_score = 0.0, best_mag = 0.0;
  bool first = true;
  auto consider = [&](double a, double b) {
    const FeatureMap rot = rotate_map(g, moving, a, b, true);
    const double score = likelihood::data_term(g, rot, atlas);
    const double mag = detail::rotation_magnitude(a, b);
    if (first || score < best_score ||
        (score == best_score && mag < best_mag)) {
      first = false;
      best_score = score;
      best_mag = mag;
      best_a = a;
      best_b = b;
    }
  };
  const long na = std::lround(kTwoPi / coarse_step);
  const long nb = std::lround(kPi / coarse_step);
  for (long ka = 0; ka < na; ++ka) {
    const double a = wrap_longitude(static_cast<double>(ka) * kTwoPi /
                                    static_cast<double>(na));
    for (long kb = 0; kb <= nb; ++kb) {
      const double b = -0.5 * kPi + static_cast<double>(kb) * kPi /
                                        static_cast<double>(nb);
      consider(a, b);
    }
  }
  const double fine = coarse_step / 8.0;
  const double ca = best_a, cb = best_b;
  for (long da = -8; da <= 8; ++da) {
    for (long db = -8; db <= 8; ++db) {
      if (da == 0 && db == 0) continue;
      const double a = wrap_longitude(ca + static_cast<double>(da) * fine);
      const double b =
          std::clamp(cb + static_cast<double>(db) * fine, -0.5 * kPi,
                     0.5 * kPi);
      consider(a, b);
    }
  }
  RigidResult r;
  r.alpha = best_a;
  r.beta = best_b;
  r.score = best_score;
  r.rotated = rotate_map(g, moving, best_a, best_b, true);
  return r;
}

// ---------------------------------------------------------------------------
// Loss evaluation shared by instance optimization and network training

namespace detail {

inline Field<double> constant_field(std::size_t rows, std::size_t cols,
                                    std::size_t ch, double value) {
  Field<double> f(rows, cols, ch);
  std::fill(f.data.begin(), f.data.end(), value);
  return f;
}

struct LossEval {
  double data = 0.0;
  double prior = 0.0;
  double total = 0.0;
  VectorField g_v;         // w.r.t. the integrated velocity sample
  VectorField g_mu_prior;  // w.r.t. the mean velocity via the prior quadratic
  Field<double> g_sigma2;  // w.r.t. polar variances (2 channels)
  ops::SampleStats stats;
};

// Full objective at one velocity sample: data term through scaling-and-
// squaring plus the prior. Point-estimate runs score the MAP energy
// (data + quadratic prior); variational runs (stochastic sampling or an
// amortized model) add the KL trace and entropy terms so the variance
// channels receive gradient. Ablation mode flips both spherical
// corrections to the flat-image baseline.
inline LossEval eval_loss(const SphereGrid& g, const FeatureMap& moving,
                          const likelihood::Atlas& atlas,
                          const prior::WeightedGraphLaplacian& L,
                          const RegistrationConfig& cfg, const VectorField& v,
                          const VectorField& mu,
                          const Field<double>& sigma2_polar,
                          bool need_grads = true) {
  const bool uniform = cfg.mode == RegMode::voxelmorph2d_ablation;
  const bool variational =
      cfg.sample_stochastic || cfg.mode == RegMode::amortized;
  LossEval ev;
  auto tape = ops::scaling_and_squaring_tape(g, v, cfg.steps, &ev.stats);
  const VectorField& phi = tape.stage.back();
  const Field<double> warped =
      ops::sample_periodic(g, moving, phi, ops::Interp::bilinear, &ev.stats);
  ev.data = likelihood::data_term(g, warped, atlas, uniform);
  Field<double> sigma_cart;
  if (variational) {
    sigma_cart = prior::velocity_variance_to_cartesian(g, sigma2_polar);
    ev.prior = prior::prior_kl_term(g, mu, sigma_cart, L, cfg.lambda);
  } else {
    ev.prior = prior::prior_quad_term(g, mu, L, cfg.lambda);
  }
  ev.total = ev.data + ev.prior;
  if (!need_grads) return ev;
  const FeatureMap g_warped =
      likelihood::data_term_grad(g, warped, atlas, uniform);
  auto [g_moving, g_phi] = ops::sample_periodic_vjp(g, moving, phi, g_warped);
  ev.g_v = ops::scaling_and_squaring_vjp(g, tape, g_phi);
  if (variational) {
    auto [g_mu, g_sigma_cart] =
        prior::prior_kl_grad(g, mu, sigma_cart, L, cfg.lambda);
    ev.g_mu_prior = std::move(g_mu);
    ev.g_sigma2 = prior::velocity_variance_to_cartesian_vjp(g, g_sigma_cart);
  } else {
    ev.g_mu_prior = prior::prior_quad_grad(g, mu, L, cfg.lambda);
    ev.g_sigma2 = constant_field(g.rows, g.cols, 2, 0.0);
  }
  return ev;
}

// Pool the atlas to a coarser level, re-flooring the variance.
inline likelihood::Atlas pool_atlas(const likelihood::Atlas& a) {
  Field<double> mask;
  if (a.mask.size() != 0) {
    mask = ops::pool2(a.mask);
    for (double& x : mask.data) x = (x >= 0.5) ? 1.0 : 0.0;
  }
  return likelihood::make_atlas(ops::pool2(a.mean), ops::pool2(a.variance),
                                std::move(mask));
}

}  // namespace detail

// Per-pair MAP optimization of the velocity posterior. The moving image is
// warped toward the atlas; phi_inv carries the pullback used to transfer
// atlas labels into the moving image's space.
inline RegistrationResult register_instance(const SphereGrid& grid,
                                            const FeatureMap& moving_in,
                                            const likelihood::Atlas& atlas,
                                            const RegistrationConfig& cfg) {
  cfg.validate();
  if (cfg.mode == RegMode::amortized) {
    throw ConfigError("register_instance: amortized mode needs a model");
  }
  const auto t0 = std::chrono::steady_clock::now();
  RegistrationResult res;

  FeatureMap moving = moving_in;
  if (cfg.rigid) {
    RigidResult rr = rigid_align(grid, moving, atlas, cfg.rigid_coarse_step);
    moving = std::move(rr.rotated);
    res.diagnostics.rigid_alpha = rr.alpha;
    res.diagnostics.rigid_beta = rr.beta;
  }

  const int levels = cfg.multires_levels;
  const std::size_t div = 1u << static_cast<unsigned>(levels - 1);
  if (grid.rows % div != 0 || grid.cols % div != 0) {
    throw ConfigError("register_instance: grid not divisible for multires");
  }

  // Pyramids, coarsest last.
  std::vector<SphereGrid> grids{grid};
  std::vector<FeatureMap> movings{moving};
  std::vector<likelihood::Atlas> atlases{atlas};
  for (int l = 1; l < levels; ++l) {
    grids.push_back(sphereg::detail::make_grid_any(grids.back().rows / 2,
                                                   grids.back().cols / 2));
    movings.push_back(ops::pool2(movings.back()));
    atlases.push_back(detail::pool_atlas(atlases.back()));
  }

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> nd(0.0, 1.0);

  VectorField mu(grids.back().rows, grids.back().cols);
  Field<double> logsig2;
  if (cfg.sample_stochastic) {
    // Unit-variance start; the KL trace term anneals the scale down.
    logsig2 = detail::constant_field(mu.rows, mu.cols, 2, 0.0);
  }

  int total_iters = 0;
  for (int l = levels - 1; l >= 0; --l) {
    const SphereGrid& g = grids[static_cast<std::size_t>(l)];
    const FeatureMap& mv = movings[static_cast<std::size_t>(l)];
    const likelihood::Atlas& at = atlases[static_cast<std::size_t>(l)];
    const auto L = prior::build_weighted_laplacian(
        g, cfg.mode == RegMode::voxelmorph2d_ablation);

    if (mu.rows != g.rows) {
      mu = VectorField(ops::upsample2(mu));
      if (cfg.sample_stochastic) logsig2 = ops::upsample2(logsig2);
    }

    const std::size_t nmu = mu.data.size();
    std::vector<double> params(nmu + (cfg.sample_stochastic ? nmu : 0));
    std::copy(mu.data.begin(), mu.data.end(), params.begin());
    if (cfg.sample_stochastic) {
      std::copy(logsig2.data.begin(), logsig2.data.end(),
                params.begin() + static_cast<std::ptrdiff_t>(nmu));
    }
    Adam opt(cfg.lr);
    std::vector<double> grads(params.size());
    std::vector<double> eps(cfg.sample_stochastic ? nmu : 0);

    const Field<double> det_sigma2 = detail::constant_field(
        g.rows, g.cols, 2, kPointEstimateSigma2);

    for (int it = 0; it < cfg.iters; ++it) {
      std::copy(params.begin(),
                params.begin() + static_cast<std::ptrdiff_t>(nmu),
                mu.data.begin());
      VectorField v = mu;
      Field<double> sigma2 = det_sigma2;
      if (cfg.sample_stochastic) {
        std::copy(params.begin() + static_cast<std::ptrdiff_t>(nmu),
                  params.end(), logsig2.data.begin());
        for (std::size_t k = 0; k < nmu; ++k) {
          eps[k] = nd(rng);
          const double sd = std::exp(0.5 * logsig2.data[k]);
          v.data[k] = mu.data[k] + sd * eps[k];
          sigma2.data[k] = std::exp(logsig2.data[k]);
        }
      }
      auto ev = detail::eval_loss(g, mv, at, L, cfg, v, mu, sigma2);
      res.loss_trace.push_back(ev.total);
      res.diagnostics.clamped_samples += ev.stats.clamped;
      ++total_iters;

      for (std::size_t k = 0; k < nmu; ++k) {
        grads[k] = ev.g_v.data[k] + ev.g_mu_prior.data[k];
      }
      if (cfg.sample_stochastic) {
        for (std::size_t k = 0; k < nmu; ++k) {
          const double sd = std::exp(0.5 * logsig2.data[k]);
          const double s2 = sd * sd;
          grads[nmu + k] = ev.g_v.data[k] * 0.5 * sd * eps[k] +
                           ev.g_sigma2.data[k] * s2;
        }
      }
      opt.step(params, grads);

      const std::size_t n = res.loss_trace.size();
      if (n >= 21) {
        const double prev = res.loss_trace[n - 21];
        const double cur = res.loss_trace[n - 1];
        if (std::abs(prev - cur) / std::max(std::abs(prev), 1.0) < 1e-6) {
          std::copy(params.begin(),
                    params.begin() + static_cast<std::ptrdiff_t>(nmu),
                    mu.data.begin());
          if (cfg.sample_stochastic) {
            std::copy(params.begin() + static_cast<std::ptrdiff_t>(nmu),
                      params.end(), logsig2.data.begin());
          }
          break;
        }
      }
      std::copy(params.begin(),
                params.begin() + static_cast<std::ptrdiff_t>(nmu),
                mu.data.begin());
      if (cfg.sample_stochastic) {
        std::copy(params.begin() + static_cast<std::ptrdiff_t>(nmu),
                  params.end(), logsig2.data.begin());
      }
    }
  }

  res.mu = mu;
  res.sigma2 = cfg.sample_stochastic
                   ? [&] {
                       Field<double> s(mu.rows, mu.cols, 2);
                       for (std::size_t k = 0; k < s.data.size(); ++k) {
                         s.data[k] = std::exp(logsig2.data[k]);
                       }
                       return s;
                     }()
                   : detail::constant_field(mu.rows, mu.cols, 2,
                                            kPointEstimateSigma2);
  VectorField neg = mu;
  for (double& x : neg.data) x = -x;
  ops::SampleStats final_stats;
  res.phi = ops::scaling_and_squaring(grid, mu, cfg.steps, &final_stats);
  res.phi_inv = ops::scaling_and_squaring(grid, neg, cfg.steps, &final_stats);
  res.diagnostics.clamped_samples += final_stats.clamped;
  res.diagnostics.fraction_nonpositive =
      metrics::jacobian_map(grid, res.phi).second.fraction_nonpositive;
  res.diagnostics.iterations = total_iters;
  res.diagnostics.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return res;
}

// ---------------------------------------------------------------------------
// Amortized path

struct TrainReport {
  std::vector<double> epoch_loss;  // mean total loss per epoch
};

inline Field<double> stack_pair(const FeatureMap& moving,
                                const FeatureMap& atlas_mean) {
  if (!moving.same_shape(atlas_mean)) {
    throw ShapeError("stack_pair: moving and atlas shapes differ");
  }
  Field<double> input(moving.rows, moving.cols,
                      moving.channels + atlas_mean.channels);
  std::copy(moving.data.begin(), moving.data.end(), input.data.begin());
  std::copy(atlas_mean.data.begin(), atlas_mean.data.end(),
            input.data.begin() + static_cast<std::ptrdiff_t>(moving.size()));
  return input;
}

// Unsupervised training of the predictor over a pair corpus: every pair is
// scored by the same objective as instance mode, with one reparameterized
// velocity draw per visit. Pairs are visited in a seeded shuffled order, so
// training is deterministic under a fixed seed.
inline TrainReport train_amortized(const SphereGrid& g, SphericalUNet& net,
                                   const std::vector<FeatureMap>& movings,
                                   const likelihood::Atlas& atlas,
                                   const RegistrationConfig& cfg, int epochs) {
  cfg.validate();
  if (epochs < 1) throw ConfigError("train_amortized: epochs must be >= 1");
  if (movings.empty()) {
    throw ConfigError("train_amortized: empty training set");
  }
  const auto L = prior::build_weighted_laplacian(
      g, cfg.mode == RegMode::voxelmorph2d_ablation);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Adam opt(cfg.lr);
  std::vector<double> params, grads;
  unet_pack(net, params);
  std::vector<std::size_t> order(movings.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;

  TrainReport report;
  const std::size_t nv = 2 * g.rows * g.cols;
  std::vector<double> eps(nv);
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    for (std::size_t idx : order) {
      const Field<double> input = stack_pair(movings[idx], atlas.mean);
      UnetTape tape;
      UnetOutput out = unet_forward(net, g, input, &tape);
      VectorField v = out.mu;
      Field<double> sigma2(g.rows, g.cols, 2);
      for (std::size_t k = 0; k < nv; ++k) {
        sigma2.data[k] = std::exp(out.logvar.data[k]);
      }
      if (cfg.sample_stochastic) {
        for (std::size_t k = 0; k < nv; ++k) {
          eps[k] = nd(rng);
          v.data[k] += std::exp(0.5 * out.logvar.data[k]) * eps[k];
        }
      }
      auto ev =
          detail::eval_loss(g, movings[idx], atlas, L, cfg, v, out.mu, sigma2);
      epoch_sum += ev.total;

      Field<double> g_mu(g.rows, g.cols, 2);
      Field<double> g_logvar(g.rows, g.cols, 2);
      for (std::size_t k = 0; k < nv; ++k) {
        g_mu.data[k] = ev.g_v.data[k] + ev.g_mu_prior.data[k];
        double glv = ev.g_sigma2.data[k] * sigma2.data[k];
        if (cfg.sample_stochastic) {
          glv += ev.g_v.data[k] * 0.5 * std::exp(0.5 * out.logvar.data[k]) *
                 eps[k];
        }
        g_logvar.data[k] = glv;
      }
      UnetGrads ug = unet_backward(net, tape, g_mu, g_logvar);
      unet_pack_grads(ug, grads);
      opt.step(params, grads);
      unet_unpack(net, params);
    }
    report.epoch_loss.push_back(epoch_sum /
                                static_cast<double>(movings.size()));
    if (!std::isfinite(report.epoch_loss.back())) {
      throw NumericError("train_amortized: loss diverged at epoch " +
                         std::to_string(e + 1));
    }
  }
  return report;
}

// One forward pass; sub-second at desk scale. Pure inference: identical
// inputs give bit-identical outputs.
inline RegistrationResult predict_amortized(const SphericalUNet& net,
                                            const SphereGrid& g,
                                            const FeatureMap& moving,
                                            const likelihood::Atlas& atlas,
                                            int steps = 7) {
  const auto t0 = std::chrono::steady_clock::now();
  const Field<double> input = stack_pair(moving, atlas.mean);
  UnetOutput out = unet_forward(net, g, input, nullptr);
  RegistrationResult res;
  res.mu = out.mu;
  res.sigma2 = Field<double>(g.rows, g.cols, 2);
  for (std::size_t k = 0; k < res.sigma2.data.size(); ++k) {
    res.sigma2.data[k] = std::exp(out.logvar.data[k]);
  }
  VectorField neg = res.mu;
  for (double& x : neg.data) x = -x;
  ops::SampleStats stats;
  res.phi = ops::scaling_and_squaring(g, res.mu, steps, &stats);
  res.phi_inv = ops::scaling_and_squaring(g, neg, steps, &stats);
  res.diagnostics.clamped_samples = stats.clamped;
  res.diagnostics.fraction_nonpositive =
      metrics::jacobian_map(g, res.phi).second.fraction_nonpositive;
  res.diagnostics.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return res;
}

}  // namespace sphereg::reg
