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
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "sphereg/errors.hpp"
#include "sphereg/field.hpp"
#include "sphereg/sampler.hpp"
#include "sphereg/sphere_grid.hpp"

// Synthetic data with exact ground truth, plus brute-force reference
// implementations (forward-Euler flow, Monte-Carlo KL) used to validate the
// fast operators. The reference code deliberately avoids the library's
// sampler and Laplacian internals: where it needs interpolation or the graph
// quadratic form, it carries its own simple implementation.

namespace sphereg::synth {

namespace detail {

// Orthonormal real spherical harmonic Y_lm at (lat, lon); m > 0 pairs with
// cos(m theta), m < 0 with sin(|m| theta). std::assoc_legendre is the
// unnormalized P_l^m without the Condon-Shortley phase, which is fine for
// random fields.
inline double real_sph_harm(int l, int m, double lat, double lon) {
  const int am = m < 0 ? -m : m;
  const double norm = std::sqrt(
      (2.0 * l + 1.0) / (4.0 * kPi) *
      std::exp(std::lgamma(static_cast<double>(l - am + 1)) -
               std::lgamma(static_cast<double>(l + am + 1))));
  const double p = std::assoc_legendre(static_cast<unsigned>(l),
                                       static_cast<unsigned>(am),
                                       std::cos(lat));
  if (m == 0) return norm * p;
  const double sq2 = std::sqrt(2.0);
  if (m > 0) return sq2 * norm * p * std::cos(am * lon);
  return sq2 * norm * p * std::sin(am * lon);
}

// Random band-limited scalar field: iid normal coefficients over degrees
// 1..lmax, flat spectrum.
inline Field<double> band_limited_field(const SphereGrid& g, int lmax,
                                        std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<std::pair<std::pair<int, int>, double>> coeffs;
  for (int l = 1; l <= lmax; ++l) {
    for (int m = -l; m <= l; ++m) {
      coeffs.push_back({{l, m}, dist(rng)});
    }
  }
  Field<double> out(g.rows, g.cols, 1);
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      double acc = 0.0;
      for (const auto& [lm, c] : coeffs) {
        acc += c * real_sph_harm(lm.first, lm.second, g.lat[i], g.lon[j]);
      }
      out.at(0, i, j) = acc;
    }
  }
  return out;
}

// Standalone bilinear probe at an absolute (lat, lon), periodic in
// longitude, clamped in latitude. Reference-path counterpart of the
// library sampler, kept independent on purpose.
inline double probe(const SphereGrid& g, const Field<double>& f,
                    std::size_t ch, double lat, double lon) {
  double u = lat / g.dlat - 0.5;
  const double rmax = static_cast<double>(g.rows - 1);
  if (u < 0.0) u = 0.0;
  if (u > rmax) u = rmax;
  std::size_t i0 = static_cast<std::size_t>(u);
  if (i0 > g.rows - 2) i0 = g.rows - 2;
  const double fi = u - static_cast<double>(i0);
  const double n = static_cast<double>(g.cols);
  double v = lon / g.dlon;
  v -= n * std::floor(v / n);
  if (v >= n) v = 0.0;
  std::size_t j0 = static_cast<std::size_t>(v);
  if (j0 >= g.cols) j0 = 0;
  const double fj = v - static_cast<double>(j0);
  const std::size_t j1 = (j0 + 1) % g.cols;
  return (1.0 - fi) * ((1.0 - fj) * f.at(ch, i0, j0) + fj * f.at(ch, i0, j1)) +
         fi * ((1.0 - fj) * f.at(ch, i0 + 1, j0) + fj * f.at(ch, i0 + 1, j1));
}

}  // namespace detail

enum class LatWindow {
  none,
  polar,  // feature energy pushed toward |lat - pi/2| > pi/3
};

struct Template {
  FeatureMap features;
  LabelMap labels;
};

// Smooth pseudo-convexity pattern: one or more independent band-limited
// harmonic fields (degrees <= 8), each normalized to zero mean and unit
// variance under area weights, plus parcel labels 1..n_regions from the
// spherical Voronoi partition of random unit vectors. Centroid sets leaving
// any parcel empty are redrawn. Multiple channels model complementary
// surface descriptors; independent gradients make the warp observable in
// regions where a single channel is locally flat.
inline Template make_template(const SphereGrid& g, std::size_t n_regions,
                              std::uint64_t seed,
                              LatWindow window = LatWindow::none,
                              std::size_t feature_channels = 1) {
  if (n_regions < 2) {
    throw ShapeError("make_template: need at least 2 regions");
  }
  if (feature_channels < 1) {
    throw ShapeError("make_template: need at least 1 feature channel");
  }
  std::mt19937_64 rng(seed);
  Template t;
  t.features = FeatureMap(g.rows, g.cols, feature_channels);
  for (std::size_t ch = 0; ch < feature_channels; ++ch) {
    const Field<double> f = detail::band_limited_field(g, 8, rng);
    for (std::size_t i = 0; i < g.rows; ++i) {
      for (std::size_t j = 0; j < g.cols; ++j) {
        t.features.at(ch, i, j) = f.at(0, i, j);
      }
    }
    if (window == LatWindow::polar) {
      // Keep full amplitude away from the equator, attenuate the tropics.
      for (std::size_t i = 0; i < g.rows; ++i) {
        const double d = std::abs(g.lat[i] - 0.5 * kPi);
        const double x = std::clamp(d / (kPi / 3.0), 0.0, 1.0);
        const double w = 0.05 + 0.95 * x * x * (3.0 - 2.0 * x);
        for (std::size_t j = 0; j < g.cols; ++j) t.features.at(ch, i, j) *= w;
      }
    }
    // Area-weighted standardization, per channel.
    double total = 0.0, mean = 0.0;
    for (std::size_t i = 0; i < g.rows; ++i) {
      for (std::size_t j = 0; j < g.cols; ++j) {
        total += g.area[i];
        mean += g.area[i] * t.features.at(ch, i, j);
      }
    }
    mean /= total;
    double var = 0.0;
    for (std::size_t i = 0; i < g.rows; ++i) {
      for (std::size_t j = 0; j < g.cols; ++j) {
        const double r = t.features.at(ch, i, j) - mean;
        var += g.area[i] * r * r;
      }
    }
    var /= total;
    const double inv_sd = 1.0 / std::sqrt(var);
    for (std::size_t i = 0; i < g.rows; ++i) {
      for (std::size_t j = 0; j < g.cols; ++j) {
        t.features.at(ch, i, j) = (t.features.at(ch, i, j) - mean) * inv_sd;
      }
    }
  }

  std::normal_distribution<double> nd(0.0, 1.0);
  t.labels = LabelMap(g.rows, g.cols, 1);
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::vector<Vec3> centroids(n_regions);
    for (auto& c : centroids) {
      Vec3 p{nd(rng), nd(rng), nd(rng)};
      const double r = norm(p);
      c = (r > 0.0) ? (1.0 / r) * p : Vec3{0.0, 0.0, 1.0};
    }
    std::vector<bool> seen(n_regions, false);
    for (std::size_t i = 0; i < g.rows; ++i) {
      for (std::size_t j = 0; j < g.cols; ++j) {
        const Vec3 p = polar_to_cartesian(g.lat[i], g.lon[j]);
        std::size_t best = 0;
        double best_dot = -2.0;
        for (std::size_t k = 0; k < n_regions; ++k) {
          const double d = dot(p, centroids[k]);
          if (d > best_dot) {
            best_dot = d;
            best = k;
          }
        }
        t.labels.at(0, i, j) = static_cast<std::uint32_t>(best + 1);
        seen[best] = true;
      }
    }
    bool all = true;
    for (bool s : seen) all = all && s;
    if (all) return t;
  }
  throw NumericError("make_template: could not place non-empty parcels");
}

// Random band-limited velocity with bounded physical speed. The theta
// channel is divided by max(sin lat, cap) so coordinate speed near the poles
// does not translate into runaway physical speed; the joint scale pins the
// max physical speed to exactly `amplitude`.
inline VelocityField gen_smooth_velocity(const SphereGrid& g, double amplitude,
                                         int smoothness, std::uint64_t seed) {
  if (amplitude < 0.0) {
    throw NumericError("gen_smooth_velocity: amplitude must be >= 0");
  }
  std::mt19937_64 rng(seed);
  Field<double> a_theta = detail::band_limited_field(g, smoothness, rng);
  Field<double> a_phi = detail::band_limited_field(g, smoothness, rng);
  VelocityField v(g.rows, g.cols);
  constexpr double kSinCap = 0.2;
  double max_phys = 0.0;
  for (std::size_t i = 0; i < g.rows; ++i) {
    const double s = g.sin_lat[i];
    const double denom = std::max(s, kSinCap);
    for (std::size_t j = 0; j < g.cols; ++j) {
      const double ut = a_theta.at(0, i, j) / denom;
      const double up = a_phi.at(0, i, j);
      v.at(0, i, j) = ut;
      v.at(1, i, j) = up;
      const double phys = std::sqrt(s * s * ut * ut + up * up);
      if (phys > max_phys) max_phys = phys;
    }
  }
  if (amplitude == 0.0 || max_phys == 0.0) {
    std::fill(v.data.begin(), v.data.end(), 0.0);
    return v;
  }
  const double scale = amplitude / max_phys;
  for (double& x : v.data) x *= scale;
  return v;
}

// Explicit forward-Euler flow of the stationary field over unit time,
// wrapping longitude every step and clamping latitude to the sampled band.
// Reference implementation: clarity over speed.
inline DeformationField euler_integrate(const SphereGrid& g,
                                        const VelocityField& v, int nsteps) {
  if (nsteps < 1) throw ShapeError("euler_integrate: nsteps must be >= 1");
  require_grid_match(g, v.rows, v.cols, "euler_integrate");
  const double h = 1.0 / static_cast<double>(nsteps);
  const double lat_lo = g.lat.front(), lat_hi = g.lat.back();
  DeformationField d(g.rows, g.cols);
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      double lat = g.lat[i], lon = g.lon[j];
      double lon_total = 0.0;  // unwrapped longitude travel
      for (int s = 0; s < nsteps; ++s) {
        const double ut = detail::probe(g, v, 0, lat, lon);
        const double up = detail::probe(g, v, 1, lat, lon);
        lat += up * h;
        if (lat < lat_lo) lat = lat_lo;
        if (lat > lat_hi) lat = lat_hi;
        lon_total += ut * h;
        lon = wrap_longitude(g.lon[j] + lon_total);
      }
      d.at(0, i, j) = lon_total;
      d.at(1, i, j) = lat - g.lat[i];
    }
  }
  return d;
}

struct SyntheticSubject {
  FeatureMap features;
  LabelMap labels;
  DeformationField true_phi;  // template -> subject displacement
  std::uint64_t seed = 0;
};

// Subject = template pulled through a random ground-truth warp. The truth
// comes from the Euler reference integrator, not from scaling and squaring,
// so recovery tests do not compare the implementation against itself.
inline SyntheticSubject make_subject(const SphereGrid& g, const Template& tmpl,
                                     double amplitude, int smoothness,
                                     std::uint64_t seed,
                                     int euler_steps = 1024) {
  SyntheticSubject s;
  s.seed = seed;
  const VelocityField v = gen_smooth_velocity(g, amplitude, smoothness, seed);
  s.true_phi = euler_integrate(g, v, euler_steps);
  s.features = FeatureMap(
      ops::sample_periodic(g, tmpl.features, s.true_phi, ops::Interp::bilinear));
  s.labels = ops::warp_labels(g, tmpl.labels, s.true_phi);
  return s;
}

// Area-weighted mean great-circle distance between the target points of two
// displacement fields. Zero when both agree; used to score recovered warps
// against the ground truth.
inline double endpoint_error(const SphereGrid& g, const DeformationField& a,
                             const DeformationField& b) {
  require_grid_match(g, a.rows, a.cols, "endpoint_error");
  require_grid_match(g, b.rows, b.cols, "endpoint_error");
  double total = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      const double d = great_circle_distance(
          g.lat[i] + a.at(1, i, j), g.lon[j] + a.at(0, i, j),
          g.lat[i] + b.at(1, i, j), g.lon[j] + b.at(0, i, j));
      sum += g.area[i] * d;
      total += g.area[i];
    }
  }
  return sum / total;
}

// Area-weighted mean displacement magnitude of a field (great-circle
// distance from each grid point to its target).
inline double mean_displacement(const SphereGrid& g,
                                const DeformationField& phi) {
  DeformationField zero(phi.rows, phi.cols);
  return endpoint_error(g, phi, zero);
}

// Monte-Carlo estimate of the KL bracket: E_q[log q(v') - log p(v')] with q
// the diagonal Gaussian N(mu', Sigma) over the 3 Cartesian channels and p
// the (improper) Gaussian with precision lambda * L. The prior's missing
// normalizer and q's entropy constant -(D/2)(1 + log 2 pi) are dropped, the
// same convention as the closed-form term, so the two are directly
// comparable. Returns (estimate, standard error).
inline std::pair<double, double> mc_kl(const SphereGrid& g,
                                       const VectorField& mu,
                                       const Field<double>& sigma_cart,
                                       double lambda, std::size_t nsamples,
                                       std::uint64_t seed,
                                       bool uniform_weights = false) {
  if (sigma_cart.channels != 3) {
    throw ShapeError("mc_kl: sigma_cart must be 3-channel");
  }
  const std::size_t MN = g.rows * g.cols;
  const std::size_t D = 3 * MN;
  // Own mean conversion: chord displacement per vertex.
  std::vector<double> mu_prime(D);
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      const std::size_t k = i * g.cols + j;
      const double lat1 = g.lat[i] + mu.at(1, i, j);
      const double lon1 = g.lon[j] + mu.at(0, i, j);
      mu_prime[0 * MN + k] = std::sin(lat1) * std::cos(lon1) -
                             std::sin(g.lat[i]) * std::cos(g.lon[j]);
      mu_prime[1 * MN + k] = std::sin(lat1) * std::sin(lon1) -
                             std::sin(g.lat[i]) * std::sin(g.lon[j]);
      mu_prime[2 * MN + k] = std::cos(lat1) - std::cos(g.lat[i]);
    }
  }
  // Own edge list for the quadratic form.
  struct Edge {
    std::size_t a, b;
    double w;
  };
  std::vector<Edge> edges;
  edges.reserve(2 * MN);
  for (std::size_t i = 0; i < g.rows; ++i) {
    const double wh = uniform_weights ? 1.0 : 1.0 / std::sin(g.lat[i]);
    for (std::size_t j = 0; j < g.cols; ++j) {
      const std::size_t k = i * g.cols + j;
      edges.push_back({k, i * g.cols + (j + 1) % g.cols, wh});
      if (i + 1 < g.rows) edges.push_back({k, k + g.cols, 1.0});
    }
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> sigma(D), vp(D);
  double log_sigma_sum = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    const double* s = sigma_cart.channel(c);
    for (std::size_t k = 0; k < MN; ++k) {
      if (!(s[k] > 0.0)) throw NumericError("mc_kl: nonpositive variance");
      sigma[c * MN + k] = std::sqrt(s[k]);
      log_sigma_sum += std::log(s[k]);
    }
  }
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t n = 0; n < nsamples; ++n) {
    double eps2 = 0.0;
    for (std::size_t k = 0; k < D; ++k) {
      const double e = nd(rng);
      eps2 += e * e;
      vp[k] = mu_prime[k] + sigma[k] * e;
    }
    double quad = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double* x = vp.data() + c * MN;
      for (const Edge& e : edges) {
        const double dfc = x[e.a] - x[e.b];
        quad += e.w * dfc * dfc;
      }
    }
    const double val = 0.5 * lambda * quad - 0.5 * eps2 - 0.5 * log_sigma_sum +
                       0.5 * static_cast<double>(D);
    sum += val;
    sum2 += val * val;
  }
  const double nn = static_cast<double>(nsamples);
  const double mean = sum / nn;
  const double var = std::max(0.0, sum2 / nn - mean * mean);
  return {mean, std::sqrt(var / nn)};
}

}  // namespace sphereg::synth
