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

#include <algorithm>
#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "sphereg/sphereg.hpp"

using namespace sphereg;

namespace {

// Area-weighted moments of one channel under sin(lat) cell weights.
std::pair<double, double> weighted_moments(const SphereGrid& g,
                                           const Field<double>& f,
                                           std::size_t ch) {
  double wsum = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < g.rows; ++i) {
    const double w = g.sin_lat[i];
    for (std::size_t j = 0; j < g.cols; ++j) {
      wsum += w;
      mean += w * f.at(ch, i, j);
    }
  }
  mean /= wsum;
  double var = 0.0;
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      const double r = f.at(ch, i, j) - mean;
      var += g.sin_lat[i] * r * r;
    }
  }
  return {mean, var / wsum};
}

}  // namespace

TEST_CASE("template generation is deterministic in the seed", "[synth]") {
  const SphereGrid g = make_grid(16, 32);
  const synth::Template a = synth::make_template(g, 8, 77);
  const synth::Template b = synth::make_template(g, 8, 77);
  REQUIRE(a.features.data == b.features.data);
  REQUIRE(a.labels.data == b.labels.data);

  const synth::Template c = synth::make_template(g, 8, 78);
  REQUIRE(a.features.data != c.features.data);
}

TEST_CASE("template features are standardized under area weights", "[synth]") {
  const SphereGrid g = make_grid(24, 48);
  const synth::Template t =
      synth::make_template(g, 10, 3, synth::LatWindow::none, 3);
  REQUIRE(t.features.channels == 3);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const auto [mean, var] = weighted_moments(g, t.features, ch);
    REQUIRE(std::abs(mean) < 1e-12);
    REQUIRE(std::abs(var - 1.0) < 1e-12);
  }
  // Channels are independent draws, not copies.
  bool identical = true;
  for (std::size_t k = 0; k < g.rows * g.cols; ++k) {
    identical = identical && t.features.data[k] == t.features.data[g.rows * g.cols + k];
  }
  REQUIRE_FALSE(identical);
}

TEST_CASE("template labels cover 1..n with no empty parcel", "[synth]") {
  const SphereGrid g = make_grid(16, 32);
  const std::size_t n = 12;
  const synth::Template t = synth::make_template(g, n, 5);
  std::set<std::uint32_t> seen(t.labels.data.begin(), t.labels.data.end());
  REQUIRE(seen.size() == n);
  REQUIRE(*seen.begin() == 1);
  REQUIRE(*seen.rbegin() == static_cast<std::uint32_t>(n));
}

TEST_CASE("polar window pushes feature energy away from the equator",
          "[synth]") {
  const SphereGrid g = make_grid(32, 64);
  const auto cap_fraction = [&](const synth::Template& t) {
    double poleward = 0.0, total = 0.0;
    for (std::size_t i = 0; i < g.rows; ++i) {
      for (std::size_t j = 0; j < g.cols; ++j) {
        const double e = g.sin_lat[i] * t.features.at(0, i, j) *
                         t.features.at(0, i, j);
        total += e;
        if (std::abs(g.lat[i] - kPi / 2.0) > kPi / 3.0) poleward += e;
      }
    }
    return poleward / total;
  };
  const double base =
      cap_fraction(synth::make_template(g, 8, 11, synth::LatWindow::none));
  const double windowed =
      cap_fraction(synth::make_template(g, 8, 11, synth::LatWindow::polar));
  // The caps cover ~13% of the area; the window at least doubles their
  // share of the variance.
  REQUIRE(windowed > 2.0 * base);
  REQUIRE(windowed > 0.25);
}

TEST_CASE("generated velocity attains its speed budget exactly", "[synth]") {
  const SphereGrid g = make_grid(20, 40);
  const double amp = 0.12;
  const VelocityField v = synth::gen_smooth_velocity(g, amp, 4, 9);
  double max_speed = 0.0;
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      max_speed = std::max(max_speed,
                           std::hypot(v.at(0, i, j) * g.sin_lat[i],
                                      v.at(1, i, j)));
    }
  }
  REQUIRE(max_speed == Catch::Approx(amp).margin(1e-12));
}

TEST_CASE("zero amplitude gives a bit-exact identity subject", "[synth]") {
  const SphereGrid g = make_grid(16, 32);
  const synth::Template t = synth::make_template(g, 6, 13);
  const synth::SyntheticSubject s = synth::make_subject(g, t, 0.0, 4, 14);
  REQUIRE(std::all_of(s.true_phi.data.begin(), s.true_phi.data.end(),
                      [](double x) { return x == 0.0; }));
  REQUIRE(s.features.data == t.features.data);
  REQUIRE(s.labels.data == t.labels.data);
}

TEST_CASE("subjects are deterministic and bounded by the speed budget",
          "[synth]") {
  const SphereGrid g = make_grid(16, 32);
  const synth::Template t = synth::make_template(g, 6, 17);
  const double amp = 0.15;
  const synth::SyntheticSubject a = synth::make_subject(g, t, amp, 4, 21);
  const synth::SyntheticSubject b = synth::make_subject(g, t, amp, 4, 21);
  REQUIRE(a.features.data == b.features.data);
  REQUIRE(a.true_phi.data == b.true_phi.data);

  // Unit-time flow at speed <= amp cannot move a point farther than amp
  // along the sphere (up to Euler discretization error).
  const double disp = synth::mean_displacement(g, a.true_phi);
  REQUIRE(disp > 0.01);
  double max_disp = 0.0;
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      const double dphi = a.true_phi.at(1, i, j);
      const double dth = a.true_phi.at(0, i, j);
      const double lat1 = g.lat[i] + dphi;
      const double c =
          std::sin(g.lat[i]) * std::sin(lat1) * std::cos(dth) +
          std::cos(g.lat[i]) * std::cos(lat1);
      max_disp = std::max(max_disp, std::acos(std::clamp(c, -1.0, 1.0)));
    }
  }
  REQUIRE(max_disp <= amp + 1e-3);
}

TEST_CASE("endpoint error is zero against itself and symmetric", "[synth]") {
  const SphereGrid g = make_grid(12, 24);
  const VelocityField v = synth::gen_smooth_velocity(g, 0.1, 3, 31);
  const DeformationField phi = synth::euler_integrate(g, v, 256);
  REQUIRE(synth::endpoint_error(g, phi, phi) == 0.0);

  const DeformationField zero(g.rows, g.cols);
  const double e1 = synth::endpoint_error(g, phi, zero);
  const double e2 = synth::endpoint_error(g, zero, phi);
  REQUIRE(e1 == Catch::Approx(e2).epsilon(1e-12));
  REQUIRE(e1 == Catch::Approx(synth::mean_displacement(g, phi)).epsilon(1e-12));
}

TEST_CASE("Monte-Carlo KL brackets the closed form", "[synth]") {
  const SphereGrid g = make_grid(4, 8);
  const auto L = prior::build_weighted_laplacian(g);
  std::mt19937_64 rng(123);
  std::normal_distribution<double> nd(0.0, 1.0);
  VectorField mu(g.rows, g.cols);
  for (double& x : mu.data) x = 0.1 * nd(rng);
  Field<double> s2(g.rows, g.cols, 2);
  for (double& x : s2.data) x = std::exp(0.3 * nd(rng));
  const Field<double> sigma_cart =
      prior::velocity_variance_to_cartesian(g, s2);
  const double lambda = 25.0;
  const double closed = prior::prior_kl_term(g, mu, sigma_cart, L, lambda);
  const auto [est, se] = synth::mc_kl(g, mu, sigma_cart, lambda, 200000, 7);
  REQUIRE(se > 0.0);
  REQUIRE(std::abs(closed - est) < 4.0 * se);
}
