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
#include <limits>
#include <random>

#include "sphereg/sphereg.hpp"

using namespace sphereg;

namespace {

// Random band-limited velocity tapered to zero latitudinal flow at the band
// edges. Both integrators clamp at the edge but clamp different quantities,
// so only flows tangent to the boundary pose the same ODE to both; the
// taper guarantees that. Max angular magnitude is pinned to `amp`.
VelocityField band_tangent_velocity(const SphereGrid& g, double amp,
                                    int band_limit, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Field<double> a = synth::detail::band_limited_field(g, band_limit, rng);
  const Field<double> b = synth::detail::band_limited_field(g, band_limit, rng);
  const double margin = 0.45;
  VelocityField v(g.rows, g.cols);
  double max_mag = 0.0;
  for (std::size_t i = 0; i < g.rows; ++i) {
    const double edge = std::min(g.lat[i] - g.lat.front(),
                                 g.lat.back() - g.lat[i]);
    const double x = std::clamp(edge / margin, 0.0, 1.0);
    const double w = x * x * (3.0 - 2.0 * x);
    for (std::size_t j = 0; j < g.cols; ++j) {
      v.at(0, i, j) = a.at(0, i, j);
      v.at(1, i, j) = w * b.at(0, i, j);
      max_mag = std::max(max_mag, std::hypot(v.at(0, i, j), v.at(1, i, j)));
    }
  }
  for (double& x : v.data) x *= amp / max_mag;
  return v;
}

}  // namespace

TEST_CASE("zero velocity integrates to the exact identity", "[integrate]") {
  const SphereGrid g = make_grid(8, 16);
  const VectorField zero(g.rows, g.cols);
  const DeformationField phi = ops::scaling_and_squaring(g, zero, 7);
  for (double x : phi.data) CHECK(x == 0.0);
}

TEST_CASE("uniform longitudinal flow composes to a pure rotation",
          "[integrate]") {
  const SphereGrid g = make_grid(8, 16);
  VectorField v(g.rows, g.cols);
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) v.at(0, i, j) = 0.3;
  }
  const DeformationField phi = ops::scaling_and_squaring(g, v, 7);
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      CHECK(phi.at(0, i, j) == Catch::Approx(0.3).margin(1e-6));
      CHECK(phi.at(1, i, j) == Catch::Approx(0.0).margin(1e-12));
    }
  }
}

TEST_CASE("agrees with a 1024-step Euler oracle on a smooth field",
          "[integrate]") {
  const SphereGrid g = make_grid(64, 128);
  const VelocityField v = band_tangent_velocity(g, 0.1, 3, 21);
  const DeformationField fast = ops::scaling_and_squaring(g, v, 7);
  const DeformationField slow = synth::euler_integrate(g, v, 1024);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      worst = std::max(
          worst, great_circle_distance(g.lat[i] + fast.at(1, i, j),
                                       g.lon[j] + fast.at(0, i, j),
                                       g.lat[i] + slow.at(1, i, j),
                                       g.lon[j] + slow.at(0, i, j)));
    }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("forward and reverse integrals invert each other", "[integrate]") {
  const SphereGrid g = make_grid(32, 64);
  const VelocityField v = band_tangent_velocity(g, 0.2, 3, 22);
  VelocityField neg = v;
  for (double& x : neg.data) x = -x;
  const DeformationField fwd = ops::scaling_and_squaring(g, v, 7);
  const DeformationField rev = ops::scaling_and_squaring(g, neg, 7);
  // Composite displacement: follow fwd, then read rev at the target.
  const Field<double> rev_at_target = ops::sample_periodic(g, rev, fwd);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      const double dt = fwd.at(0, i, j) + rev_at_target.at(0, i, j);
      const double dp = fwd.at(1, i, j) + rev_at_target.at(1, i, j);
      worst = std::max(worst,
                       great_circle_distance(g.lat[i], g.lon[j],
                                             g.lat[i] + dp, g.lon[j] + dt));
    }
  }
  CHECK(worst <= 5e-3);
}

TEST_CASE("tape records one stage per squaring", "[integrate]") {
  const SphereGrid g = make_grid(8, 16);
  const VelocityField v = synth::gen_smooth_velocity(g, 0.1, 3, 23);
  const ops::SsTape tape = ops::scaling_and_squaring_tape(g, v, 5);
  CHECK(tape.steps == 5);
  CHECK(tape.stage.size() == 6);
  // Stage zero is the 2^-steps scaling of the input.
  for (std::size_t k = 0; k < v.size(); ++k) {
    CHECK(tape.stage[0].data[k] ==
          Catch::Approx(v.data[k] / 32.0).margin(1e-15));
  }
}

TEST_CASE("invalid inputs abort with diagnostics", "[integrate]") {
  const SphereGrid g = make_grid(8, 16);
  VectorField v(g.rows, g.cols);
  CHECK_THROWS_AS(ops::scaling_and_squaring(g, v, 0), ShapeError);
  v.at(0, 3, 4) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(ops::scaling_and_squaring(g, v, 7), NumericError);
}

TEST_CASE("velocity gradient matches finite differences end to end",
          "[integrate]") {
  const SphereGrid g = make_grid(8, 16);
  const VelocityField v0 = synth::gen_smooth_velocity(g, 0.08, 3, 24);
  auto score_weights = [&](std::size_t k) {
    return std::cos(0.41 * static_cast<double>(k));
  };
  auto f = [&](const std::vector<double>& x) {
    VectorField v(g.rows, g.cols);
    v.data = x;
    const DeformationField phi = ops::scaling_and_squaring(g, v, 7);
    double s = 0.0;
    for (std::size_t k = 0; k < phi.size(); ++k) {
      s += phi.data[k] * score_weights(k);
    }
    return s;
  };
  auto grad = [&](const std::vector<double>& x) {
    VectorField v(g.rows, g.cols);
    v.data = x;
    const ops::SsTape tape = ops::scaling_and_squaring_tape(g, v, 7);
    VectorField up(g.rows, g.cols);
    for (std::size_t k = 0; k < up.size(); ++k) {
      up.data[k] = score_weights(k);
    }
    return ops::scaling_and_squaring_vjp(g, tape, up).data;
  };
  CHECK(ops::grad_check(f, grad, v0.data, 1e-6, 16) < 1e-3);
}
