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
#include <cmath>
#include <random>
#include <vector>

#include "sphereg/sphereg.hpp"

using namespace sphereg;

namespace {

Field<double> random_field(std::size_t rows, std::size_t cols,
                           std::size_t channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Field<double> f(rows, cols, channels);
  for (double& x : f.data) x = nd(rng);
  return f;
}

}  // namespace

TEST_CASE("center-tap offsets are exact and lateral taps are symmetric",
          "[gnomonic]") {
  // 3-row grid puts the middle row exactly on the equator (lat = pi/2).
  const SphereGrid g = make_grid(3, 8);
  const ops::GnomonicKernelOffsets off = ops::make_gnomonic_offsets(g);
  CHECK(off.spacing == Catch::Approx(g.dlon));
  for (std::size_t i = 0; i < g.rows; ++i) {
    // Tap 4 is the stencil center: no shift, same latitude.
    CHECK(off.dtheta[i * 9 + 4] == 0.0);
    CHECK(off.phi_target[i * 9 + 4] == g.lat[i]);
    for (std::size_t t = 0; t < 9; ++t) {
      CHECK(std::isfinite(off.dtheta[i * 9 + t]));
      CHECK(off.phi_target[i * 9 + t] >= 0.0);
      CHECK(off.phi_target[i * 9 + t] <= kPi);
    }
    // East and west taps mirror in longitude and share a latitude.
    for (int ky = -1; ky <= 1; ++ky) {
      const std::size_t e = static_cast<std::size_t>((ky + 1) * 3 + 2);
      const std::size_t w = static_cast<std::size_t>((ky + 1) * 3 + 0);
      CHECK(off.dtheta[i * 9 + e] ==
            Catch::Approx(-off.dtheta[i * 9 + w]).margin(1e-14));
      CHECK(off.phi_target[i * 9 + e] ==
            Catch::Approx(off.phi_target[i * 9 + w]).margin(1e-14));
    }
  }
  // At the equator the inverse projection has closed forms: lateral taps sit
  // at dtheta = +-atan(s) on the same parallel; vertical taps sit on the
  // meridian at lat -+ atan(s).
  const double s = off.spacing;
  CHECK(off.dtheta[1 * 9 + 5] == Catch::Approx(std::atan(s)).margin(1e-12));
  CHECK(off.phi_target[1 * 9 + 5] == Catch::Approx(kPi / 2).margin(1e-12));
  CHECK(off.dtheta[1 * 9 + 1] == Catch::Approx(0.0).margin(1e-12));
  CHECK(off.phi_target[1 * 9 + 1] ==
        Catch::Approx(kPi / 2 - std::atan(s)).margin(1e-12));
  CHECK(off.phi_target[1 * 9 + 7] ==
        Catch::Approx(kPi / 2 + std::atan(s)).margin(1e-12));
}

TEST_CASE("polar stencils widen in longitude", "[gnomonic]") {
  const SphereGrid g = make_grid(16, 32);
  const ops::GnomonicKernelOffsets off = ops::make_gnomonic_offsets(g);
  // The same tangent-plane patch spans more longitude near the pole than at
  // the equator: that is the latitude adaptivity.
  const std::size_t equator_row = g.rows / 2;
  CHECK(std::abs(off.dtheta[0 * 9 + 5]) >
        2.0 * std::abs(off.dtheta[equator_row * 9 + 5]));
}

TEST_CASE("identity kernel reproduces the input", "[gnomonic]") {
  const SphereGrid g = make_grid(8, 16);
  const ops::GnomonicKernelOffsets off = ops::make_gnomonic_offsets(g);
  const Field<double> in = random_field(8, 16, 2, 31);
  std::vector<double> w(2 * 2 * 9, 0.0);
  w[(0 * 2 + 0) * 9 + 4] = 1.0;  // out 0 <- center tap of in 0
  w[(1 * 2 + 1) * 9 + 4] = 1.0;  // out 1 <- center tap of in 1
  const Field<double> out = ops::spherical_conv(g, off, in, w, {0.0, 0.0}, 2);
  for (std::size_t k = 0; k < in.size(); ++k) {
    CHECK(out.data[k] == Catch::Approx(in.data[k]).margin(1e-9));
  }
}

TEST_CASE("constant input maps to weight-sum times constant plus bias",
          "[gnomonic]") {
  const SphereGrid g = make_grid(8, 16);
  const ops::GnomonicKernelOffsets off = ops::make_gnomonic_offsets(g);
  Field<double> in(8, 16, 1);
  std::fill(in.data.begin(), in.data.end(), 1.7);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> w(9);
  double wsum = 0.0;
  for (double& x : w) {
    x = nd(rng);
    wsum += x;
  }
  const Field<double> out = ops::spherical_conv(g, off, in, w, {0.25}, 1);
  for (double x : out.data) {
    CHECK(x == Catch::Approx(1.7 * wsum + 0.25).margin(1e-12));
  }
}

TEST_CASE("convolution is equivariant to longitude rotation", "[gnomonic]") {
  const SphereGrid g = make_grid(8, 16);
  const ops::GnomonicKernelOffsets off = ops::make_gnomonic_offsets(g);
  const Field<double> in = random_field(8, 16, 1, 32);
  const std::vector<double> w = [&] {
    std::mt19937_64 rng(33);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> v(9);
    for (double& x : v) x = nd(rng);
    return v;
  }();
  const std::size_t shift = 5;
  Field<double> rolled(8, 16, 1);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 16; ++j) {
      rolled.at(0, i, (j + shift) % 16) = in.at(0, i, j);
    }
  }
  const Field<double> a = ops::spherical_conv(g, off, in, w, {0.0}, 1);
  const Field<double> b = ops::spherical_conv(g, off, rolled, w, {0.0}, 1);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 16; ++j) {
      CHECK(b.at(0, i, (j + shift) % 16) ==
            Catch::Approx(a.at(0, i, j)).margin(1e-12));
    }
  }
}

TEST_CASE("convolution adjoint satisfies the inner-product identities",
          "[gnomonic]") {
  const SphereGrid g = make_grid(8, 16);
  const ops::GnomonicKernelOffsets off = ops::make_gnomonic_offsets(g);
  const Field<double> in = random_field(8, 16, 2, 41);
  const Field<double> up = random_field(8, 16, 3, 42);
  std::mt19937_64 rng(43);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> w(3 * 2 * 9);
  for (double& x : w) x = nd(rng);
  const std::vector<double> b(3, 0.0);

  const Field<double> y = ops::spherical_conv(g, off, in, w, b, 3);
  const auto [g_in, g_w, g_b] = ops::spherical_conv_vjp(g, off, in, w, 3, up);

  double up_dot_y = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) up_dot_y += up.data[k] * y.data[k];
  // Bias is zero, so <up, conv(in)> must equal both bilinear-side pairings.
  double gin_dot_in = 0.0;
  for (std::size_t k = 0; k < in.size(); ++k) {
    gin_dot_in += g_in.data[k] * in.data[k];
  }
  double gw_dot_w = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) gw_dot_w += g_w[k] * w[k];
  CHECK(up_dot_y == Catch::Approx(gin_dot_in).epsilon(1e-11));
  CHECK(up_dot_y == Catch::Approx(gw_dot_w).epsilon(1e-11));
  // Bias gradient is the per-channel sum of upstream.
  for (std::size_t co = 0; co < 3; ++co) {
    double s = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t j = 0; j < 16; ++j) s += up.at(co, i, j);
    }
    CHECK(g_b[co] == Catch::Approx(s).margin(1e-12));
  }
}

TEST_CASE("mean pooling averages 2x2 blocks", "[gnomonic]") {
  Field<double> in(2, 4, 1);
  const double vals[8] = {1, 2, 3, 4, 5, 6, 7, 8};
  for (std::size_t j = 0; j < 4; ++j) {
    in.at(0, 0, j) = vals[j];
    in.at(0, 1, j) = vals[4 + j];
  }
  const Field<double> out = ops::pool2(in);
  REQUIRE(out.rows == 1);
  REQUIRE(out.cols == 2);
  CHECK(out.at(0, 0, 0) == Catch::Approx(3.5));
  CHECK(out.at(0, 0, 1) == Catch::Approx(5.5));
}

TEST_CASE("pool and upsample preserve constants exactly", "[gnomonic]") {
  Field<double> in(4, 8, 2);
  std::fill(in.data.begin(), in.data.end(), 2.5);
  const Field<double> down = ops::pool2(in);
  for (double x : down.data) CHECK(x == 2.5);
  const Field<double> upd = ops::upsample2(down);
  REQUIRE(upd.rows == 4);
  REQUIRE(upd.cols == 8);
  for (double x : upd.data) CHECK(x == 2.5);
}

TEST_CASE("pooling adjoint spreads upstream uniformly", "[gnomonic]") {
  const Field<double> up = random_field(2, 4, 1, 51);
  const Field<double> g_in = ops::pool2_vjp(up, 4, 8);
  REQUIRE(g_in.rows == 4);
  REQUIRE(g_in.cols == 8);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(g_in.at(0, i, j) == Catch::Approx(0.25 * up.at(0, i / 2, j / 2)));
    }
  }
}

TEST_CASE("upsample adjoint satisfies the inner-product identity",
          "[gnomonic]") {
  const Field<double> in = random_field(4, 8, 1, 61);
  const Field<double> up = random_field(8, 16, 1, 62);
  const Field<double> y = ops::upsample2(in);
  const Field<double> g_in = ops::upsample2_vjp(up);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) lhs += up.data[k] * y.data[k];
  for (std::size_t k = 0; k < in.size(); ++k) rhs += g_in.data[k] * in.data[k];
  CHECK(lhs == Catch::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("odd dimensions abort with diagnostics", "[gnomonic]") {
  Field<double> odd(3, 8, 1);
  CHECK_THROWS_AS(ops::pool2(odd), ShapeError);
  Field<double> odd_up(3, 8, 1);
  CHECK_THROWS_AS(ops::upsample2_vjp(odd_up), ShapeError);
  const SphereGrid g = make_grid(8, 16);
  const ops::GnomonicKernelOffsets off = ops::make_gnomonic_offsets(g);
  Field<double> in(8, 16, 1);
  CHECK_THROWS_AS(
      ops::spherical_conv(g, off, in, std::vector<double>(5, 0.0), {0.0}, 1),
      ShapeError);
  const SphereGrid g2 = make_grid(6, 12);
  const ops::GnomonicKernelOffsets off2 = ops::make_gnomonic_offsets(g2);
  CHECK_THROWS_AS(
      ops::spherical_conv(g, off2, in, std::vector<double>(9, 0.0), {0.0}, 1),
      ShapeError);
}
