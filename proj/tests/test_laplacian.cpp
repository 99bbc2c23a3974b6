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

// Dense reference built directly from the edge definition; materializing it
// through the sparse matvec under test would be circular.
std::vector<double> dense_laplacian(const SphereGrid& g, bool uniform) {
  const std::size_t n = g.size();
  std::vector<double> L(n * n, 0.0);
  auto idx = [&](std::size_t i, std::size_t j) { return i * g.cols + j; };
  auto add_edge = [&](std::size_t a, std::size_t b, double w) {
    L[a * n + a] += w;
    L[b * n + b] += w;
    L[a * n + b] -= w;
    L[b * n + a] -= w;
  };
  for (std::size_t i = 0; i < g.rows; ++i) {
    const double wh = uniform ? 1.0 : 1.0 / g.sin_lat[i];
    for (std::size_t j = 0; j < g.cols; ++j) {
      add_edge(idx(i, j), idx(i, (j + 1) % g.cols), wh);
      if (i + 1 < g.rows) add_edge(idx(i, j), idx(i + 1, j), 1.0);
    }
  }
  return L;
}

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> x(n);
  for (double& v : x) v = nd(rng);
  return x;
}

}  // namespace

TEST_CASE("edge weights follow the latitude metric", "[laplacian]") {
  const SphereGrid g = make_grid(2, 4);  // both rows at |sin lat| = sqrt(2)/2
  const auto L = prior::build_weighted_laplacian(g);
  CHECK(L.wh[0] == Catch::Approx(std::sqrt(2.0)).margin(1e-12));
  CHECK(L.wh[1] == Catch::Approx(std::sqrt(2.0)).margin(1e-12));
  // Interior horizontal weights strictly increase toward the poles.
  const SphereGrid g8 = make_grid(8, 16);
  const auto L8 = prior::build_weighted_laplacian(g8);
  for (std::size_t i = 0; i + 1 < 4; ++i) {
    CHECK(L8.wh[i] > L8.wh[i + 1]);  // northern half: poleward rows heavier
  }
  const auto Lu = prior::build_weighted_laplacian(g, true);
  CHECK(Lu.wh[0] == 1.0);
  CHECK(Lu.wh[1] == 1.0);
}

TEST_CASE("constant vectors span the null space exactly", "[laplacian]") {
  const SphereGrid g = make_grid(4, 8);
  const auto L = prior::build_weighted_laplacian(g);
  std::vector<double> ones(g.size(), 1.0), y(g.size());
  prior::laplacian_matvec(L, ones.data(), y.data());
  for (double v : y) CHECK(std::abs(v) < 1e-12);
  CHECK(prior::laplacian_quadratic(L, ones.data()) == 0.0);
}

TEST_CASE("matvec and quadratic form match the dense reference",
          "[laplacian]") {
  const SphereGrid g = make_grid(4, 8);
  const std::size_t n = g.size();
  for (bool uniform : {false, true}) {
    const auto L = prior::build_weighted_laplacian(g, uniform);
    const auto D = dense_laplacian(g, uniform);
    // Symmetry and zero row sums of the dense reference itself.
    for (std::size_t a = 0; a < n; ++a) {
      double row = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        CHECK(D[a * n + b] == Catch::Approx(D[b * n + a]).margin(1e-12));
        row += D[a * n + b];
      }
      CHECK(std::abs(row) < 1e-12);
    }
    const std::vector<double> x = random_vector(n, uniform ? 31 : 30);
    std::vector<double> y(n);
    prior::laplacian_matvec(L, x.data(), y.data());
    double quad_dense = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      double acc = 0.0;
      for (std::size_t b = 0; b < n; ++b) acc += D[a * n + b] * x[b];
      CHECK(y[a] == Catch::Approx(acc).margin(1e-10));
      quad_dense += x[a] * acc;
    }
    CHECK(prior::laplacian_quadratic(L, x.data()) ==
          Catch::Approx(quad_dense).margin(1e-9));
    CHECK(prior::laplacian_quadratic(L, x.data()) >= 0.0);
  }
}

TEST_CASE("geodesic velocity is the exact chord displacement", "[laplacian]") {
  // A 3x4 grid puts its middle row exactly on the equator.
  const SphereGrid g = make_grid(3, 4);
  REQUIRE(g.lat[1] == Catch::Approx(kPi / 2.0).margin(1e-15));
  VectorField d(g.rows, g.cols);
  d.at(0, 1, 0) = kPi;  // antipodal longitude step at (lat pi/2, lon 0)
  const Field<double> v = prior::geodesic_velocity(g, d);
  CHECK(v.at(0, 1, 0) == Catch::Approx(-2.0).margin(1e-12));
  CHECK(v.at(1, 1, 0) == Catch::Approx(0.0).margin(1e-12));
  CHECK(v.at(2, 1, 0) == Catch::Approx(0.0).margin(1e-12));

  VectorField small(g.rows, g.cols);
  small.at(0, 1, 2) = 0.01;
  const Field<double> vs = prior::geodesic_velocity(g, small);
  const double norm =
      std::sqrt(vs.at(0, 1, 2) * vs.at(0, 1, 2) +
                vs.at(1, 1, 2) * vs.at(1, 1, 2) +
                vs.at(2, 1, 2) * vs.at(2, 1, 2));
  CHECK(norm == Catch::Approx(2.0 * std::sin(0.005)).margin(1e-12));
}

TEST_CASE("prior energy scales linearly and vanishes at zero", "[laplacian]") {
  const SphereGrid g = make_grid(4, 8);
  const auto L = prior::build_weighted_laplacian(g);
  const VectorField zero(g.rows, g.cols);
  CHECK(prior::prior_quad_term(g, zero, L, 100.0) == 0.0);

  VectorField mu(g.rows, g.cols);
  std::mt19937_64 rng(33);
  std::normal_distribution<double> nd(0.0, 0.1);
  for (double& x : mu.data) x = nd(rng);
  const double e1 = prior::prior_quad_term(g, mu, L, 10.0);
  const double e2 = prior::prior_quad_term(g, mu, L, 20.0);
  CHECK(e1 > 0.0);
  CHECK(e2 == Catch::Approx(2.0 * e1).epsilon(1e-12));
  CHECK_THROWS_AS(prior::prior_quad_term(g, mu, L, 0.0), NumericError);
}

TEST_CASE("variance conversion preserves total tangent variance",
          "[laplacian]") {
  const SphereGrid g = make_grid(4, 8);
  Field<double> s2(g.rows, g.cols, 2);
  std::mt19937_64 rng(34);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (double& x : s2.data) x = std::exp(nd(rng));
  const Field<double> cart = prior::velocity_variance_to_cartesian(g, s2);
  for (std::size_t i = 0; i < g.rows; ++i) {
    const double sin2 = g.sin_lat[i] * g.sin_lat[i];
    for (std::size_t j = 0; j < g.cols; ++j) {
      const double tangent = sin2 * s2.at(0, i, j) + s2.at(1, i, j);
      const double total =
          cart.at(0, i, j) + cart.at(1, i, j) + cart.at(2, i, j);
      CHECK(total == Catch::Approx(tangent).epsilon(1e-12));
      CHECK(cart.at(0, i, j) == Catch::Approx(cart.at(1, i, j)));
      CHECK(cart.at(1, i, j) == Catch::Approx(cart.at(2, i, j)));
    }
  }
}

TEST_CASE("closed-form KL bracket matches a dense-matrix reference",
          "[laplacian]") {
  const SphereGrid g = make_grid(4, 8);
  const std::size_t n = g.size();
  const auto L = prior::build_weighted_laplacian(g);
  const auto D = dense_laplacian(g, false);

  VectorField mu(g.rows, g.cols);
  Field<double> s2(g.rows, g.cols, 2);
  std::mt19937_64 rng(35);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (double& x : mu.data) x = 0.1 * nd(rng);
  for (double& x : s2.data) x = std::exp(0.3 * nd(rng));
  const Field<double> sigma_cart =
      prior::velocity_variance_to_cartesian(g, s2);
  const double lambda = 42.0;

  // Reference: 1/2 [lambda tr(L Sigma) - log det Sigma + lambda mu'^T L mu']
  // accumulated over the 3 Cartesian channels with the same dropped
  // constants as the closed form.
  const Field<double> mu_prime = prior::geodesic_velocity(g, mu);
  double trace = 0.0, logdet = 0.0, quad = 0.0;
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t k = 0; k < n; ++k) {
      trace += D[k * n + k] * sigma_cart.data[ch * n + k];
      logdet += std::log(sigma_cart.data[ch * n + k]);
    }
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = 0; b < n; ++b) {
        quad += mu_prime.data[ch * n + a] * D[a * n + b] *
                mu_prime.data[ch * n + b];
      }
    }
  }
  const double reference = 0.5 * (lambda * trace - logdet + lambda * quad);
  const double closed = prior::prior_kl_term(g, mu, sigma_cart, L, lambda);
  CHECK(closed == Catch::Approx(reference).epsilon(1e-10));
}

TEST_CASE("nonpositive variances are rejected", "[laplacian]") {
  const SphereGrid g = make_grid(4, 8);
  const auto L = prior::build_weighted_laplacian(g);
  const VectorField mu(g.rows, g.cols);
  Field<double> bad(g.rows, g.cols, 3);
  std::fill(bad.data.begin(), bad.data.end(), 1.0);
  bad.at(1, 2, 3) = 0.0;
  CHECK_THROWS_AS(prior::prior_kl_term(g, mu, bad, L, 10.0), NumericError);
}

TEST_CASE("prior gradient matches finite differences", "[laplacian]") {
  const SphereGrid g = make_grid(4, 8);
  const auto L = prior::build_weighted_laplacian(g);
  VectorField mu(g.rows, g.cols);
  std::mt19937_64 rng(36);
  std::normal_distribution<double> nd(0.0, 0.1);
  for (double& x : mu.data) x = nd(rng);
  auto f = [&](const std::vector<double>& x) {
    VectorField m(g.rows, g.cols);
    m.data = x;
    return prior::prior_quad_term(g, m, L, 17.0);
  };
  auto grad = [&](const std::vector<double>& x) {
    VectorField m(g.rows, g.cols);
    m.data = x;
    return prior::prior_quad_grad(g, m, L, 17.0).data;
  };
  CHECK(ops::grad_check(f, grad, mu.data, 1e-6, 24) < 1e-6);
}
