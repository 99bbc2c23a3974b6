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

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "sphereg/errors.hpp"
#include "sphereg/field.hpp"
#include "sphereg/sphere_grid.hpp"

namespace sphereg::prior {

// Laplacian L = D - A of the 4-neighbor grid graph with longitude wraparound.
// Horizontal edges in row i carry weight 1/sin(lat_i) (stronger coupling
// where cells are physically closer), vertical edges carry weight 1. The
// topology is fixed, so the matrix is stored implicitly: one horizontal
// weight per row plus the precomputed diagonal.
struct WeightedGraphLaplacian {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> wh;      // horizontal edge weight per row
  std::vector<double> degree;  // diagonal of D, size rows*cols
  bool uniform = false;        // true: all edge weights 1 (ablation mode)

  std::size_t index(std::size_t i, std::size_t j) const {
    return i * cols + j;
  }
};

inline WeightedGraphLaplacian build_weighted_laplacian(
    const SphereGrid& g, bool uniform_weights = false) {
  WeightedGraphLaplacian L;
  L.rows = g.rows;
  L.cols = g.cols;
  L.uniform = uniform_weights;
  L.wh.resize(g.rows);
  for (std::size_t i = 0; i < g.rows; ++i) {
    L.wh[i] = uniform_weights ? 1.0 : 1.0 / g.sin_lat[i];
  }
  L.degree.resize(g.rows * g.cols);
  for (std::size_t i = 0; i < g.rows; ++i) {
    double d = 2.0 * L.wh[i];  // left and right neighbors, both weight wh[i]
    if (i > 0) d += 1.0;
    if (i + 1 < g.rows) d += 1.0;
    for (std::size_t j = 0; j < g.cols; ++j) {
      L.degree[L.index(i, j)] = d;
    }
  }
  return L;
}

// y = L x for one scalar component laid out row-major over the grid.
inline void laplacian_matvec(const WeightedGraphLaplacian& L, const double* x,
                             double* y) {
  const std::size_t M = L.rows, N = L.cols;
  for (std::size_t i = 0; i < M; ++i) {
    const double w = L.wh[i];
    for (std::size_t j = 0; j < N; ++j) {
      const std::size_t k = i * N + j;
      double acc = L.degree[k] * x[k];
      acc -= w * (x[i * N + (j + 1) % N] + x[i * N + (j + N - 1) % N]);
      if (i > 0) acc -= x[k - N];
      if (i + 1 < M) acc -= x[k + N];
      y[k] = acc;
    }
  }
}

// x' L x evaluated as the edge sum of w_ij (x_i - x_j)^2: exactly zero on
// constant fields, never negative.
inline double laplacian_quadratic(const WeightedGraphLaplacian& L,
                                  const double* x) {
  const std::size_t M = L.rows, N = L.cols;
  double acc = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    const double w = L.wh[i];
    for (std::size_t j = 0; j < N; ++j) {
      const std::size_t k = i * N + j;
      const double dh = x[k] - x[i * N + (j + 1) % N];
      acc += w * dh * dh;
      if (i + 1 < M) {
        const double dv = x[k] - x[k + N];
        acc += dv * dv;
      }
    }
  }
  return acc;
}

// Chord displacement on the embedded sphere: at each vertex p, the output is
// T(p + d) - T(p) with T the polar-to-Cartesian map. Channels are (x, y, z).
inline Field<double> geodesic_velocity(const SphereGrid& g,
                                       const VectorField& d) {
  require_grid_match(g, d.rows, d.cols, "geodesic_velocity");
  Field<double> out(g.rows, g.cols, 3);
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      const Vec3 a = polar_to_cartesian(g.lat[i], g.lon[j]);
      const Vec3 b = polar_to_cartesian(g.lat[i] + d.at(1, i, j),
                                        g.lon[j] + d.at(0, i, j));
      out.at(0, i, j) = b.x - a.x;
      out.at(1, i, j) = b.y - a.y;
      out.at(2, i, j) = b.z - a.z;
    }
  }
  return out;
}

// Adjoint of geodesic_velocity: pulls a Cartesian 3-channel gradient back to
// the polar displacement channels through the Jacobian of T at the displaced
// point.
inline VectorField geodesic_velocity_vjp(const SphereGrid& g,
                                         const VectorField& d,
                                         const Field<double>& upstream) {
  require_grid_match(g, d.rows, d.cols, "geodesic_velocity_vjp");
  if (upstream.channels != 3 || upstream.rows != d.rows ||
      upstream.cols != d.cols) {
    throw ShapeError("geodesic_velocity_vjp: upstream must be 3-channel");
  }
  VectorField grad(d.rows, d.cols);
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      const double lat = g.lat[i] + d.at(1, i, j);
      const double lon = g.lon[j] + d.at(0, i, j);
      const auto J = polar_to_cartesian_jacobian(lat, lon);
      const double ux = upstream.at(0, i, j);
      const double uy = upstream.at(1, i, j);
      const double uz = upstream.at(2, i, j);
      // J columns: [dT/dlat, dT/dlon]; rows x, y, z.
      grad.at(0, i, j) = ux * J[1] + uy * J[3] + uz * J[5];
      grad.at(1, i, j) = ux * J[0] + uy * J[2] + uz * J[4];
    }
  }
  return grad;
}

// Pushes per-vertex polar velocity variances (channels: theta, phi) to a
// 3-channel Cartesian variance field. The tangential columns of T's Jacobian
// at the vertex are orthogonal with squared norms (sin^2 lat, 1), so the
// total Cartesian variance is sin^2(lat)*s_theta + s_phi; it is split evenly
// across the three components to keep the diagonal full-rank (a rank-2
// linearized covariance would put -inf log terms in the KL).
inline Field<double> velocity_variance_to_cartesian(
    const SphereGrid& g, const Field<double>& sigma2_polar) {
  require_grid_match(g, sigma2_polar.rows, sigma2_polar.cols,
                     "velocity_variance_to_cartesian");
  if (sigma2_polar.channels != 2) {
    throw ShapeError("velocity_variance_to_cartesian: expected 2 channels");
  }
  Field<double> out(g.rows, g.cols, 3);
  for (std::size_t i = 0; i < g.rows; ++i) {
    const double s2 = g.sin_lat[i] * g.sin_lat[i];
    for (std::size_t j = 0; j < g.cols; ++j) {
      const double total =
          s2 * sigma2_polar.at(0, i, j) + sigma2_polar.at(1, i, j);
      const double third = total / 3.0;
      out.at(0, i, j) = third;
      out.at(1, i, j) = third;
      out.at(2, i, j) = third;
    }
  }
  return out;
}

inline Field<double> velocity_variance_to_cartesian_vjp(
    const SphereGrid& g, const Field<double>& upstream) {
  if (upstream.channels != 3) {
    throw ShapeError("velocity_variance_to_cartesian_vjp: need 3 channels");
  }
  Field<double> grad(upstream.rows, upstream.cols, 2);
  for (std::size_t i = 0; i < upstream.rows; ++i) {
    const double s2 = g.sin_lat[i] * g.sin_lat[i];
    for (std::size_t j = 0; j < upstream.cols; ++j) {
      const double sum = (upstream.at(0, i, j) + upstream.at(1, i, j) +
                          upstream.at(2, i, j)) /
                         3.0;
      grad.at(0, i, j) = s2 * sum;
      grad.at(1, i, j) = sum;
    }
  }
  return grad;
}

// MAP prior energy: 1/2 mu'^T (lambda L) mu' summed over the 3 Cartesian
// channels of the geodesic velocity. This is the point-estimate objective;
// the variational bracket below adds the entropy and trace terms.
inline double prior_quad_term(const SphereGrid& g, const VectorField& mu,
                              const WeightedGraphLaplacian& L, double lambda) {
  if (lambda <= 0.0) {
    throw NumericError("prior_quad_term: lambda must be positive");
  }
  const Field<double> mu_prime = geodesic_velocity(g, mu);
  double quad = 0.0;
  for (std::size_t ch = 0; ch < 3; ++ch) {
    quad += laplacian_quadratic(L, mu_prime.channel(ch));
  }
  return 0.5 * lambda * quad;
}

// Gradient of prior_quad_term w.r.t. the polar displacement channels.
inline VectorField prior_quad_grad(const SphereGrid& g, const VectorField& mu,
                                   const WeightedGraphLaplacian& L,
                                   double lambda) {
  const std::size_t plane = g.rows * g.cols;
  const Field<double> mu_prime = geodesic_velocity(g, mu);
  Field<double> g_mu_prime(g.rows, g.cols, 3);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    laplacian_matvec(L, mu_prime.channel(ch), g_mu_prime.channel(ch));
    double* p = g_mu_prime.channel(ch);
    for (std::size_t k = 0; k < plane; ++k) p[k] *= lambda;
  }
  return geodesic_velocity_vjp(g, mu, g_mu_prime);
}

// KL bracket of the loss: 1/2 [ lambda tr(D_S Sigma) - sum log sigma^2 +
// mu'^T (lambda L) mu' ] with mu' = geodesic_velocity(mu) and Sigma the
// diagonal 3-channel Cartesian variance, each component regularized
// independently. Additive constants of the exact KL are dropped.
inline double prior_kl_term(const SphereGrid& g, const VectorField& mu,
                            const Field<double>& sigma_cart,
                            const WeightedGraphLaplacian& L, double lambda) {
  if (sigma_cart.channels != 3 || sigma_cart.rows != g.rows ||
      sigma_cart.cols != g.cols) {
    throw ShapeError("prior_kl_term: sigma_cart must be 3-channel on grid");
  }
  if (lambda <= 0.0) {
    throw NumericError("prior_kl_term: lambda must be positive");
  }
  double trace = 0.0, logdet = 0.0;
  const std::size_t plane = g.rows * g.cols;
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const double* s = sigma_cart.channel(ch);
    for (std::size_t k = 0; k < plane; ++k) {
      if (!(s[k] > 0.0)) {
        throw NumericError("prior_kl_term: nonpositive variance");
      }
      trace += L.degree[k] * s[k];
      logdet += std::log(s[k]);
    }
  }
  return 0.5 * (lambda * trace - logdet) + prior_quad_term(g, mu, L, lambda);
}

// Gradients of prior_kl_term w.r.t. mu (polar displacement channels) and the
// Cartesian variance channels.
inline std::pair<VectorField, Field<double>> prior_kl_grad(
    const SphereGrid& g, const VectorField& mu, const Field<double>& sigma_cart,
    const WeightedGraphLaplacian& L, double lambda) {
  const std::size_t plane = g.rows * g.cols;
  Field<double> g_sigma(g.rows, g.cols, 3);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const double* s = sigma_cart.channel(ch);
    double* gs = g_sigma.channel(ch);
    for (std::size_t k = 0; k < plane; ++k) {
      gs[k] = 0.5 * (lambda * L.degree[k] - 1.0 / s[k]);
    }
  }
  VectorField g_mu = prior_quad_grad(g, mu, L, lambda);
  return {std::move(g_mu), std::move(g_sigma)};
}

}  // namespace sphereg::prior
