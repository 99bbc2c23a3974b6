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

#include "sphereg/field.hpp"
#include "sphereg/sphere_grid.hpp"

namespace sphereg::ops {

enum class Interp { bilinear, nearest };

// Diagnostics for one sampling pass. `clamped` counts sample points whose
// latitude coordinate fell outside [lat[0], lat[M-1]] and was clamped.
struct SampleStats {
  std::size_t clamped = 0;
};

namespace detail {

// Fractional grid coordinates of the displaced point. Working in index space
// (row = i + d_phi/dlat) keeps zero displacement bit-exact: the fractional
// parts are exactly 0 and bilinear reduces to a direct copy.
struct SampleCoord {
  std::size_t i0, i1, j0, j1;
  double fi, fj;
  bool clamped;
};

inline SampleCoord locate(const SphereGrid& g, std::size_t i, std::size_t j,
                          double d_theta, double d_phi) {
  SampleCoord c{};
  const double rmax = static_cast<double>(g.rows - 1);
  double u = static_cast<double>(i) + d_phi / g.dlat;
  c.clamped = (u < 0.0 || u > rmax);
  if (g.rows == 1) {
    c.i0 = c.i1 = 0;
    c.fi = 0.0;
  } else {
    u = std::clamp(u, 0.0, rmax);
    double fl = std::floor(u);
    if (fl > rmax - 1.0) fl = rmax - 1.0;  // top row: i0 = M-2, fi = 1
    c.i0 = static_cast<std::size_t>(fl);
    c.i1 = c.i0 + 1;
    c.fi = u - fl;
  }

  const double n = static_cast<double>(g.cols);
  double v = static_cast<double>(j) + d_theta / g.dlon;
  v -= n * std::floor(v / n);
  if (v >= n) v = 0.0;
  double vfl = std::floor(v);
  c.fj = v - vfl;
  c.j0 = static_cast<std::size_t>(vfl) % g.cols;
  c.j1 = (c.j0 + 1) % g.cols;
  return c;
}

}  // namespace detail

// Resamples every channel of `map` at the displaced coordinates
// (theta_j + d_theta, phi_i + d_phi): bilinear in both axes, wrapping in
// longitude and clamping in latitude. Zero displacement returns the input
// bit-for-bit.
inline Field<double> sample_periodic(const SphereGrid& g,
                                     const Field<double>& map,
                                     const VectorField& coords,
                                     Interp interp = Interp::bilinear,
                                     SampleStats* stats = nullptr) {
  require_grid_match(g, map.rows, map.cols, "sample_periodic(map)");
  require_grid_match(g, coords.rows, coords.cols, "sample_periodic(coords)");
  Field<double> out(map.rows, map.cols, map.channels);
  SampleStats local;
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      const auto c = detail::locate(g, i, j, coords.at(0, i, j),
                                    coords.at(1, i, j));
      if (c.clamped) ++local.clamped;
      if (interp == Interp::bilinear) {
        const double w00 = (1.0 - c.fi) * (1.0 - c.fj);
        const double w01 = (1.0 - c.fi) * c.fj;
        const double w10 = c.fi * (1.0 - c.fj);
        const double w11 = c.fi * c.fj;
        for (std::size_t ch = 0; ch < map.channels; ++ch) {
          out.at(ch, i, j) = w00 * map.at(ch, c.i0, c.j0) +
                             w01 * map.at(ch, c.i0, c.j1) +
                             w10 * map.at(ch, c.i1, c.j0) +
                             w11 * map.at(ch, c.i1, c.j1);
        }
      } else {
        const std::size_t in = (c.fi < 0.5) ? c.i0 : c.i1;
        const std::size_t jn = (c.fj < 0.5) ? c.j0 : c.j1;
        for (std::size_t ch = 0; ch < map.channels; ++ch) {
          out.at(ch, i, j) = map.at(ch, in, jn);
        }
      }
    }
  }
  if (stats) stats->clamped += local.clamped;
  return out;
}

// Adjoint of the bilinear sampler: given the upstream gradient of a scalar
// loss w.r.t. the output, returns gradients w.r.t. the map values and the
// displacement field. The coordinate gradient is zero where the latitude
// clamp was active (the clamp is flat there).
inline std::pair<Field<double>, VectorField> sample_periodic_vjp(
    const SphereGrid& g, const Field<double>& map, const VectorField& coords,
    const Field<double>& upstream) {
  require_grid_match(g, map.rows, map.cols, "sample_periodic_vjp(map)");
  require_grid_match(g, coords.rows, coords.cols,
                     "sample_periodic_vjp(coords)");
  if (!upstream.same_shape(map)) {
    throw ShapeError("sample_periodic_vjp: upstream shape mismatch");
  }
  Field<double> g_map(map.rows, map.cols, map.channels);
  VectorField g_coords(map.rows, map.cols);
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      const auto c = detail::locate(g, i, j, coords.at(0, i, j),
                                    coords.at(1, i, j));
      const double w00 = (1.0 - c.fi) * (1.0 - c.fj);
      const double w01 = (1.0 - c.fi) * c.fj;
      const double w10 = c.fi * (1.0 - c.fj);
      const double w11 = c.fi * c.fj;
      double du = 0.0, dv = 0.0;
      for (std::size_t ch = 0; ch < map.channels; ++ch) {
        const double up = upstream.at(ch, i, j);
        g_map.at(ch, c.i0, c.j0) += up * w00;
        g_map.at(ch, c.i0, c.j1) += up * w01;
        g_map.at(ch, c.i1, c.j0) += up * w10;
        g_map.at(ch, c.i1, c.j1) += up * w11;
        const double m00 = map.at(ch, c.i0, c.j0);
        const double m01 = map.at(ch, c.i0, c.j1);
        const double m10 = map.at(ch, c.i1, c.j0);
        const double m11 = map.at(ch, c.i1, c.j1);
        du += up * ((1.0 - c.fj) * (m10 - m00) + c.fj * (m11 - m01));
        dv += up * ((1.0 - c.fi) * (m01 - m00) + c.fi * (m11 - m10));
      }
      g_coords.at(0, i, j) = dv / g.dlon;
      g_coords.at(1, i, j) = c.clamped ? 0.0 : du / g.dlat;
    }
  }
  return {std::move(g_map), std::move(g_coords)};
}

// Nearest-neighbor resampling of integer labels through a displacement field.
// Output values are a subset of the input values.
inline LabelMap warp_labels(const SphereGrid& g, const LabelMap& labels,
                            const VectorField& phi) {
  require_grid_match(g, labels.rows, labels.cols, "warp_labels(labels)");
  require_grid_match(g, phi.rows, phi.cols, "warp_labels(phi)");
  LabelMap out(labels.rows, labels.cols, labels.channels);
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      const auto c = detail::locate(g, i, j, phi.at(0, i, j), phi.at(1, i, j));
      const std::size_t in = (c.fi < 0.5) ? c.i0 : c.i1;
      const std::size_t jn = (c.fj < 0.5) ? c.j0 : c.j1;
      for (std::size_t ch = 0; ch < labels.channels; ++ch) {
        out.at(ch, i, j) = labels.at(ch, in, jn);
      }
    }
  }
  return out;
}

// Bilinear probe of one channel at an absolute position (lat, lon) in
// radians, with the same wrap/clamp rules as sample_periodic. Used by
// rotation resampling, where the target is a position rather than a
// displacement from a grid point.
inline double sample_point(const SphereGrid& g, const Field<double>& map,
                           std::size_t ch, double lat, double lon) {
  const double rmax = static_cast<double>(g.rows - 1);
  double u = lat / g.dlat - 0.5;
  u = std::clamp(u, 0.0, rmax);
  double fl = std::floor(u);
  if (fl > rmax - 1.0) fl = rmax - 1.0;
  const std::size_t i0 = static_cast<std::size_t>(fl);
  const double fi = u - fl;
  const double n = static_cast<double>(g.cols);
  double v = lon / g.dlon;
  v -= n * std::floor(v / n);
  if (v >= n) v = 0.0;
  const double vfl = std::floor(v);
  const double fj = v - vfl;
  const std::size_t j0 = static_cast<std::size_t>(vfl) % g.cols;
  const std::size_t j1 = (j0 + 1) % g.cols;
  return (1.0 - fi) * ((1.0 - fj) * map.at(ch, i0, j0) +
                       fj * map.at(ch, i0, j1)) +
         fi * ((1.0 - fj) * map.at(ch, i0 + 1, j0) +
               fj * map.at(ch, i0 + 1, j1));
}

}  // namespace sphereg::ops
