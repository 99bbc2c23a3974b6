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
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "sphereg/errors.hpp"

namespace sphereg {

inline constexpr double kPi = std::numbers::pi_v<double>;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi_v<double>;

// Equirectangular discretization of the unit sphere. Rows are colatitude
// bands, columns are longitudes; row samples sit at cell centers so the
// poles themselves are never grid points and sin(lat) > 0 everywhere.
struct SphereGrid {
  std::size_t rows = 0;  // colatitude samples (M)
  std::size_t cols = 0;  // longitude samples (N), periodic

  std::vector<double> lat;       // colatitude of each row, (i+0.5)*pi/M
  std::vector<double> lon;       // longitude of each column, 2*pi*j/N
  std::vector<double> sin_lat;   // sin(lat[i]), distortion weight per row
  std::vector<double> area;      // exact cell solid angle per row

  double dlat = 0.0;  // row spacing pi/M
  double dlon = 0.0;  // column spacing 2*pi/N

  std::size_t size() const { return rows * cols; }
  std::size_t index(std::size_t i, std::size_t j) const { return i * cols + j; }
};

namespace detail {

// Table construction without the public size minimums; interior stages of
// pooled pyramids may legitimately reach one row.
inline SphereGrid make_grid_any(std::size_t rows, std::size_t cols);

}  // namespace detail

// Builds the grid tables. The per-row cell area is the exact integral of the
// solid-angle element over the cell, cos(lat_lo) - cos(lat_hi) times dlon,
// so the total area sums to 4*pi for every grid size.
inline SphereGrid make_grid(std::size_t rows, std::size_t cols) {
  if (rows < 2 || cols < 4) {
    throw ShapeError("make_grid: need rows >= 2 and cols >= 4, got " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (cols % 2 != 0) {
    throw ShapeError("make_grid: cols must be even, got " +
                     std::to_string(cols));
  }
  return detail::make_grid_any(rows, cols);
}

inline SphereGrid detail::make_grid_any(std::size_t rows, std::size_t cols) {
  SphereGrid g;
  g.rows = rows;
  g.cols = cols;
  g.dlat = kPi / static_cast<double>(rows);
  g.dlon = kTwoPi / static_cast<double>(cols);
  g.lat.resize(rows);
  g.sin_lat.resize(rows);
  g.area.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const double di = static_cast<double>(i);
    g.lat[i] = (di + 0.5) * g.dlat;
    g.sin_lat[i] = std::sin(g.lat[i]);
    const double lo = di * g.dlat;
    const double hi = (di + 1.0) * g.dlat;
    g.area[i] = (std::cos(lo) - std::cos(hi)) * g.dlon;
  }
  g.lon.resize(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    g.lon[j] = static_cast<double>(j) * g.dlon;
  }
  return g;
}

// Maps longitude into [0, 2*pi). Exact multiples of 2*pi map to 0.
inline double wrap_longitude(double theta) {
  double t = std::fmod(theta, kTwoPi);
  if (t < 0.0) t += kTwoPi;
  if (t >= kTwoPi) t = 0.0;  // fmod can round up to 2*pi for tiny negatives
  return t;
}

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

inline Vec3 operator+(const Vec3& a, const Vec3& b) {
  return {a.x + b.x, a.y + b.y, a.z + b.z};
}
inline Vec3 operator-(const Vec3& a, const Vec3& b) {
  return {a.x - b.x, a.y - b.y, a.z - b.z};
}
inline Vec3 operator*(double s, const Vec3& a) {
  return {s * a.x, s * a.y, s * a.z};
}
inline double dot(const Vec3& a, const Vec3& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

// Embedding of polar coordinates (colatitude, longitude) on the unit sphere.
inline Vec3 polar_to_cartesian(double lat, double lon) {
  const double s = std::sin(lat);
  return {s * std::cos(lon), s * std::sin(lon), std::cos(lat)};
}

// Inverse of polar_to_cartesian for unit vectors. Longitude of a pole is 0.
inline std::array<double, 2> cartesian_to_polar(const Vec3& p) {
  const double lat = std::acos(std::clamp(p.z, -1.0, 1.0));
  double lon = std::atan2(p.y, p.x);
  if (lon < 0.0) lon += kTwoPi;
  if (p.x == 0.0 && p.y == 0.0) lon = 0.0;
  return {lat, lon};
}

// Jacobian of polar_to_cartesian: 3x2 matrix, columns are d/dlat and d/dlon.
inline std::array<double, 6> polar_to_cartesian_jacobian(double lat,
                                                         double lon) {
  const double sl = std::sin(lat), cl = std::cos(lat);
  const double so = std::sin(lon), co = std::cos(lon);
  // Row-major: [dx/dlat, dx/dlon; dy/dlat, dy/dlon; dz/dlat, dz/dlon]
  return {cl * co, -sl * so, cl * so, sl * co, -sl, 0.0};
}

// Great-circle distance between two points given in polar coordinates.
// Uses the Vincenty formula, stable for small and near-antipodal separations.
inline double great_circle_distance(double lat1, double lon1, double lat2,
                                    double lon2) {
  const Vec3 a = polar_to_cartesian(lat1, lon1);
  const Vec3 b = polar_to_cartesian(lat2, lon2);
  const Vec3 cr = {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z,
                   a.x * b.y - a.y * b.x};
  return std::atan2(norm(cr), dot(a, b));
}

}  // namespace sphereg
