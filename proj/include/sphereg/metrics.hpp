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
#include <map>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "sphereg/errors.hpp"
#include "sphereg/field.hpp"
#include "sphereg/sphere_grid.hpp"

namespace sphereg::metrics {

// Region areas use the exact cell solid angles, so a polar parcel is not
// inflated by its pixel count.
inline std::optional<double> dice(const SphereGrid& g, const LabelMap& a,
                                  const LabelMap& b, std::uint32_t region) {
  require_grid_match(g, a.rows, a.cols, "dice");
  if (!a.same_shape(b)) throw ShapeError("dice: label maps differ in shape");
  double area_a = 0.0, area_b = 0.0, area_ab = 0.0;
  for (std::size_t i = 0; i < g.rows; ++i) {
    const double w = g.area[i];
    for (std::size_t j = 0; j < g.cols; ++j) {
      const bool in_a = a.at(0, i, j) == region;
      const bool in_b = b.at(0, i, j) == region;
      if (in_a) area_a += w;
      if (in_b) area_b += w;
      if (in_a && in_b) area_ab += w;
    }
  }
  if (area_a == 0.0 && area_b == 0.0) return std::nullopt;  // undefined
  return 2.0 * area_ab / (area_a + area_b);
}

inline std::set<std::uint32_t> label_values(const LabelMap& m,
                                            bool include_background = false) {
  std::set<std::uint32_t> vals(m.data.begin(), m.data.end());
  if (!include_background) vals.erase(0u);
  return vals;
}

// Mean over regions present in at least one map; background label 0 is
// excluded. Absent-from-both regions are undefined and skipped.
inline double dice_overall(const SphereGrid& g, const LabelMap& a,
                           const LabelMap& b,
                           std::map<std::uint32_t, double>* per_region =
                               nullptr) {
  auto regions = label_values(a);
  auto rb = label_values(b);
  regions.insert(rb.begin(), rb.end());
  double sum = 0.0;
  std::size_t n = 0;
  for (std::uint32_t r : regions) {
    const auto d = dice(g, a, b, r);
    if (!d) continue;
    if (per_region) (*per_region)[r] = *d;
    sum += *d;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

// Cells of the region with a 4-neighbor (longitude-periodic, latitude
// non-periodic) carrying a different label.
inline std::vector<std::pair<std::size_t, std::size_t>> boundary_cells(
    const SphereGrid& g, const LabelMap& m, std::uint32_t region) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t j = 0; j < g.cols; ++j) {
      if (m.at(0, i, j) != region) continue;
      const std::uint32_t east = m.at(0, i, (j + 1) % g.cols);
      const std::uint32_t west = m.at(0, i, (j + g.cols - 1) % g.cols);
      const bool edge = east != region || west != region ||
                        (i > 0 && m.at(0, i - 1, j) != region) ||
                        (i + 1 < g.rows && m.at(0, i + 1, j) != region);
      if (edge) out.emplace_back(i, j);
    }
  }
  return out;
}

struct MmdValue {
  double a_to_b = 0.0;
  double b_to_a = 0.0;
  double symmetric = 0.0;
};

// Mean minimum great-circle distance between the two region boundaries,
// reported in both directions and symmetrized by their mean.
inline std::optional<MmdValue> mmd(const SphereGrid& g, const LabelMap& a,
                                   const LabelMap& b, std::uint32_t region) {
  require_grid_match(g, a.rows, a.cols, "mmd");
  if (!a.same_shape(b)) throw ShapeError("mmd: label maps differ in shape");
  const auto ba = boundary_cells(g, a, region);
  const auto bb = boundary_cells(g, b, region);
  if (ba.empty() || bb.empty()) return std::nullopt;
  auto points = [&](const std::vector<std::pair<std::size_t, std::size_t>>& c) {
    std::vector<Vec3> p;
    p.reserve(c.size());
    for (const auto& [i, j] : c) {
      p.push_back(polar_to_cartesian(g.lat[i], g.lon[j]));
    }
    return p;
  };
  const auto pa = points(ba);
  const auto pb = points(bb);
  auto directed = [](const std::vector<Vec3>& from,
                     const std::vector<Vec3>& to) {
    double sum = 0.0;
    for (const Vec3& p : from) {
      double best = -1.0;  // maximize the dot product = minimize the angle
      for (const Vec3& q : to) best = std::max(best, dot(p, q));
      sum += std::acos(std::clamp(best, -1.0, 1.0));
    }
    return sum / static_cast<double>(from.size());
  };
  MmdValue v;
  v.a_to_b = directed(pa, pb);
  v.b_to_a = directed(pb, pa);
  v.symmetric = 0.5 * (v.a_to_b + v.b_to_a);
  return v;
}

inline double mmd_overall(const SphereGrid& g, const LabelMap& a,
                          const LabelMap& b,
                          std::map<std::uint32_t, double>* per_region =
                              nullptr) {
  auto regions = label_values(a);
  auto rb = label_values(b);
  regions.insert(rb.begin(), rb.end());
  double sum = 0.0;
  std::size_t n = 0;
  for (std::uint32_t r : regions) {
    const auto v = mmd(g, a, b, r);
    if (!v) continue;
    if (per_region) (*per_region)[r] = v->symmetric;
    sum += v->symmetric;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

struct JacobianStats {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double fraction_nonpositive = 0.0;
};

// Areal distortion of the warp: determinant of the target map's 2x2 Jacobian
// in grid coordinates (central differences, periodic in longitude, one-sided
// at the first/last rows), normalized by the identity's determinant and
// scaled by sin(lat_target)/sin(lat_source) so 1.0 means locally
// area-preserving on the sphere. Non-positive values mark folding.
inline std::pair<FeatureMap, JacobianStats> jacobian_map(
    const SphereGrid& g, const DeformationField& phi) {
  require_grid_match(g, phi.rows, phi.cols, "jacobian_map");
  const std::size_t M = g.rows, N = g.cols;
  FeatureMap det(M, N, 1);
  JacobianStats st;
  st.min = 1e300;
  st.max = -1e300;
  std::size_t nonpos = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      const std::size_t je = (j + 1) % N, jw = (j + N - 1) % N;
      // d/dj: central, periodic.
      const double dtheta_dj =
          g.dlon + 0.5 * (phi.at(0, i, je) - phi.at(0, i, jw));
      const double dphi_dj = 0.5 * (phi.at(1, i, je) - phi.at(1, i, jw));
      // d/di: central inside, one-sided at the boundary rows.
      double dtheta_di, dphi_di;
      if (i == 0) {
        dtheta_di = phi.at(0, 1, j) - phi.at(0, 0, j);
        dphi_di = g.dlat + phi.at(1, 1, j) - phi.at(1, 0, j);
      } else if (i + 1 == M) {
        dtheta_di = phi.at(0, i, j) - phi.at(0, i - 1, j);
        dphi_di = g.dlat + phi.at(1, i, j) - phi.at(1, i - 1, j);
      } else {
        dtheta_di = 0.5 * (phi.at(0, i + 1, j) - phi.at(0, i - 1, j));
        dphi_di = g.dlat + 0.5 * (phi.at(1, i + 1, j) - phi.at(1, i - 1, j));
      }
      const double lat_t = std::clamp(g.lat[i] + phi.at(1, i, j), 0.0, kPi);
      const double metric = std::sin(lat_t) / g.sin_lat[i];
      const double d =
          (dtheta_dj * dphi_di - dtheta_di * dphi_dj) / (g.dlon * g.dlat) *
          metric;
      det.at(0, i, j) = d;
      st.min = std::min(st.min, d);
      st.max = std::max(st.max, d);
      sum += d;
      if (d <= 0.0) ++nonpos;
    }
  }
  st.mean = sum / static_cast<double>(M * N);
  st.fraction_nonpositive =
      static_cast<double>(nonpos) / static_cast<double>(M * N);
  return {std::move(det), st};
}

// Elementwise mean and population standard deviation of a map collection.
inline std::pair<FeatureMap, FeatureMap> group_stats(
    const std::vector<FeatureMap>& maps) {
  if (maps.size() < 2) {
    throw ShapeError("group_stats: need at least 2 maps");
  }
  for (const auto& m : maps) {
    if (!m.same_shape(maps.front())) {
      throw ShapeError("group_stats: maps differ in shape");
    }
  }
  const double n = static_cast<double>(maps.size());
  FeatureMap mean(maps[0].rows, maps[0].cols, maps[0].channels);
  FeatureMap sd(maps[0].rows, maps[0].cols, maps[0].channels);
  for (const auto& m : maps) {
    for (std::size_t k = 0; k < mean.data.size(); ++k) {
      mean.data[k] += m.data[k];
    }
  }
  for (double& x : mean.data) x /= n;
  for (const auto& m : maps) {
    for (std::size_t k = 0; k < sd.data.size(); ++k) {
      const double r = m.data[k] - mean.data[k];
      sd.data[k] += r * r;
    }
  }
  for (double& x : sd.data) x = std::sqrt(x / n);
  return {std::move(mean), std::move(sd)};
}

struct MetricReport {
  std::map<std::uint32_t, double> per_region_dice;
  double overall_dice = 0.0;
  std::map<std::uint32_t, double> per_region_mmd;  // radians
  double overall_mmd_rad = 0.0;
  double overall_mmd_mm = 0.0;
  double sphere_radius_mm = 100.0;
  JacobianStats jacobian;
  bool has_jacobian = false;
};

inline MetricReport make_report(const SphereGrid& g, const LabelMap& a,
                                const LabelMap& b,
                                const DeformationField* phi = nullptr,
                                double sphere_radius_mm = 100.0) {
  MetricReport r;
  r.sphere_radius_mm = sphere_radius_mm;
  r.overall_dice = dice_overall(g, a, b, &r.per_region_dice);
  r.overall_mmd_rad = mmd_overall(g, a, b, &r.per_region_mmd);
  r.overall_mmd_mm = r.overall_mmd_rad * sphere_radius_mm;
  if (phi) {
    r.jacobian = jacobian_map(g, *phi).second;
    r.has_jacobian = true;
  }
  return r;
}

}  // namespace sphereg::metrics
