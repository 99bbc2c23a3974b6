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
#include <utility>

#include "sphereg/errors.hpp"
#include "sphereg/field.hpp"
#include "sphereg/sphere_grid.hpp"

namespace sphereg::likelihood {

// Reference mean and per-cell variance the moving image is matched against.
// Variances are floored on construction so degenerate cells cannot dominate
// the loss. An optional 0/1 mask excludes cells (e.g. a medial-wall
// analogue) from both the loss and its gradient; empty mask = all valid.
struct Atlas {
  FeatureMap mean;
  FeatureMap variance;
  Field<double> mask;  // single channel, or empty
  double variance_floor = 0.0;
};

inline Atlas make_atlas(FeatureMap mean, FeatureMap variance,
                        Field<double> mask = {},
                        double relative_floor = 1e-4) {
  if (!mean.same_shape(variance)) {
    throw ShapeError("make_atlas: mean and variance shapes differ");
  }
  if (mask.size() != 0 &&
      (mask.rows != mean.rows || mask.cols != mean.cols ||
       mask.channels != 1)) {
    throw ShapeError("make_atlas: mask must be single-channel on the grid");
  }
  Atlas a;
  double vmax = 0.0;
  for (double v : variance.data) vmax = std::max(vmax, v);
  if (vmax <= 0.0) vmax = 1.0;  // all-degenerate atlas: unit variance
  a.variance_floor = relative_floor * vmax;
  for (double& v : variance.data) v = std::max(v, a.variance_floor);
  a.mean = std::move(mean);
  a.variance = std::move(variance);
  a.mask = std::move(mask);
  return a;
}

// Distortion-corrected Gaussian data term: 1/2 sum over cells and channels
// of w_i (mean - warped)^2 / variance, with w_i = sin(lat_i). Rows near the
// poles are downweighted in proportion to their true cell area, so the term
// measures disagreement on the sphere rather than on the distorted grid.
// uniform_weights = true drops the correction (w_i = 1), reproducing the
// flat-image baseline.
inline double data_term(const SphereGrid& g, const FeatureMap& warped,
                        const Atlas& atlas, bool uniform_weights = false) {
  if (!warped.same_shape(atlas.mean)) {
    throw ShapeError("data_term: warped does not match atlas shape");
  }
  require_grid_match(g, warped.rows, warped.cols, "data_term");
  const bool masked = atlas.mask.size() != 0;
  double acc = 0.0;
  for (std::size_t ch = 0; ch < warped.channels; ++ch) {
    for (std::size_t i = 0; i < g.rows; ++i) {
      const double w = uniform_weights ? 1.0 : g.sin_lat[i];
      for (std::size_t j = 0; j < g.cols; ++j) {
        if (masked && atlas.mask.at(0, i, j) == 0.0) continue;
        const double r = atlas.mean.at(ch, i, j) - warped.at(ch, i, j);
        acc += w * r * r / atlas.variance.at(ch, i, j);
      }
    }
  }
  return 0.5 * acc;
}

// Gradient of data_term w.r.t. the warped values:
// -w_i (mean - warped) / variance per cell and channel.
inline FeatureMap data_term_grad(const SphereGrid& g, const FeatureMap& warped,
                                 const Atlas& atlas,
                                 bool uniform_weights = false) {
  if (!warped.same_shape(atlas.mean)) {
    throw ShapeError("data_term_grad: warped does not match atlas shape");
  }
  require_grid_match(g, warped.rows, warped.cols, "data_term_grad");
  const bool masked = atlas.mask.size() != 0;
  FeatureMap grad(warped.rows, warped.cols, warped.channels);
  for (std::size_t ch = 0; ch < warped.channels; ++ch) {
    for (std::size_t i = 0; i < g.rows; ++i) {
      const double w = uniform_weights ? 1.0 : g.sin_lat[i];
      for (std::size_t j = 0; j < g.cols; ++j) {
        if (masked && atlas.mask.at(0, i, j) == 0.0) continue;
        grad.at(ch, i, j) = -w *
                            (atlas.mean.at(ch, i, j) - warped.at(ch, i, j)) /
                            atlas.variance.at(ch, i, j);
      }
    }
  }
  return grad;
}

}  // namespace sphereg::likelihood
