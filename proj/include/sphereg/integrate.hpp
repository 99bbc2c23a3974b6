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
#include <string>
#include <vector>

#include "sphereg/errors.hpp"
#include "sphereg/field.hpp"
#include "sphereg/sampler.hpp"
#include "sphereg/sphere_grid.hpp"

namespace sphereg::ops {

// Forward tape for scaling and squaring: stage[0] = v / 2^steps, and
// stage[k+1] = stage[k] composed with itself. stage[steps] is the result.
struct SsTape {
  int steps = 0;
  std::vector<VectorField> stage;
};

namespace detail {

// One squaring: d'(p) = d(p) + d(p + d(p)). The theta channel is resampled
// as a residual displacement, never as an absolute angle, so composition is
// seam-free across the longitude wrap.
inline VectorField compose_once(const SphereGrid& g, const VectorField& d,
                                SampleStats* stats) {
  Field<double> moved = sample_periodic(g, d, d, Interp::bilinear, stats);
  VectorField out(d.rows, d.cols);
  for (std::size_t k = 0; k < d.size(); ++k) {
    out.data[k] = d.data[k] + moved.data[k];
  }
  return out;
}

inline void check_finite(const VectorField& d, int stage) {
  for (double x : d.data) {
    if (!std::isfinite(x)) {
      throw NumericError("scaling_and_squaring: non-finite value at stage " +
                         std::to_string(stage));
    }
  }
}

}  // namespace detail

inline SsTape scaling_and_squaring_tape(const SphereGrid& g,
                                        const VectorField& v, int steps = 7,
                                        SampleStats* stats = nullptr) {
  if (steps < 1) {
    throw ShapeError("scaling_and_squaring: steps must be >= 1");
  }
  require_grid_match(g, v.rows, v.cols, "scaling_and_squaring");
  SsTape tape;
  tape.steps = steps;
  tape.stage.reserve(static_cast<std::size_t>(steps) + 1);
  const double scale = std::ldexp(1.0, -steps);
  VectorField d(v.rows, v.cols);
  for (std::size_t k = 0; k < v.size(); ++k) d.data[k] = v.data[k] * scale;
  detail::check_finite(d, 0);
  tape.stage.push_back(d);
  for (int s = 0; s < steps; ++s) {
    d = detail::compose_once(g, tape.stage.back(), stats);
    detail::check_finite(d, s + 1);
    tape.stage.push_back(d);
  }
  return tape;
}

// Group exponential of a stationary velocity field as a displacement field.
inline DeformationField scaling_and_squaring(const SphereGrid& g,
                                             const VectorField& v,
                                             int steps = 7,
                                             SampleStats* stats = nullptr) {
  return DeformationField(
      std::move(scaling_and_squaring_tape(g, v, steps, stats).stage.back()));
}

// Pulls a gradient w.r.t. the integrated displacement back to the velocity.
// Each squaring d' = d + S(d, d) contributes three paths: the identity term
// and the sampler's map and coordinate arguments, which are both d.
inline VectorField scaling_and_squaring_vjp(const SphereGrid& g,
                                            const SsTape& tape,
                                            const VectorField& g_phi) {
  VectorField grad = g_phi;
  for (int s = tape.steps - 1; s >= 0; --s) {
    const VectorField& d = tape.stage[static_cast<std::size_t>(s)];
    auto [g_map, g_coords] = sample_periodic_vjp(g, d, d, grad);
    for (std::size_t k = 0; k < grad.size(); ++k) {
      grad.data[k] += g_map.data[k] + g_coords.data[k];
    }
  }
  const double scale = std::ldexp(1.0, -tape.steps);
  for (double& x : grad.data) x *= scale;
  return grad;
}

}  // namespace sphereg::ops
