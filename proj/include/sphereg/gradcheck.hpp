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
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "sphereg/errors.hpp"

namespace sphereg::ops {

// Compares adjoint-computed directional derivatives against central finite
// differences along random unit directions and returns the max relative
// error. `f` is the scalar loss, `grad` its full gradient at the same point.
inline double grad_check(
    const std::function<double(const std::vector<double>&)>& f,
    const std::function<std::vector<double>(const std::vector<double>&)>& grad,
    const std::vector<double>& x0, double step, std::size_t ndirs = 32,
    std::uint64_t seed = 1234) {
  if (step <= 0.0) throw NumericError("grad_check: step must be positive");
  const std::vector<double> g = grad(x0);
  if (g.size() != x0.size()) {
    throw ShapeError("grad_check: gradient size mismatch");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  double max_rel = 0.0;
  std::vector<double> xp(x0.size()), xm(x0.size()), dir(x0.size());
  for (std::size_t n = 0; n < ndirs; ++n) {
    double nrm = 0.0;
    for (double& d : dir) {
      d = nd(rng);
      nrm += d * d;
    }
    nrm = std::sqrt(nrm);
    double analytic = 0.0;
    for (std::size_t k = 0; k < x0.size(); ++k) {
      dir[k] /= nrm;
      analytic += g[k] * dir[k];
      xp[k] = x0[k] + step * dir[k];
      xm[k] = x0[k] - step * dir[k];
    }
    const double numeric = (f(xp) - f(xm)) / (2.0 * step);
    const double mag = std::max(std::abs(analytic), std::abs(numeric));
    if (mag < 1e-12) continue;  // both effectively zero
    const double rel = std::abs(analytic - numeric) / mag;
    if (rel > max_rel) max_rel = rel;
  }
  return max_rel;
}

}  // namespace sphereg::ops
