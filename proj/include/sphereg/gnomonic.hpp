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
#include <tuple>
#include <vector>

#include "sphereg/errors.hpp"
#include "sphereg/field.hpp"
#include "sphereg/sphere_grid.hpp"

namespace sphereg::ops {

// Latitude-adaptive 3x3 stencil: a regular 3x3 patch on the tangent plane at
// (lon 0, lat_i), with spacing of one equatorial pixel of arc (2*pi/N), is
// mapped back to the sphere by inverse gnomonic projection. Offsets depend
// only on the row; translating the stencil to any longitude is a pure
// theta shift. Taps are ordered row-major: t = (ky+1)*3 + (kx+1), ky south,
// kx east.
struct GnomonicKernelOffsets {
  std::size_t rows = 0;
  std::vector<double> dtheta;      // rows*9 longitude offsets from center
  std::vector<double> phi_target;  // rows*9 absolute target latitudes
  double spacing = 0.0;            // tangent-plane tap spacing (radians)
};

inline GnomonicKernelOffsets make_gnomonic_offsets(const SphereGrid& g) {
  GnomonicKernelOffsets off;
  off.rows = g.rows;
  off.spacing = g.dlon;
  off.dtheta.resize(g.rows * 9);
  off.phi_target.resize(g.rows * 9);
  for (std::size_t i = 0; i < g.rows; ++i) {
    const double lat0 = g.lat[i];
    const double sl = std::sin(lat0), cl = std::cos(lat0);
    for (int ky = -1; ky <= 1; ++ky) {
      for (int kx = -1; kx <= 1; ++kx) {
        const std::size_t t = static_cast<std::size_t>((ky + 1) * 3 + kx + 1);
        const double x = kx * off.spacing;
        const double y = -ky * off.spacing;  // +ky rows point south
        double dth, phi;
        if (kx == 0 && ky == 0) {
          dth = 0.0;
          phi = lat0;
        } else {
          const double rho = std::sqrt(x * x + y * y);
          const double c = std::atan(rho);
          const double sc = std::sin(c), cc = std::cos(c);
          phi = std::acos(std::clamp(cc * cl + (y / rho) * sc * sl, -1.0, 1.0));
          dth = std::atan2(x * sc, rho * cc * sl - y * sc * cl);
        }
        off.dtheta[i * 9 + t] = dth;
        off.phi_target[i * 9 + t] = phi;
      }
    }
  }
  return off;
}

namespace detail {

// Bilinear footprint of one (row, tap) pair. Row indices and fractions are
// fixed per row; the column part is a constant shift jb plus fraction fj
// added to the output column.
struct TapPlan {
  std::size_t i0, i1;
  long jb;
  double fi, fj;
};

inline std::vector<TapPlan> plan_taps(const SphereGrid& g,
                                      const GnomonicKernelOffsets& off) {
  if (off.rows != g.rows) {
    throw ShapeError("spherical_conv: offsets built for a different grid");
  }
  std::vector<TapPlan> plan(g.rows * 9);
  const double rmax = static_cast<double>(g.rows - 1);
  for (std::size_t i = 0; i < g.rows; ++i) {
    for (std::size_t t = 0; t < 9; ++t) {
      TapPlan p{};
      if (g.rows == 1) {
        p.i0 = p.i1 = 0;
        p.fi = 0.0;
      } else {
        double u = off.phi_target[i * 9 + t] / g.dlat - 0.5;
        u = std::clamp(u, 0.0, rmax);
        double fl = std::floor(u);
        if (fl > rmax - 1.0) fl = rmax - 1.0;
        p.i0 = static_cast<std::size_t>(fl);
        p.i1 = p.i0 + 1;
        p.fi = u - fl;
      }
      const double s = off.dtheta[i * 9 + t] / g.dlon;
      const double sfl = std::floor(s);
      p.jb = static_cast<long>(sfl);
      p.fj = s - sfl;
      plan[i * 9 + t] = p;
    }
  }
  return plan;
}

inline std::size_t wrap_col(long j, std::size_t n) {
  const long ln = static_cast<long>(n);
  long r = j % ln;
  if (r < 0) r += ln;
  return static_cast<std::size_t>(r);
}

}  // namespace detail

// 3x3 convolution with gnomonic taps: gathers 9 bilinear samples per input
// channel at the row's offsets translated to each column, contracts with the
// kernel, adds bias. weights layout: [c_out][c_in][tap].
inline Field<double> spherical_conv(const SphereGrid& g,
                                    const GnomonicKernelOffsets& off,
                                    const Field<double>& input,
                                    const std::vector<double>& weights,
                                    const std::vector<double>& bias,
                                    std::size_t c_out) {
  require_grid_match(g, input.rows, input.cols, "spherical_conv");
  const std::size_t c_in = input.channels;
  if (weights.size() != c_out * c_in * 9 || bias.size() != c_out) {
    throw ShapeError("spherical_conv: weight/bias sizes inconsistent");
  }
  const auto plan = detail::plan_taps(g, off);
  const std::size_t M = g.rows, N = g.cols;
  Field<double> out(M, N, c_out);
  std::vector<double> gathered(c_in * 9);
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      for (std::size_t t = 0; t < 9; ++t) {
        const auto& p = plan[i * 9 + t];
        const std::size_t j0 = detail::wrap_col(static_cast<long>(j) + p.jb, N);
        const std::size_t j1 = (j0 + 1) % N;
        const double w00 = (1.0 - p.fi) * (1.0 - p.fj);
        const double w01 = (1.0 - p.fi) * p.fj;
        const double w10 = p.fi * (1.0 - p.fj);
        const double w11 = p.fi * p.fj;
        for (std::size_t ci = 0; ci < c_in; ++ci) {
          gathered[ci * 9 + t] =
              w00 * input.at(ci, p.i0, j0) + w01 * input.at(ci, p.i0, j1) +
              w10 * input.at(ci, p.i1, j0) + w11 * input.at(ci, p.i1, j1);
        }
      }
      for (std::size_t co = 0; co < c_out; ++co) {
        double acc = bias[co];
        const double* wk = weights.data() + co * c_in * 9;
        for (std::size_t k = 0; k < c_in * 9; ++k) acc += wk[k] * gathered[k];
        out.at(co, i, j) = acc;
      }
    }
  }
  return out;
}

// Adjoint of spherical_conv w.r.t. input, weights, and bias.
inline std::tuple<Field<double>, std::vector<double>, std::vector<double>>
spherical_conv_vjp(const SphereGrid& g, const GnomonicKernelOffsets& off,
                   const Field<double>& input,
                   const std::vector<double>& weights, std::size_t c_out,
                   const Field<double>& upstream) {
  const std::size_t c_in = input.channels;
  if (upstream.channels != c_out || upstream.rows != input.rows ||
      upstream.cols != input.cols) {
    throw ShapeError("spherical_conv_vjp: upstream shape mismatch");
  }
  const auto plan = detail::plan_taps(g, off);
  const std::size_t M = g.rows, N = g.cols;
  Field<double> g_input(M, N, c_in);
  std::vector<double> g_weights(c_out * c_in * 9, 0.0);
  std::vector<double> g_bias(c_out, 0.0);
  std::vector<double> gathered(c_in * 9);
  std::vector<double> up(c_out);
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      for (std::size_t co = 0; co < c_out; ++co) {
        up[co] = upstream.at(co, i, j);
        g_bias[co] += up[co];
      }
      for (std::size_t t = 0; t < 9; ++t) {
        const auto& p = plan[i * 9 + t];
        const std::size_t j0 = detail::wrap_col(static_cast<long>(j) + p.jb, N);
        const std::size_t j1 = (j0 + 1) % N;
        const double w00 = (1.0 - p.fi) * (1.0 - p.fj);
        const double w01 = (1.0 - p.fi) * p.fj;
        const double w10 = p.fi * (1.0 - p.fj);
        const double w11 = p.fi * p.fj;
        for (std::size_t ci = 0; ci < c_in; ++ci) {
          gathered[ci * 9 + t] =
              w00 * input.at(ci, p.i0, j0) + w01 * input.at(ci, p.i0, j1) +
              w10 * input.at(ci, p.i1, j0) + w11 * input.at(ci, p.i1, j1);
          double gsum = 0.0;
          for (std::size_t co = 0; co < c_out; ++co) {
            gsum += up[co] * weights[(co * c_in + ci) * 9 + t];
          }
          g_input.at(ci, p.i0, j0) += gsum * w00;
          g_input.at(ci, p.i0, j1) += gsum * w01;
          g_input.at(ci, p.i1, j0) += gsum * w10;
          g_input.at(ci, p.i1, j1) += gsum * w11;
        }
      }
      for (std::size_t co = 0; co < c_out; ++co) {
        double* gw = g_weights.data() + co * c_in * 9;
        for (std::size_t k = 0; k < c_in * 9; ++k) {
          gw[k] += up[co] * gathered[k];
        }
      }
    }
  }
  return {std::move(g_input), std::move(g_weights), std::move(g_bias)};
}

// 2x2 mean pooling. Columns pair (2j, 2j+1); even N keeps pairs contiguous.
inline Field<double> pool2(const Field<double>& input) {
  if (input.rows % 2 != 0 || input.cols % 2 != 0) {
    throw ShapeError("pool2: dimensions must be even");
  }
  Field<double> out(input.rows / 2, input.cols / 2, input.channels);
  for (std::size_t ch = 0; ch < input.channels; ++ch) {
    for (std::size_t i = 0; i < out.rows; ++i) {
      for (std::size_t j = 0; j < out.cols; ++j) {
        out.at(ch, i, j) = 0.25 * (input.at(ch, 2 * i, 2 * j) +
                                   input.at(ch, 2 * i, 2 * j + 1) +
                                   input.at(ch, 2 * i + 1, 2 * j) +
                                   input.at(ch, 2 * i + 1, 2 * j + 1));
      }
    }
  }
  return out;
}

inline Field<double> pool2_vjp(const Field<double>& upstream,
                               std::size_t in_rows, std::size_t in_cols) {
  Field<double> grad(in_rows, in_cols, upstream.channels);
  for (std::size_t ch = 0; ch < upstream.channels; ++ch) {
    for (std::size_t i = 0; i < upstream.rows; ++i) {
      for (std::size_t j = 0; j < upstream.cols; ++j) {
        const double u = 0.25 * upstream.at(ch, i, j);
        grad.at(ch, 2 * i, 2 * j) = u;
        grad.at(ch, 2 * i, 2 * j + 1) = u;
        grad.at(ch, 2 * i + 1, 2 * j) = u;
        grad.at(ch, 2 * i + 1, 2 * j + 1) = u;
      }
    }
  }
  return grad;
}

namespace detail {

// Row interpolation plan for upsample2: output row io samples input row
// coordinate io/2 - 1/4, clamped at the first and last rows.
struct UpPlan {
  std::size_t a, b;
  double f;
};

inline UpPlan up_row(std::size_t io, std::size_t in_rows) {
  UpPlan p{};
  if (in_rows == 1) return p;  // a = b = 0, f = 0
  const double rmax = static_cast<double>(in_rows - 1);
  double u = 0.5 * static_cast<double>(io) - 0.25;
  u = std::clamp(u, 0.0, rmax);
  double fl = std::floor(u);
  if (fl > rmax - 1.0) fl = rmax - 1.0;
  p.a = static_cast<std::size_t>(fl);
  p.b = p.a + 1;
  p.f = u - fl;
  return p;
}

inline UpPlan up_col(std::size_t jo, std::size_t in_cols) {
  const double n = static_cast<double>(in_cols);
  double v = 0.5 * static_cast<double>(jo) - 0.25;
  v -= n * std::floor(v / n);
  if (v >= n) v = 0.0;
  const double fl = std::floor(v);
  UpPlan p{};
  p.a = static_cast<std::size_t>(fl) % in_cols;
  p.b = (p.a + 1) % in_cols;
  p.f = v - fl;
  return p;
}

}  // namespace detail

// Bilinear x2 upsampling, periodic in longitude, clamped in latitude.
// Constant maps are reproduced exactly.
inline Field<double> upsample2(const Field<double>& input) {
  const std::size_t M = input.rows, N = input.cols;
  Field<double> out(2 * M, 2 * N, input.channels);
  for (std::size_t io = 0; io < 2 * M; ++io) {
    const auto r = detail::up_row(io, M);
    for (std::size_t jo = 0; jo < 2 * N; ++jo) {
      const auto c = detail::up_col(jo, N);
      const double w00 = (1.0 - r.f) * (1.0 - c.f);
      const double w01 = (1.0 - r.f) * c.f;
      const double w10 = r.f * (1.0 - c.f);
      const double w11 = r.f * c.f;
      for (std::size_t ch = 0; ch < input.channels; ++ch) {
        out.at(ch, io, jo) =
            w00 * input.at(ch, r.a, c.a) + w01 * input.at(ch, r.a, c.b) +
            w10 * input.at(ch, r.b, c.a) + w11 * input.at(ch, r.b, c.b);
      }
    }
  }
  return out;
}

inline Field<double> upsample2_vjp(const Field<double>& upstream) {
  if (upstream.rows % 2 != 0 || upstream.cols % 2 != 0) {
    throw ShapeError("upsample2_vjp: upstream dimensions must be even");
  }
  const std::size_t M = upstream.rows / 2, N = upstream.cols / 2;
  Field<double> grad(M, N, upstream.channels);
  for (std::size_t io = 0; io < 2 * M; ++io) {
    const auto r = detail::up_row(io, M);
    for (std::size_t jo = 0; jo < 2 * N; ++jo) {
      const auto c = detail::up_col(jo, N);
      const double w00 = (1.0 - r.f) * (1.0 - c.f);
      const double w01 = (1.0 - r.f) * c.f;
      const double w10 = r.f * (1.0 - c.f);
      const double w11 = r.f * c.f;
      for (std::size_t ch = 0; ch < upstream.channels; ++ch) {
        const double u = upstream.at(ch, io, jo);
        grad.at(ch, r.a, c.a) += u * w00;
        grad.at(ch, r.a, c.b) += u * w01;
        grad.at(ch, r.b, c.a) += u * w10;
        grad.at(ch, r.b, c.b) += u * w11;
      }
    }
  }
  return grad;
}

}  // namespace sphereg::ops
