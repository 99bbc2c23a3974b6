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
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sphereg/errors.hpp"
#include "sphereg/field.hpp"
#include "sphereg/gnomonic.hpp"
#include "sphereg/sphere_grid.hpp"

namespace sphereg::reg {

struct ConvLayer {
  std::size_t c_in = 0, c_out = 0;
  std::vector<double> w;  // c_out * c_in * 9
  std::vector<double> b;  // c_out
};

// Encoder-decoder over the sphere: four conv+pool stages down, four
// upsample+skip+conv stages up, all convolutions on gnomonic 3x3 taps, leaky
// rectifier activations. Two linear heads emit the velocity mean and its
// per-vertex log variance. Weights are grid-independent; tap offsets are
// recomputed for whatever grid the forward pass runs on.
struct SphericalUNet {
  std::size_t in_channels = 0;
  std::vector<std::size_t> widths;  // encoder widths, one per level (4)
  std::vector<ConvLayer> enc;       // 4
  ConvLayer bottleneck;
  std::vector<ConvLayer> dec;  // 4, coarsest first
  ConvLayer head_mu;           // -> 2 velocity channels, zero-initialized
  ConvLayer head_logvar;       // -> 2 channels, zero weights, bias kLogVar0
};

inline constexpr double kLeakySlope = 0.2;
// Unit-variance start for the predicted posterior; the KL trace term of the
// training objective anneals the scale toward 1 / (lambda * degree).
inline constexpr double kLogVar0 = 0.0;
inline constexpr std::size_t kUnetLevels = 4;

namespace detail {

inline ConvLayer init_conv(std::size_t c_in, std::size_t c_out,
                           std::mt19937_64& rng) {
  ConvLayer l;
  l.c_in = c_in;
  l.c_out = c_out;
  l.w.resize(c_out * c_in * 9);
  l.b.assign(c_out, 0.0);
  std::normal_distribution<double> dist(
      0.0, std::sqrt(2.0 / static_cast<double>(c_in * 9)));
  for (double& x : l.w) x = dist(rng);
  return l;
}

inline ConvLayer zero_conv(std::size_t c_in, std::size_t c_out, double bias) {
  ConvLayer l;
  l.c_in = c_in;
  l.c_out = c_out;
  l.w.assign(c_out * c_in * 9, 0.0);
  l.b.assign(c_out, bias);
  return l;
}

inline void leaky_relu(Field<double>& x) {
  for (double& v : x.data) {
    if (v < 0.0) v *= kLeakySlope;
  }
}

// Activation gradient from the output sign: slope is positive, so
// out < 0 iff pre-activation < 0.
inline void leaky_relu_backward(const Field<double>& out, Field<double>& g) {
  for (std::size_t k = 0; k < out.data.size(); ++k) {
    if (out.data[k] < 0.0) g.data[k] *= kLeakySlope;
  }
}

inline Field<double> concat_channels(const Field<double>& a,
                                     const Field<double>& b) {
  Field<double> out(a.rows, a.cols, a.channels + b.channels);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(),
            out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return out;
}

}  // namespace detail

// Network wiring with all parameters zero; the weight loader fills it in.
inline SphericalUNet make_unet_skeleton(std::size_t in_channels,
                                        std::vector<std::size_t> widths) {
  if (widths.size() != kUnetLevels) {
    throw ShapeError("make_unet_skeleton: need exactly 4 level widths");
  }
  SphericalUNet net;
  net.in_channels = in_channels;
  net.widths = std::move(widths);
  std::size_t c = in_channels;
  for (std::size_t l = 0; l < kUnetLevels; ++l) {
    net.enc.push_back(detail::zero_conv(c, net.widths[l], 0.0));
    c = net.widths[l];
  }
  net.bottleneck = detail::zero_conv(c, net.widths.back(), 0.0);
  c = net.widths.back();
  for (std::size_t l = kUnetLevels; l-- > 0;) {
    // Input: upsampled coarse channels + the level's skip channels.
    net.dec.push_back(detail::zero_conv(c + net.widths[l], net.widths[l], 0.0));
    c = net.widths[l];
  }
  net.head_mu = detail::zero_conv(c, 2, 0.0);
  net.head_logvar = detail::zero_conv(c, 2, kLogVar0);
  return net;
}

// Builds the network for grids whose dimensions survive four halvings. The
// widths vector gives the encoder output channels per level; the decoder
// mirrors it. Heads start at zero so a fresh network predicts the identity
// warp with near-zero variance.
inline SphericalUNet build_unet(const SphereGrid& g,
                                std::vector<std::size_t> widths = {16, 32, 32,
                                                                   32},
                                std::size_t in_channels = 2,
                                std::uint64_t seed = 42) {
  const std::size_t div = 1u << kUnetLevels;
  if (g.rows % div != 0 || g.cols % div != 0) {
    throw ShapeError("build_unet: grid dims must be divisible by 16, got " +
                     std::to_string(g.rows) + "x" + std::to_string(g.cols));
  }
  SphericalUNet net = make_unet_skeleton(in_channels, std::move(widths));
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < kUnetLevels; ++l) {
    net.enc[l] = detail::init_conv(net.enc[l].c_in, net.enc[l].c_out, rng);
  }
  net.bottleneck =
      detail::init_conv(net.bottleneck.c_in, net.bottleneck.c_out, rng);
  for (std::size_t d = 0; d < kUnetLevels; ++d) {
    net.dec[d] = detail::init_conv(net.dec[d].c_in, net.dec[d].c_out, rng);
  }
  return net;
}

// Forward activations kept for the backward pass.
struct UnetTape {
  std::vector<SphereGrid> grids;                 // per level, fine to coarse
  std::vector<ops::GnomonicKernelOffsets> offsets;  // matching grids
  Field<double> input;
  std::vector<Field<double>> enc_act;            // post-activation, per level
  Field<double> bottleneck_act;
  std::vector<Field<double>> dec_in;             // concat inputs, coarse first
  std::vector<Field<double>> dec_act;            // post-activation
};

struct UnetOutput {
  VectorField mu;
  Field<double> logvar;  // 2 channels
};

inline UnetOutput unet_forward(const SphericalUNet& net, const SphereGrid& g,
                               const Field<double>& input, UnetTape* tape) {
  if (input.channels != net.in_channels) {
    throw ShapeError("unet_forward: input channel mismatch");
  }
  require_grid_match(g, input.rows, input.cols, "unet_forward");
  UnetTape local;
  UnetTape& tp = tape ? *tape : local;
  tp = UnetTape{};
  tp.input = input;
  tp.grids.push_back(g);
  for (std::size_t l = 1; l <= kUnetLevels; ++l) {
    tp.grids.push_back(
        sphereg::detail::make_grid_any(g.rows >> l, g.cols >> l));
  }
  for (const auto& lg : tp.grids) {
    tp.offsets.push_back(ops::make_gnomonic_offsets(lg));
  }

  Field<double> x = input;
  for (std::size_t l = 0; l < kUnetLevels; ++l) {
    Field<double> a =
        ops::spherical_conv(tp.grids[l], tp.offsets[l], x, net.enc[l].w,
                            net.enc[l].b, net.enc[l].c_out);
    detail::leaky_relu(a);
    tp.enc_act.push_back(a);
    x = ops::pool2(a);
  }
  Field<double> bk = ops::spherical_conv(
      tp.grids[kUnetLevels], tp.offsets[kUnetLevels], x, net.bottleneck.w,
      net.bottleneck.b, net.bottleneck.c_out);
  detail::leaky_relu(bk);
  tp.bottleneck_act = bk;

  Field<double> y = bk;
  for (std::size_t d = 0; d < kUnetLevels; ++d) {
    const std::size_t lvl = kUnetLevels - 1 - d;  // skip level index
    Field<double> up = ops::upsample2(y);
    Field<double> cat = detail::concat_channels(up, tp.enc_act[lvl]);
    tp.dec_in.push_back(cat);
    Field<double> a =
        ops::spherical_conv(tp.grids[lvl], tp.offsets[lvl], cat,
                            net.dec[d].w, net.dec[d].b, net.dec[d].c_out);
    detail::leaky_relu(a);
    tp.dec_act.push_back(a);
    y = std::move(a);
  }

  UnetOutput out;
  out.mu = VectorField(ops::spherical_conv(tp.grids[0], tp.offsets[0], y,
                                           net.head_mu.w, net.head_mu.b, 2));
  out.logvar = ops::spherical_conv(tp.grids[0], tp.offsets[0], y,
                                   net.head_logvar.w, net.head_logvar.b, 2);
  return out;
}

// Parameter gradients in the same layout as the network.
struct UnetGrads {
  std::vector<ConvLayer> enc;
  ConvLayer bottleneck;
  std::vector<ConvLayer> dec;
  ConvLayer head_mu;
  ConvLayer head_logvar;
};

namespace detail {

inline ConvLayer zero_like(const ConvLayer& l) {
  ConvLayer z;
  z.c_in = l.c_in;
  z.c_out = l.c_out;
  z.w.assign(l.w.size(), 0.0);
  z.b.assign(l.b.size(), 0.0);
  return z;
}

}  // namespace detail

inline UnetGrads unet_backward(const SphericalUNet& net, const UnetTape& tp,
                               const Field<double>& g_mu,
                               const Field<double>& g_logvar) {
  UnetGrads grads;
  grads.enc.resize(kUnetLevels);
  grads.dec.resize(kUnetLevels);

  // Heads share the finest decoder activation.
  const Field<double>& d_fine = tp.dec_act.back();
  auto [gy_mu, gw_mu, gb_mu] = ops::spherical_conv_vjp(
      tp.grids[0], tp.offsets[0], d_fine, net.head_mu.w, 2, g_mu);
  auto [gy_lv, gw_lv, gb_lv] = ops::spherical_conv_vjp(
      tp.grids[0], tp.offsets[0], d_fine, net.head_logvar.w, 2, g_logvar);
  grads.head_mu.c_in = net.head_mu.c_in;
  grads.head_mu.c_out = 2;
  grads.head_mu.w = std::move(gw_mu);
  grads.head_mu.b = std::move(gb_mu);
  grads.head_logvar.c_in = net.head_logvar.c_in;
  grads.head_logvar.c_out = 2;
  grads.head_logvar.w = std::move(gw_lv);
  grads.head_logvar.b = std::move(gb_lv);
  Field<double> gy = std::move(gy_mu);
  for (std::size_t k = 0; k < gy.data.size(); ++k) {
    gy.data[k] += gy_lv.data[k];
  }

  // Decoder, finest stage back to coarsest; skip gradients are parked per
  // encoder level and consumed by the encoder backward below.
  std::vector<Field<double>> skip_grad(kUnetLevels);
  for (std::size_t d = kUnetLevels; d-- > 0;) {
    const std::size_t lvl = kUnetLevels - 1 - d;
    detail::leaky_relu_backward(tp.dec_act[d], gy);
    auto [g_cat, gw, gb] =
        ops::spherical_conv_vjp(tp.grids[lvl], tp.offsets[lvl], tp.dec_in[d],
                                net.dec[d].w, net.dec[d].c_out, gy);
    grads.dec[d].c_in = net.dec[d].c_in;
    grads.dec[d].c_out = net.dec[d].c_out;
    grads.dec[d].w = std::move(gw);
    grads.dec[d].b = std::move(gb);
    const std::size_t skip_ch = net.enc[lvl].c_out;
    const std::size_t up_ch = g_cat.channels - skip_ch;
    Field<double> g_up(g_cat.rows, g_cat.cols, up_ch);
    std::copy(g_cat.data.begin(),
              g_cat.data.begin() + static_cast<std::ptrdiff_t>(g_up.size()),
              g_up.data.begin());
    Field<double> g_skip(g_cat.rows, g_cat.cols, skip_ch);
    std::copy(g_cat.data.begin() + static_cast<std::ptrdiff_t>(g_up.size()),
              g_cat.data.end(), g_skip.data.begin());
    skip_grad[lvl] = std::move(g_skip);
    gy = ops::upsample2_vjp(g_up);
  }

  // gy is now the gradient w.r.t. the bottleneck activation.
  detail::leaky_relu_backward(tp.bottleneck_act, gy);
  const Field<double> bott_in = ops::pool2(tp.enc_act.back());
  auto [g_pool, gw_bk, gb_bk] = ops::spherical_conv_vjp(
      tp.grids[kUnetLevels], tp.offsets[kUnetLevels], bott_in,
      net.bottleneck.w, net.bottleneck.c_out, gy);
  grads.bottleneck.c_in = net.bottleneck.c_in;
  grads.bottleneck.c_out = net.bottleneck.c_out;
  grads.bottleneck.w = std::move(gw_bk);
  grads.bottleneck.b = std::move(gb_bk);
  Field<double> g_down = std::move(g_pool);

  for (std::size_t l = kUnetLevels; l-- > 0;) {
    Field<double> g_act =
        ops::pool2_vjp(g_down, tp.enc_act[l].rows, tp.enc_act[l].cols);
    for (std::size_t k = 0; k < g_act.data.size(); ++k) {
      g_act.data[k] += skip_grad[l].data[k];
    }
    detail::leaky_relu_backward(tp.enc_act[l], g_act);
    const Field<double> conv_in =
        (l == 0) ? tp.input : ops::pool2(tp.enc_act[l - 1]);
    auto [g_in, gw, gb] =
        ops::spherical_conv_vjp(tp.grids[l], tp.offsets[l], conv_in,
                                net.enc[l].w, net.enc[l].c_out, g_act);
    grads.enc[l].c_in = net.enc[l].c_in;
    grads.enc[l].c_out = net.enc[l].c_out;
    grads.enc[l].w = std::move(gw);
    grads.enc[l].b = std::move(gb);
    g_down = std::move(g_in);
  }
  return grads;
}

// Flat views over all trainable parameters, in a fixed order shared by the
// gradient structure, the optimizer, and the weight file format.
inline std::vector<ConvLayer*> unet_layers(SphericalUNet& net) {
  std::vector<ConvLayer*> out;
  for (auto& l : net.enc) out.push_back(&l);
  out.push_back(&net.bottleneck);
  for (auto& l : net.dec) out.push_back(&l);
  out.push_back(&net.head_mu);
  out.push_back(&net.head_logvar);
  return out;
}

inline std::vector<const ConvLayer*> unet_layers(const SphericalUNet& net) {
  std::vector<const ConvLayer*> out;
  for (auto& l : net.enc) out.push_back(&l);
  out.push_back(&net.bottleneck);
  for (auto& l : net.dec) out.push_back(&l);
  out.push_back(&net.head_mu);
  out.push_back(&net.head_logvar);
  return out;
}

inline std::vector<const ConvLayer*> unet_layers(const UnetGrads& g) {
  std::vector<const ConvLayer*> out;
  for (auto& l : g.enc) out.push_back(&l);
  out.push_back(&g.bottleneck);
  for (auto& l : g.dec) out.push_back(&l);
  out.push_back(&g.head_mu);
  out.push_back(&g.head_logvar);
  return out;
}

inline std::size_t unet_param_count(const SphericalUNet& net) {
  std::size_t n = 0;
  for (const auto* l : unet_layers(net)) n += l->w.size() + l->b.size();
  return n;
}

inline void unet_pack(const SphericalUNet& net, std::vector<double>& flat) {
  flat.clear();
  flat.reserve(unet_param_count(net));
  for (const auto* l : unet_layers(net)) {
    flat.insert(flat.end(), l->w.begin(), l->w.end());
    flat.insert(flat.end(), l->b.begin(), l->b.end());
  }
}

inline void unet_pack_grads(const UnetGrads& g, std::vector<double>& flat) {
  flat.clear();
  for (const auto* l : unet_layers(g)) {
    flat.insert(flat.end(), l->w.begin(), l->w.end());
    flat.insert(flat.end(), l->b.begin(), l->b.end());
  }
}

inline void unet_unpack(SphericalUNet& net, const std::vector<double>& flat) {
  std::size_t k = 0;
  for (auto* l : unet_layers(net)) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(k), l->w.size(),
                l->w.begin());
    k += l->w.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(k), l->b.size(),
                l->b.begin());
    k += l->b.size();
  }
  if (k != flat.size()) {
    throw ShapeError("unet_unpack: parameter count mismatch");
  }
}

}  // namespace sphereg::reg
