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

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sphereg/errors.hpp"
#include "sphereg/sphere_grid.hpp"

namespace sphereg {

// Multi-channel scalar field on a SphereGrid, channel-major storage:
// data[c * rows * cols + i * cols + j].
template <typename T>
struct Field {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t channels = 0;
  std::vector<T> data;

  Field() = default;
  Field(std::size_t r, std::size_t c, std::size_t ch, T fill = T{})
      : rows(r), cols(c), channels(ch), data(r * c * ch, fill) {}

  std::size_t plane() const { return rows * cols; }
  std::size_t size() const { return data.size(); }

  T& at(std::size_t ch, std::size_t i, std::size_t j) {
    return data[ch * plane() + i * cols + j];
  }
  const T& at(std::size_t ch, std::size_t i, std::size_t j) const {
    return data[ch * plane() + i * cols + j];
  }

  T* channel(std::size_t ch) { return data.data() + ch * plane(); }
  const T* channel(std::size_t ch) const { return data.data() + ch * plane(); }

  bool same_shape(const Field& o) const {
    return rows == o.rows && cols == o.cols && channels == o.channels;
  }
};

using FeatureMap = Field<double>;
using LabelMap = Field<std::uint32_t>;

// Tangential displacement or velocity field: channel 0 is the longitude
// component (radians), channel 1 the colatitude component (radians).
struct VectorField : Field<double> {
  VectorField() = default;
  VectorField(std::size_t r, std::size_t c) : Field<double>(r, c, 2) {}
  explicit VectorField(Field<double>&& f) : Field<double>(std::move(f)) {
    if (channels != 2) {
      throw ShapeError("VectorField: expected 2 channels, got " +
                       std::to_string(channels));
    }
  }
};

using VelocityField = VectorField;
using DeformationField = VectorField;

inline void require_grid_match(const SphereGrid& g, std::size_t rows,
                               std::size_t cols, const char* who) {
  if (g.rows != rows || g.cols != cols) {
    throw ShapeError(std::string(who) + ": field " + std::to_string(rows) +
                     "x" + std::to_string(cols) + " does not match grid " +
                     std::to_string(g.rows) + "x" + std::to_string(g.cols));
  }
}

}  // namespace sphereg
