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

// Umbrella header: the full spherical registration library.

#pragma once

#include "sphereg/errors.hpp"
#include "sphereg/field.hpp"
#include "sphereg/gnomonic.hpp"
#include "sphereg/gradcheck.hpp"
#include "sphereg/integrate.hpp"
#include "sphereg/io.hpp"
#include "sphereg/laplacian.hpp"
#include "sphereg/likelihood.hpp"
#include "sphereg/metrics.hpp"
#include "sphereg/optimizer.hpp"
#include "sphereg/registration.hpp"
#include "sphereg/sampler.hpp"
#include "sphereg/sphere_grid.hpp"
#include "sphereg/synth.hpp"
#include "sphereg/unet.hpp"
