// Copyright 2026 The qpgp-ilc Authors
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

/// @file
/// Convenience header pulling in the whole library, simulated plants and the
/// experiment runner.

#include "qpgp_ilc/core.hpp"
#include "qpgp_ilc/gp_baseline.hpp"
#include "qpgp_ilc/ilc.hpp"
#include "qpgp_ilc/kernels.hpp"
#include "qpgp_ilc/plant.hpp"
#include "qpgp_ilc/qpgp.hpp"
#include "qpgp_ilc/sim/linear.hpp"
#include "qpgp_ilc/sim/manipulator.hpp"
#include "qpgp_ilc/sim/paths.hpp"
#include "qpgp_ilc/sim/vehicle.hpp"
#include "qpgp_ilc/bench/config.hpp"
#include "qpgp_ilc/bench/records.hpp"
#include "qpgp_ilc/bench/runner.hpp"
