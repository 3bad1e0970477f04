// Copyright 2026 The collapse-lab Authors
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

#include "collapse_lab/analysis_collapse.hpp"
#include "collapse_lab/analysis_jumps.hpp"
#include "collapse_lab/analysis_spikes.hpp"
#include "collapse_lab/core.hpp"
#include "collapse_lab/hmm.hpp"
#include "collapse_lab/io.hpp"
#include "collapse_lab/models.hpp"
#include "collapse_lab/parallel.hpp"
#include "collapse_lab/random.hpp"
#include "collapse_lab/report.hpp"
#include "collapse_lab/sde.hpp"
#include "collapse_lab/stats.hpp"
