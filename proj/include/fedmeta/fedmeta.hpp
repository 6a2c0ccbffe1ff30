// Copyright 2026 The fedmeta Authors. All Rights Reserved.
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

#include "fedmeta/config.hpp"
#include "fedmeta/data.hpp"
#include "fedmeta/diffcore.hpp"
#include "fedmeta/error.hpp"
#include "fedmeta/fedsim.hpp"
#include "fedmeta/metalearn.hpp"
#include "fedmeta/metrics.hpp"
#include "fedmeta/models.hpp"
#include "fedmeta/rng.hpp"
#include "fedmeta/runner.hpp"
#include "fedmeta/types.hpp"
