// Copyright 2026 The CTS Authors.
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

// Umbrella header for the library (everything except the HTTP client,
// which pulls in cpp-httplib; include cts/http_backend.hpp for that).

#pragma once

#include "cts/backend.hpp"
#include "cts/dataset.hpp"
#include "cts/emitters.hpp"
#include "cts/errors.hpp"
#include "cts/pipeline.hpp"
#include "cts/scoring.hpp"
#include "cts/selection.hpp"
#include "cts/toy_lm.hpp"
