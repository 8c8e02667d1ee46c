// Copyright 2026 the confine authors
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
#include <functional>

namespace confine {

/// Worker cap used by every parallel loop in the library. 0 means
/// "hardware concurrency".
void set_max_threads(std::size_t n);
std::size_t max_threads();

/// Splits [0, n) into contiguous chunks of at least `min_chunk` items and
/// runs `body(begin, end)` on each, possibly concurrently. Each chunk must
/// only write to state owned by its own index range, which keeps results
/// independent of the worker count.
void parallel_for(std::size_t n, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace confine
