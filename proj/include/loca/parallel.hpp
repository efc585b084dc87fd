// Copyright 2026 The LOCA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef LOCA_PARALLEL_HPP_
#define LOCA_PARALLEL_HPP_

#include <cstddef>
#include <functional>

namespace loca {

/// Worker count. Initialized from LOCA_THREADS (default 1); results never
/// depend on it because every parallel loop partitions independent outputs.
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// Calls fn(begin, end) over contiguous chunks of [0, n). Runs inline when
/// one worker is configured or the work is smaller than min_chunk.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t min_chunk = 1);

}  // namespace loca

#endif  // LOCA_PARALLEL_HPP_
