// Copyright 2026 The SERF Authors.
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

#ifndef SERF_PARALLEL_HPP_
#define SERF_PARALLEL_HPP_

#include <cstdint>
#include <cstdlib>

namespace serf {

// Worker cap: min(OpenMP default, SERF_THREADS). 0 means "not set".
int max_threads();

// Parallel loop over [0, n). Iterations must be independent; any shared
// accumulation must be done by the caller in index order afterwards so
// results do not depend on the thread count.
template <typename F>
void parallel_for(std::int64_t n, F&& body);

// Serial reference loop with the same signature; kept for tests and for
// the kernel benchmark.
template <typename F>
void serial_for(std::int64_t n, F&& body) {
  for (std::int64_t i = 0; i < n; ++i) body(i);
}

}  // namespace serf

#ifdef _OPENMP
#include <omp.h>

namespace serf {

inline int max_threads() {
  static int cached = [] {
    int n = omp_get_max_threads();
    if (const char* env = std::getenv("SERF_THREADS")) {
      const int cap = std::atoi(env);
      if (cap > 0 && cap < n) n = cap;
    }
    return n;
  }();
  return cached;
}

template <typename F>
void parallel_for(std::int64_t n, F&& body) {
  const int nt = max_threads();
#pragma omp parallel for schedule(static) num_threads(nt)
  for (std::int64_t i = 0; i < n; ++i) body(i);
}

}  // namespace serf

#else

namespace serf {

inline int max_threads() { return 1; }

template <typename F>
void parallel_for(std::int64_t n, F&& body) {
  serial_for(n, body);
}

}  // namespace serf

#endif  // _OPENMP

#endif  // SERF_PARALLEL_HPP_
