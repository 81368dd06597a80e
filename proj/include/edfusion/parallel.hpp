#pragma once

#include <cstddef>
#include <functional>

namespace edfusion {

/// Worker count used by parallel_for. 0 selects hardware concurrency.
void set_num_threads(int n);
int num_threads();

/// Runs fn(i) for i in [begin, end) split into contiguous chunks. Callers
/// write results by index only, so output never depends on the schedule.
void parallel_for(std::size_t begin, std::size_t end, const std::function<void(std::size_t)>& fn);

}  // namespace edfusion
