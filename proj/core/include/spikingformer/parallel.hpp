#pragma once

#include <cstddef>
#include <functional>

#include "spikingformer/precision.hpp"

SPKF_NAMESPACE_BEGIN

/// Worker cap: SPKF_THREADS if set and positive, otherwise hardware concurrency.
std::size_t worker_threads();

/// Runs fn(i) for i in [begin, end). Each index must touch disjoint output, so
/// results do not depend on the thread count.
void parallel_for(std::size_t begin, std::size_t end, const std::function<void(std::size_t)>& fn);

SPKF_NAMESPACE_END
