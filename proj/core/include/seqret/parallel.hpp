#pragma once

#include <cstddef>
#include <functional>

namespace seqret {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Work is handed out
/// by index, so results written to slot i are independent of scheduling. The
/// exception of the lowest failing index is rethrown.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace seqret
