#pragma once

#include <functional>

namespace grc {

/// Worker count: hardware concurrency capped by the GRC_THREADS environment
/// variable, unless overridden with set_thread_count().
int thread_count();

/// Overrides the worker count for the current process; 0 restores the default.
void set_thread_count(int threads);

/// Runs body(i) for i in [0, n). Work is split into contiguous index ranges,
/// so callers that write disjoint outputs per index stay bitwise deterministic
/// for any thread count.
void parallel_for(int n, const std::function<void(int)>& body);

}  // namespace grc
