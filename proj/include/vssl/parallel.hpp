#pragma once

#include <cstdint>
#include <functional>

namespace vssl {

// Number of worker threads for tensor kernels. Controlled by VSSL_OP_THREADS,
// defaults to the hardware concurrency.
int op_thread_count();

// Splits [0, n) into one contiguous chunk per worker and runs fn(begin, end)
// on each. Every index is processed by exactly one worker and each worker
// iterates its chunk in ascending order, so any result written per-index is
// bit-identical to a sequential loop regardless of the thread count.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

// While alive on a thread, parallel_for runs inline there. Sweep workers use
// this so concurrent runs do not contend for the kernel thread pool.
class InlineOpsScope {
public:
    InlineOpsScope();
    ~InlineOpsScope();
    InlineOpsScope(const InlineOpsScope&) = delete;
    InlineOpsScope& operator=(const InlineOpsScope&) = delete;

private:
    bool previous_;
};

}  // namespace vssl
