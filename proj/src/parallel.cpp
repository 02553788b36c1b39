#include "vssl/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace vssl {

namespace {

#ifdef __GLIBC__
// Training allocates and frees multi-MB activation buffers every iteration.
// Keep them on the heap free list instead of handing them back to the kernel,
// otherwise the page-fault churn dominates the memory-bound ops.
const bool malloc_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, -1);
    return true;
}();
#endif

thread_local bool inside_pool_worker = false;

class Pool {
public:
    explicit Pool(int workers) : job_fn_(nullptr) {
        for (int i = 0; i < workers; ++i) {
            threads_.emplace_back([this, i] { worker_loop(i); });
        }
    }

    ~Pool() {
        {
            std::lock_guard lock(mutex_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    int lanes() const { return static_cast<int>(threads_.size()) + 1; }

    // Runs fn(lane) on every lane (workers plus the calling thread).
    void run(const std::function<void(int)>& fn) {
        {
            std::lock_guard lock(mutex_);
            job_fn_ = &fn;
            pending_ = static_cast<int>(threads_.size());
            ++generation_;
        }
        cv_.notify_all();
        fn(0);  // caller takes lane 0
        std::unique_lock lock(mutex_);
        done_cv_.wait(lock, [this] { return pending_ == 0; });
        job_fn_ = nullptr;
    }

private:
    void worker_loop(int index) {
        inside_pool_worker = true;
        uint64_t seen = 0;
        for (;;) {
            const std::function<void(int)>* fn = nullptr;
            {
                std::unique_lock lock(mutex_);
                cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                fn = job_fn_;
            }
            (*fn)(index + 1);
            {
                std::lock_guard lock(mutex_);
                if (--pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    std::vector<std::thread> threads_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    const std::function<void(int)>* job_fn_;
    int pending_ = 0;
    uint64_t generation_ = 0;
    bool stop_ = false;
};

Pool& pool() {
    static Pool instance(op_thread_count() - 1);
    return instance;
}

}  // namespace

InlineOpsScope::InlineOpsScope() : previous_(inside_pool_worker) {
    inside_pool_worker = true;
}

InlineOpsScope::~InlineOpsScope() { inside_pool_worker = previous_; }

int op_thread_count() {
    static const int count = [] {
        if (const char* env = std::getenv("VSSL_OP_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1) return v;
        }
        const unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw);
    }();
    return count;
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    const int lanes = op_thread_count();
    // Small ranges and nested calls run inline; the chunking below is only a
    // speedup, never a semantic change.
    if (lanes == 1 || n < 2 || inside_pool_worker) {
        fn(0, n);
        return;
    }
    const int64_t chunk = (n + lanes - 1) / lanes;
    pool().run([&](int lane) {
        const int64_t begin = chunk * lane;
        const int64_t end = std::min<int64_t>(n, begin + chunk);
        if (begin < end) fn(begin, end);
    });
}

}  // namespace vssl
