#include "pinv/parallel.hpp"

#include <atomic>

namespace pinv {

namespace {
std::atomic<std::size_t> g_workers{1};
}

void set_worker_count(std::size_t n) { g_workers.store(n == 0 ? 1 : n); }
std::size_t worker_count() { return g_workers.load(); }

}  // namespace pinv
