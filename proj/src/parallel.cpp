#include "nidens/parallel.hpp"

#include <tbb/blocked_range.h>
#include <tbb/global_control.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include <atomic>
#include <memory>
#include <mutex>
#include <thread>

namespace nidens {

namespace {

std::atomic<std::size_t> g_threads{1};
std::mutex g_arena_mutex;
std::shared_ptr<tbb::task_arena> g_arena;
std::unique_ptr<tbb::global_control> g_control;

std::shared_ptr<tbb::task_arena> arena() {
  std::lock_guard lock(g_arena_mutex);
  const std::size_t n = g_threads.load();
  if (!g_arena || static_cast<std::size_t>(g_arena->max_concurrency()) != n) {
    g_control.reset();
    g_control = std::make_unique<tbb::global_control>(tbb::global_control::max_allowed_parallelism, n);
    g_arena = std::make_shared<tbb::task_arena>(static_cast<int>(n));
  }
  return g_arena;
}

}  // namespace

void set_num_threads(std::size_t n) {
  if (n == 0) n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  g_threads.store(n);
}

std::size_t num_threads() { return g_threads.load(); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  if (n < 2 || g_threads.load() < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  auto a = arena();
  a->execute([&] {
    tbb::parallel_for(tbb::blocked_range<std::size_t>(0, n), [&](const auto& r) {
      for (std::size_t i = r.begin(); i != r.end(); ++i) body(i);
    });
  });
}

}  // namespace nidens
