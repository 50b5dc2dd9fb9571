#include "nodect/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace nodect {

namespace {
std::atomic<std::size_t> g_threads{std::max<std::size_t>(1, std::thread::hardware_concurrency())};
}

void set_num_threads(std::size_t n) { g_threads = std::max<std::size_t>(1, n); }

std::size_t num_threads() { return g_threads.load(); }

std::size_t chunk_count(std::size_t n) { return std::max<std::size_t>(1, std::min(n, num_threads())); }

void parallel_chunks(std::size_t n,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  const std::size_t chunks = chunk_count(n);
  if (chunks == 1) {
    body(0, 0, n);
    return;
  }
  const std::size_t base = n / chunks;
  const std::size_t extra = n % chunks;
  auto bounds = [&](std::size_t c) {
    const std::size_t b = c * base + std::min(c, extra);
    return std::pair{b, b + base + (c < extra ? 1 : 0)};
  };

  std::vector<std::exception_ptr> errors(chunks);
  std::vector<std::thread> workers;
  workers.reserve(chunks - 1);
  for (std::size_t c = 1; c < chunks; ++c) {
    workers.emplace_back([&, c] {
      try {
        auto [b, e] = bounds(c);
        body(c, b, e);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  try {
    auto [b, e] = bounds(0);
    body(0, b, e);
  } catch (...) {
    errors[0] = std::current_exception();
  }
  for (auto& w : workers) w.join();
  for (auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
}

}  // namespace nodect
