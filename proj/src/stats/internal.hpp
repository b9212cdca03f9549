#pragma once

#include "scrkit/text.hpp"

#include <algorithm>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <thread>
#include <vector>

namespace scrkit::stats::detail {

/// Generator for resample / permutation `index` under `seed`.
inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index) {
  return std::mt19937_64(text::mix64(seed ^ text::mix64(index + 1)));
}

/// Runs body(i) for i in [0, count) across worker threads. Each index must be
/// independent; results land in caller-owned slots.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = std::min<std::size_t>({hw, 8, std::max<std::size_t>(1, count / 64)});
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(workers);
  std::exception_ptr failure;
  std::mutex mu;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < count; i += workers) body(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// AUROC on parallel arrays; nullopt when a class is missing.
std::optional<double> auroc_or_none(std::span<const double> scores, std::span<const int> labels);

}  // namespace scrkit::stats::detail
