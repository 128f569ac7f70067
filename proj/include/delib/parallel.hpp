#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <string_view>
#include <vector>

namespace delib {

/// How independent per-item work (batch examples, estimator trials, enumerated
/// sequences) is scheduled. Both paths produce the same per-item results and
/// every reduction happens afterwards in ascending index order, so serial and
/// parallel runs are bit-identical.
enum class Execution { serial, parallel };

Execution default_execution();
Execution parse_execution(std::string_view text);
int worker_count(Execution exec);

/// Calls fn(i) for i in [0, n). The serial path is the reference
/// implementation; the parallel path distributes indices over OpenMP threads.
/// The exception raised at the lowest index (if any) is rethrown.
template <class Fn>
void for_each_index(std::size_t n, Execution exec, Fn&& fn) {
  if (exec == Execution::serial || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  const long long count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (long long i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Evaluates fn(i) for every index and returns the results in index order.
template <class T, class Fn>
std::vector<T> map_indices(std::size_t n, Execution exec, Fn&& fn) {
  std::vector<T> out(n);
  for_each_index(n, exec, [&](std::size_t i) { out[i] = fn(i); });
  return out;
}

/// Maps indices in chunks and folds each result into `fold` in ascending index
/// order, bounding memory to one chunk of mapped values.
template <class T, class MapFn, class FoldFn>
void map_fold(std::size_t n, Execution exec, MapFn&& map, FoldFn&& fold, std::size_t chunk = 256) {
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t len = std::min(chunk, n - begin);
    std::vector<T> part = map_indices<T>(len, exec, [&](std::size_t i) { return map(begin + i); });
    for (std::size_t i = 0; i < len; ++i) fold(begin + i, part[i]);
  }
}

}  // namespace delib
