#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace oed {

using Index = Eigen::Index;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

// Invalid input, configuration or precondition. The CLI maps it to exit code 2.
class ValidationError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Factorization failure, non-convergence, or any other numerical breakdown.
// The CLI maps it to exit code 1.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string &msg) {
  if (!cond)
    throw ValidationError(msg);
}

inline void warn(std::string_view msg) { std::cerr << "warning: " << msg << '\n'; }

// Global tally of PDE solves. One forward solve is one full forward time
// march, one adjoint solve is one full reverse sweep.
struct SolveCounter {
  std::atomic<std::uint64_t> forward{0};
  std::atomic<std::uint64_t> adjoint{0};

  void reset() {
    forward = 0;
    adjoint = 0;
  }
};

inline SolveCounter &solve_counter() {
  static SolveCounter counter;
  return counter;
}

struct SolveCount {
  std::uint64_t forward = 0;
  std::uint64_t adjoint = 0;
  std::uint64_t total() const { return forward + adjoint; }
};

inline SolveCount solve_snapshot() {
  return {solve_counter().forward.load(), solve_counter().adjoint.load()};
}

inline SolveCount operator-(const SolveCount &a, const SolveCount &b) {
  return {a.forward - b.forward, a.adjoint - b.adjoint};
}

// Worker count: OED_DOPT_THREADS when set, else the hardware concurrency.
inline unsigned max_threads() {
  if (const char *env = std::getenv("OED_DOPT_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1)
      return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace detail {
inline thread_local bool in_worker = false;
}

// Runs fn(i) for i in [0, count) over contiguous chunks. fn must only touch
// state owned by index i. Nested calls run serially inside the worker.
template <class Fn> void parallel_for(Index count, Fn &&fn) {
  const unsigned threads =
      static_cast<unsigned>(std::min<Index>(max_threads(), std::max<Index>(count, 1)));
  if (threads <= 1 || detail::in_worker) {
    for (Index i = 0; i < count; ++i)
      fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const Index chunk = (count + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      detail::in_worker = true;
      try {
        const Index lo = t * chunk;
        const Index hi = std::min(count, lo + chunk);
        for (Index i = lo; i < hi; ++i)
          fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto &th : pool)
    th.join();
  for (auto &e : errors)
    if (e)
      std::rethrow_exception(e);
}

// 64-bit FNV-1a, stable across platforms; used for config content hashes.
inline std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

} // namespace oed
