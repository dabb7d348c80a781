#include "neomlp/runtime.hpp"

#include <Eigen/Core>

#include <malloc.h>

#include <algorithm>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>

namespace neomlp {

namespace {

// Training allocates and frees the same large activation buffers every step.
// Keeping them in the heap instead of returning them to the kernel avoids a
// page-fault storm on each fresh mapping.
void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

int env_threads() {
  const char* v = std::getenv("NEOF_THREADS");
  if (v == nullptr || *v == '\0') return 0;
  try {
    return std::stoi(v);
  } catch (const std::exception&) {
    return 0;
  }
}

}  // namespace

void configure_runtime(const RuntimeOptions& opts) {
  static std::once_flag once;
  std::call_once(once, tune_allocator);
  int threads = opts.threads > 0 ? opts.threads : env_threads();
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (opts.deterministic) threads = 1;
  Eigen::setNbThreads(threads);
}

int runtime_threads() { return Eigen::nbThreads(); }

}  // namespace neomlp
