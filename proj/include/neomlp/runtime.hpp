#pragma once

namespace neomlp {

/// Process-wide execution settings. `threads` <= 0 reads NEOF_THREADS and
/// falls back to the hardware thread count. Deterministic mode pins the thread count to one
/// so reductions always run in the same order. Safe to call repeatedly; the
/// allocator is tuned once.
struct RuntimeOptions {
  int threads = 0;
  bool deterministic = false;
};

void configure_runtime(const RuntimeOptions& opts = {});

/// Threads the numeric kernels currently use.
int runtime_threads();

}  // namespace neomlp
