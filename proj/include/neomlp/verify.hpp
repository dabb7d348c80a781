#pragma once

// Self-checks run by `neof verify` and the acceptance harness: hidden-node
// permutation invariance, output-node equivariance, analytic vs.
// finite-difference gradients, and attention against brute-force oracles.

#include "neomlp/config.hpp"
#include "neomlp/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace neomlp {

struct VerifyOptions {
  uint64_t seed = 0;
  /// Fewer models and seeds; same tolerances.
  bool fast = false;
  /// Adds a constant to one query-projection weight after the oracle
  /// fixture is captured (fault-injection self-test).
  bool inject_fault = false;
};

struct SuiteResult {
  std::string name;
  bool ok = true;
  double max_error = 0.0;
  double tolerance = 0.0;
  double seconds = 0.0;
  nlohmann::json details = nlohmann::json::object();

  [[nodiscard]] nlohmann::json to_json() const;
};

/// Random tiny architecture: I <= 3, H in [1, 4], O <= 3, D in {4, 8},
/// L <= 2, small RFF bank.
ModelConfig random_tiny_config(uint64_t seed);

/// Hidden permutations leave outputs unchanged (< 1e-5 at 32-bit, < 1e-10
/// at 64-bit); permuting output latents permutes the outputs.
SuiteResult symmetry_suite(const VerifyOptions& opts);

/// Analytic vs. central-difference gradients of every backbone and latent
/// parameter, both attention variants, 64-bit, relative error < 1e-4.
SuiteResult gradient_suite(const VerifyOptions& opts);

/// Attention kernels and the model's attention sublayer against dense
/// brute-force oracles on 4 tokens (< 1e-6), plus value passthrough at one
/// token.
SuiteResult attention_oracle_suite(const VerifyOptions& opts);

/// Brute-force single-head-loop evaluation of sublayer attention on one
/// token set (N x D), weights as in LayerWeights.
Mat<double> oracle_attention(const Mat<double>& tokens, const Mat<double>& wq, const Mat<double>& wk,
                             const Mat<double>& wv, const Mat<double>& wo, const Mat<double>& bo, int heads,
                             AttentionKind kind);
/// Brute-force mix of already projected q, k, v (N x D each).
Mat<double> oracle_mix(const Mat<double>& q, const Mat<double>& k, const Mat<double>& v, int heads, AttentionKind kind);

struct VerifyReport {
  std::vector<SuiteResult> suites;
  double seconds = 0.0;

  [[nodiscard]] bool ok() const;
  [[nodiscard]] nlohmann::json to_json() const;
};

/// `which` is "all", "symmetry", "grad" or "oracle".
VerifyReport run_verify(const std::string& which, const VerifyOptions& opts);

}  // namespace neomlp
