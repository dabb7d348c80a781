#pragma once

// Bit-exact persistence of backbone checkpoints and ν-sets (per-signal latent
// collections bound to the backbone that produced them).
//
// Checkpoint layout (little-endian):
//   "NEOF0001"
//   u64 config length, config JSON bytes ({"model": ..., "run": ...})
//   u32 tensor count
//   per tensor: u32 name length, name, u32 rank, rank x u64 dims, f32 payload
//   32-byte SHA-256 over the config bytes followed by every payload
//
// ν-set layout:
//   "NUSET001", 32-byte backbone fingerprint, u32 split length, split,
//   u32 H, u32 O, u32 D, u64 N,
//   per record: u32 id length, id, i32 label (-1 unlabeled), (H+O)*D f32

#include "neomlp/model.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace neomlp {

using Digest = std::array<uint8_t, 32>;

Digest sha256(const void* data, size_t size);
Digest sha256(const std::string& bytes);
std::string to_hex(const Digest& d);
Digest digest_from_hex(const std::string& hex);

struct Checkpoint {
  NeoMLP<float> model;
  nlohmann::json run;  // provenance: merged run configuration and seeds
};

/// The exact bytes save_checkpoint writes.
std::string serialize_checkpoint(const NeoMLP<float>& model, const nlohmann::json& run = nlohmann::json::object());
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const NeoMLP<float>& model,
                     const nlohmann::json& run = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// The fingerprint stored in a checkpoint written with the same arguments.
Digest backbone_fingerprint(const NeoMLP<float>& model, const nlohmann::json& run = nlohmann::json::object());

/// SHA-256 over every backbone tensor's name and value bytes.
Digest parameter_checksum(const ParameterStore<float>& params);

struct NuSet {
  Digest backbone{};
  std::string split;
  int hidden = 0;
  int output = 0;
  int width = 0;
  std::vector<LatentSet<float>> reps;

  [[nodiscard]] Index size() const { return static_cast<Index>(reps.size()); }
  /// N x (H+O)*D, one flattened ν-rep per row.
  [[nodiscard]] Mat<float> matrix() const;
  [[nodiscard]] std::vector<int> labels() const;
  /// Throws FingerprintMismatch unless bound to `fingerprint`.
  void require_backbone(const Digest& fingerprint) const;
};

std::string serialize_nuset(const NuSet& set);
NuSet deserialize_nuset(const std::string& bytes);
void save_nuset(const std::filesystem::path& path, const NuSet& set);
NuSet load_nuset(const std::filesystem::path& path);

/// Exact file size for a ν-set with the given ids.
size_t nuset_file_size(const std::string& split, const std::vector<std::string>& ids, int H, int O, int D);

/// Reorders every rep's hidden rows: new row j is old row perm[j].
NuSet permute_hidden_latents(const NuSet& set, const std::vector<int>& perm);
LatentSet<float> permute_hidden(const LatentSet<float>& z, const std::vector<int>& perm);
std::vector<int> invert_permutation(const std::vector<int>& perm);

}  // namespace neomlp
