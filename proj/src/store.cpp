#include "neomlp/store.hpp"

#include "neomlp/error.hpp"
#include "neomlp/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstring>
#include <limits>

namespace neomlp {

using json = nlohmann::json;

Digest sha256(const void* data, size_t size) {
  Digest d{};
  unsigned int len = 0;
  if (EVP_Digest(data, size, d.data(), &len, EVP_sha256(), nullptr) != 1 || len != d.size())
    throw Error("SHA-256 computation failed");
  return d;
}

Digest sha256(const std::string& bytes) { return sha256(bytes.data(), bytes.size()); }

std::string to_hex(const Digest& d) {
  static constexpr char hex[] = "0123456789abcdef";
  std::string s;
  for (uint8_t b : d) {
    s.push_back(hex[b >> 4]);
    s.push_back(hex[b & 15]);
  }
  return s;
}

Digest digest_from_hex(const std::string& h) {
  if (h.size() != 64) throw ConfigError("fingerprint must be 64 hex digits");
  Digest d{};
  auto nib = [&](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw ConfigError("fingerprint has a non-hex digit");
  };
  for (size_t i = 0; i < 32; ++i) d[i] = static_cast<uint8_t>(nib(h[2 * i]) << 4 | nib(h[2 * i + 1]));
  return d;
}

namespace {

constexpr char kCheckpointMagic[] = "NEOF0001";
constexpr char kNuSetMagic[] = "NUSET001";
constexpr size_t kMagicLen = 8;

template <class T>
void put(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

void put_bytes(std::string& out, const void* p, size_t n) { out.append(static_cast<const char*>(p), n); }

// Bounds-checked little-endian reader; every short read is corruption.
class Reader {
 public:
  Reader(const std::string& buf, const char* what) : buf_(buf), what_(what) {}

  template <class T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const char* take(size_t n) {
    if (n > buf_.size() - pos_) throw CorruptionError(std::string(what_) + ": truncated file");
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string string(size_t n) { return {take(n), n}; }
  [[nodiscard]] size_t pos() const { return pos_; }
  [[nodiscard]] bool done() const { return pos_ == buf_.size(); }

 private:
  const std::string& buf_;
  const char* what_;
  size_t pos_ = 0;
};

std::string config_document(const NeoMLP<float>& model, const json& run) {
  json doc;
  doc["model"] = model.config();
  doc["run"] = run;
  return doc.dump();
}

// Returns the serialized body and the bytes the fingerprint covers.
std::string checkpoint_bytes(const NeoMLP<float>& model, const json& run, std::string* hashed) {
  const std::string cfg = config_document(model, run);
  std::string out(kCheckpointMagic, kMagicLen);
  put<uint64_t>(out, cfg.size());
  out += cfg;
  put<uint32_t>(out, static_cast<uint32_t>(model.params().size()));
  std::string covered = cfg;
  for (const auto& p : model.params()) {
    put<uint32_t>(out, static_cast<uint32_t>(p.name.size()));
    out += p.name;
    put<uint32_t>(out, 2);
    put<uint64_t>(out, static_cast<uint64_t>(p.value.rows()));
    put<uint64_t>(out, static_cast<uint64_t>(p.value.cols()));
    const size_t n = static_cast<size_t>(p.value.size()) * sizeof(float);
    put_bytes(out, p.value.data(), n);
    put_bytes(covered, p.value.data(), n);
  }
  if (hashed != nullptr) *hashed = std::move(covered);
  return out;
}

}  // namespace

std::string serialize_checkpoint(const NeoMLP<float>& model, const json& run) {
  std::string covered;
  std::string out = checkpoint_bytes(model, run, &covered);
  const Digest d = sha256(covered);
  put_bytes(out, d.data(), d.size());
  return out;
}

Digest backbone_fingerprint(const NeoMLP<float>& model, const json& run) {
  std::string covered;
  checkpoint_bytes(model, run, &covered);
  return sha256(covered);
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes, "checkpoint");
  if (r.string(kMagicLen) != std::string(kCheckpointMagic, kMagicLen))
    throw CorruptionError("checkpoint: bad magic (not a NEOF0001 file)");
  const auto cfg_len = r.get<uint64_t>();
  if (cfg_len > bytes.size()) throw CorruptionError("checkpoint: config length overflows the file");
  const std::string cfg_text = r.string(static_cast<size_t>(cfg_len));
  json doc;
  try {
    doc = json::parse(cfg_text);
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint: unreadable config: ") + e.what());
  }
  ModelConfig cfg;
  try {
    cfg = doc.at("model").get<ModelConfig>();
  } catch (const std::exception& e) {
    throw CorruptionError(std::string("checkpoint: bad model config: ") + e.what());
  }
  std::string covered = cfg_text;
  Rng scratch(0);
  NeoMLP<float> model(cfg, scratch);
  const auto count = r.get<uint32_t>();
  if (count != model.params().size())
    throw CorruptionError("checkpoint: expected " + std::to_string(model.params().size()) + " tensors, found " +
                          std::to_string(count));
  for (uint32_t t = 0; t < count; ++t) {
    const auto name_len = r.get<uint32_t>();
    const std::string name = r.string(name_len);
    const auto rank = r.get<uint32_t>();
    if (rank != 2) throw CorruptionError("checkpoint: tensor '" + name + "' has unsupported rank");
    const auto rows = r.get<uint64_t>();
    const auto cols = r.get<uint64_t>();
    if (!model.params().contains(name)) throw CorruptionError("checkpoint: unexpected tensor '" + name + "'");
    auto& p = model.params().at(name);
    if (rows != static_cast<uint64_t>(p.value.rows()) || cols != static_cast<uint64_t>(p.value.cols()))
      throw CorruptionError("checkpoint: tensor '" + name + "' has the wrong shape");
    if (rows != 0 && cols > std::numeric_limits<uint64_t>::max() / rows / sizeof(float))
      throw CorruptionError("checkpoint: tensor '" + name + "' dims overflow");
    const size_t n = static_cast<size_t>(rows * cols) * sizeof(float);
    const char* payload = r.take(n);
    std::memcpy(p.value.data(), payload, n);
    covered.append(payload, n);
  }
  Digest stored{};
  std::memcpy(stored.data(), r.take(stored.size()), stored.size());
  if (!r.done()) throw CorruptionError("checkpoint: trailing bytes");
  if (sha256(covered) != stored) throw CorruptionError("checkpoint: fingerprint does not match the content");
  model.params().set_frozen("backbone", true);
  return {std::move(model), doc.at("run")};
}

void save_checkpoint(const std::filesystem::path& path, const NeoMLP<float>& model, const json& run) {
  write_file_atomic(path, serialize_checkpoint(model, run));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

Digest parameter_checksum(const ParameterStore<float>& params) {
  std::string bytes;
  for (const auto& p : params) {
    bytes += p.name;
    bytes.push_back('\0');
    put_bytes(bytes, p.value.data(), static_cast<size_t>(p.value.size()) * sizeof(float));
  }
  return sha256(bytes);
}

// ---- ν-sets --------------------------------------------------------------

Mat<float> NuSet::matrix() const {
  Mat<float> m(size(), static_cast<Index>(hidden + output) * width);
  for (Index n = 0; n < size(); ++n) m.row(n) = reps[static_cast<size_t>(n)].flatten();
  return m;
}

std::vector<int> NuSet::labels() const {
  std::vector<int> out;
  for (const auto& z : reps) out.push_back(z.label);
  return out;
}

void NuSet::require_backbone(const Digest& fingerprint) const {
  if (backbone != fingerprint)
    throw FingerprintMismatch("ν-set '" + split + "' was produced by backbone " + to_hex(backbone) +
                              ", not " + to_hex(fingerprint));
}

std::string serialize_nuset(const NuSet& set) {
  std::string out(kNuSetMagic, kMagicLen);
  put_bytes(out, set.backbone.data(), set.backbone.size());
  put<uint32_t>(out, static_cast<uint32_t>(set.split.size()));
  out += set.split;
  put<uint32_t>(out, static_cast<uint32_t>(set.hidden));
  put<uint32_t>(out, static_cast<uint32_t>(set.output));
  put<uint32_t>(out, static_cast<uint32_t>(set.width));
  put<uint64_t>(out, static_cast<uint64_t>(set.reps.size()));
  for (const auto& z : set.reps) {
    if (z.hidden.rows() != set.hidden || z.output.rows() != set.output || z.hidden.cols() != set.width ||
        z.output.cols() != set.width)
      throw ConfigError("ν-set: rep '" + z.signal_id + "' does not match the set's H, O, D");
    put<uint32_t>(out, static_cast<uint32_t>(z.signal_id.size()));
    out += z.signal_id;
    put<int32_t>(out, z.label);
    put_bytes(out, z.hidden.data(), static_cast<size_t>(z.hidden.size()) * sizeof(float));
    put_bytes(out, z.output.data(), static_cast<size_t>(z.output.size()) * sizeof(float));
  }
  return out;
}

NuSet deserialize_nuset(const std::string& bytes) {
  Reader r(bytes, "ν-set");
  if (r.string(kMagicLen) != std::string(kNuSetMagic, kMagicLen))
    throw CorruptionError("ν-set: bad magic (not a NUSET001 file)");
  NuSet set;
  std::memcpy(set.backbone.data(), r.take(set.backbone.size()), set.backbone.size());
  set.split = r.string(r.get<uint32_t>());
  set.hidden = static_cast<int>(r.get<uint32_t>());
  set.output = static_cast<int>(r.get<uint32_t>());
  set.width = static_cast<int>(r.get<uint32_t>());
  const auto n = r.get<uint64_t>();
  const size_t per = static_cast<size_t>(set.hidden + set.output) * static_cast<size_t>(set.width) * sizeof(float);
  if (n > bytes.size()) throw CorruptionError("ν-set: record count overflows the file");
  for (uint64_t i = 0; i < n; ++i) {
    LatentSet<float> z;
    z.signal_id = r.string(r.get<uint32_t>());
    z.label = r.get<int32_t>();
    z.hidden.resize(set.hidden, set.width);
    z.output.resize(set.output, set.width);
    const char* p = r.take(per);
    std::memcpy(z.hidden.data(), p, static_cast<size_t>(z.hidden.size()) * sizeof(float));
    std::memcpy(z.output.data(), p + z.hidden.size() * sizeof(float), static_cast<size_t>(z.output.size()) * sizeof(float));
    set.reps.push_back(std::move(z));
  }
  if (!r.done()) throw CorruptionError("ν-set: trailing bytes");
  return set;
}

void save_nuset(const std::filesystem::path& path, const NuSet& set) { write_file_atomic(path, serialize_nuset(set)); }

NuSet load_nuset(const std::filesystem::path& path) { return deserialize_nuset(read_file(path)); }

size_t nuset_file_size(const std::string& split, const std::vector<std::string>& ids, int H, int O, int D) {
  size_t size = kMagicLen + 32 + 4 + split.size() + 3 * 4 + 8;
  for (const auto& id : ids) size += 4 + id.size() + 4 + 4 * static_cast<size_t>(H + O) * static_cast<size_t>(D);
  return size;
}

namespace {

void check_permutation(const std::vector<int>& perm, int n) {
  if (static_cast<int>(perm.size()) != n) throw ConfigError("permutation has the wrong length");
  std::vector<bool> seen(static_cast<size_t>(n), false);
  for (int p : perm) {
    if (p < 0 || p >= n || seen[static_cast<size_t>(p)]) throw ConfigError("invalid permutation");
    seen[static_cast<size_t>(p)] = true;
  }
}

}  // namespace

std::vector<int> invert_permutation(const std::vector<int>& perm) {
  check_permutation(perm, static_cast<int>(perm.size()));
  std::vector<int> inv(perm.size());
  for (size_t j = 0; j < perm.size(); ++j) inv[static_cast<size_t>(perm[j])] = static_cast<int>(j);
  return inv;
}

LatentSet<float> permute_hidden(const LatentSet<float>& z, const std::vector<int>& perm) {
  check_permutation(perm, static_cast<int>(z.hidden.rows()));
  LatentSet<float> out = z;
  for (size_t j = 0; j < perm.size(); ++j) out.hidden.row(static_cast<Index>(j)) = z.hidden.row(perm[j]);
  return out;
}

NuSet permute_hidden_latents(const NuSet& set, const std::vector<int>& perm) {
  check_permutation(perm, set.hidden);
  NuSet out = set;
  for (auto& z : out.reps) z = permute_hidden(z, perm);
  return out;
}

}  // namespace neomlp
