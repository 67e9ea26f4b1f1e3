#pragma once

// JSON checkpoints: architecture, basis specs and every coefficient array.
// A checkpoint is self-contained; nothing in it refers to training data.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "odenet/model.hpp"

namespace odenet {

inline constexpr int kCheckpointFormatVersion = 1;

struct RefinementRecord {
  std::size_t epoch = 0;
  std::vector<std::size_t> k;    // per block, after refinement
  std::vector<std::size_t> n_t;  // per block, after refinement
};

/// One transformation applied to a checkpoint after training.
struct ProvenanceRecord {
  std::string source_hash;
  std::string method;  // "interpolate", "project" or "shorten"
  std::string detail;
};

struct CheckpointMeta {
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  std::vector<RefinementRecord> refinements;
  std::vector<ProvenanceRecord> provenance;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  Model model;
  CheckpointMeta meta;

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    return a.model == b.model && a.meta == b.meta;
  }
};

inline bool operator==(const RefinementRecord& a, const RefinementRecord& b) {
  return a.epoch == b.epoch && a.k == b.k && a.n_t == b.n_t;
}
inline bool operator==(const ProvenanceRecord& a, const ProvenanceRecord& b) {
  return a.source_hash == b.source_hash && a.method == b.method && a.detail == b.detail;
}

/// Serialize to a JSON document. Doubles use the shortest representation
/// that parses back to the same value, so load(save(c)) == c bit for bit.
std::string checkpoint_to_json(const Checkpoint& ckpt);

/// Errors: VersionError (format_version), FormatError (malformed document or
/// missing keys), SpecError (bad basis/config field, named), ShapeError
/// (coefficient array inconsistent with its shape or the architecture).
Checkpoint checkpoint_from_json(const std::string& text);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64 of the serialized document, as 16 hex digits.
std::string checkpoint_hash(const Checkpoint& ckpt);

}  // namespace odenet
