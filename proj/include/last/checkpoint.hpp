#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "last/model_config.hpp"
#include "last/parameters.hpp"

namespace last {

/// Versioned parameter snapshot.
///
/// On-disk layout (little endian):
///   "LASTCKPT" u32 version
///   u32 header_size, header text: `key=value` lines (phase, parent, model.*, meta.*)
///   u32 tensor_count, then per tensor:
///     u32 len + group name, u32 len + tensor name, u32 rank, i32 dims[rank],
///     u64 count, float32 data[count]
///   32-byte SHA-256 of everything above
/// The hex form of that trailing digest is the checkpoint's content hash.
struct Checkpoint {
  ModelConfig config;
  Phase phase = Phase::init;
  std::string parent_hash;  // content hash of the checkpoint this one was trained from
  ParameterStore<float> params;
  std::vector<std::pair<std::string, std::string>> metadata;

  std::vector<std::uint8_t> serialize_payload() const;
  std::string content_hash() const;
  /// Hash of the serialized tensors of `groups` only.
  std::string groups_hash(const std::vector<Group>& groups) const;
  /// Hash of every group frozen during adaptation.
  std::string backbone_hash() const;
  std::string heads_hash() const;

  bool operator==(const Checkpoint& other) const;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

/// Verifies the trailing hash ("checkpoint hash mismatch") and, when
/// `expected` is given, that every tensor matches that model configuration
/// (the error names the offending group).
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

}  // namespace last
