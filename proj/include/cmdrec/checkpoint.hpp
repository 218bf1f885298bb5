#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "cmdrec/model.hpp"

namespace cmdrec {

// Binary container: magic "CMDRECK1", u64 header size, JSON header
// (version, config, vocabulary hash, LoRA spec, tensor table, extra), then
// the raw little-endian doubles of every tensor in table order.
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path, std::uint64_t vocab_hash,
                     const std::string& extra_json = "{}");

struct LoadedCheckpoint {
  Model model;
  std::uint64_t vocab_hash = 0;
  std::string extra_json;
};

// Throws VocabularyMismatch when expected_vocab_hash is given and differs.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 std::optional<std::uint64_t> expected_vocab_hash = std::nullopt);

}  // namespace cmdrec
