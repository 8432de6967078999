#pragma once

#include <filesystem>
#include <memory>

#include "json.hpp"
#include "semdiff/pipeline.hpp"

namespace semdiff {

// Checkpoint container:
//   8 bytes   magic "SDIFFCK1"
//   8 bytes   header length in bytes (u64, little endian)
//   header    JSON: {"version", "weights", "config", "meta", "tensors": [{"name", "shape", "offset"}]}
//   payload   float64 little-endian values; offsets count values, not bytes
inline constexpr char kCheckpointMagic[9] = "SDIFFCK1";

void save_checkpoint(const std::filesystem::path& path, Model& model,
                     const nlohmann::json& meta = nlohmann::json::object());

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  nlohmann::json meta;
};

// Rebuilds the model from the embedded config and restores every tensor.
// Throws DataError on a bad magic, truncation or tensor mismatch.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace semdiff
