#pragma once

#include <filesystem>

#include "json.hpp"
#include "metadetector/model.hpp"
#include "metadetector/training.hpp"

namespace metadet {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  model::ModelParams params;
  train::TrainConfig config;
};

// Textual JSON dump: version, seed, vocabulary with its hash, dimensions,
// the config snapshot and every tensor with its shape.
nlohmann::ordered_json checkpoint_to_json(const model::ModelParams& params,
                                          const train::TrainConfig& config);
// Fails with DataError on version, vocabulary-hash, name or shape mismatch.
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path,
                     const model::ModelParams& params,
                     const train::TrainConfig& config);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace metadet
