// SPDX-License-Identifier: Apache-2.0
//
// Versioned model checkpoint container (format described in docs/formats.md).
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "icefm/model.hpp"

namespace icefm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string strategy;
  std::string train_domain = "all";
  nlohmann::json extra = nlohmann::json::object();
};

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  CheckpointMeta meta;
};

void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::filesystem::path& file);

/// Rebuilds the model (including prompt/adapter structure) and restores
/// values and trainable flags. When `expected` is given, the stored spec must
/// match its class_count and in_channels.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& file, const ModelSpec* expected = nullptr);

}  // namespace icefm
