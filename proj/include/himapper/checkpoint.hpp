// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0
//
// Self-describing binary checkpoints:
//   "HMCK" | u32 version | u64 n | n bytes of JSON header | u64 count |
//   count x (u32 name length | name | u32 rank | rank x u64 dims | doubles)
// The JSON header echoes the run config and free-form run metadata. Values
// are stored as raw host doubles, so a round trip is bit-exact.

#pragma once

#include <map>
#include <string>

#include "himapper/model.hpp"

namespace himapper {

struct CheckpointInfo {
  std::string kind;  // "pretrain" or "finetune"
  std::map<std::string, double> metrics;
};

struct LoadedCheckpoint {
  Model model;
  CheckpointInfo info;
};

// IoError when the file cannot be written.
void save_checkpoint(const std::string& path, const Model& model, const CheckpointInfo& info);

// Rebuilds the model from the echoed config and fills every parameter.
// IoError for unreadable or corrupt files; ConfigError when the blobs do not
// match the shapes the config implies.
LoadedCheckpoint load_checkpoint(const std::string& path);

// Copies the backbone and baseline head of a checkpoint into `model`.
// ConfigError when a name is missing or a shape differs.
CheckpointInfo load_backbone(const std::string& path, Model& model);

}  // namespace himapper
