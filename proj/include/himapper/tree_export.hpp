// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-image hierarchy export. Leaves own the patches whose final-layer
// decoder attention (averaged over heads) they win; a parent owns the union
// of its children's patches.

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "himapper/model.hpp"

namespace himapper {

struct ExportedNode {
  std::size_t id = 0;  // index within its level
  std::optional<std::size_t> parent_id;
  std::vector<std::size_t> region;  // sorted patch indices, row-major grid
  double dist_to_origin = 0.0;
};

struct ExportedLevel {
  std::size_t level = 1;
  std::vector<ExportedNode> nodes;
};

struct TreeExport {
  std::size_t grid = 0;  // patch grid side; hw = grid * grid
  double curvature = 1.0;
  std::vector<ExportedLevel> levels;

  // {"grid", "curvature", "levels": [{"level", "nodes": [{"id", "parent_id",
  // "region", "dist_to_origin"}]}]}; parent_id is null at the top level.
  std::string to_json() const;
  // Digraph with parent -> child edges; each top-level subtree gets a colour.
  std::string to_dot() const;
};

// Deterministic (zero tree noise). `features` must hold a single image.
TreeExport export_tree(const Model& model, const FeatureBundle& features);

// format: "json" or "dot" (ConfigError otherwise); IoError on write failure.
void write_tree_export(const TreeExport& tree, const std::string& format, const std::string& path);

}  // namespace himapper
