// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include "himapper/tree_export.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "himapper/errors.hpp"
#include "himapper/lorentz.hpp"

namespace himapper {

TreeExport export_tree(const Model& model, const FeatureBundle& features) {
  if (features.batch != 1) throw ArgumentError("export_tree: expects features of a single image");
  NoGradGuard no_grad;
  NoiseSource noise = NoiseSource::zeros();
  const auto samples = model.tree.sample_tree(noise);
  const EuclideanHierarchy hierarchy = decompose_all(samples, features.v_map, model.decomposer);
  const double c = model.curvature().item();
  const auto owner = leaf_assignment(samples.front(), features.v_map, model.decomposer);

  TreeExport out;
  out.grid = model.backbone.config.grid();
  out.curvature = c;
  const std::size_t depth = hierarchy.depth();
  for (std::size_t l = 1; l <= depth; ++l) {
    ExportedLevel level;
    level.level = l;
    const Tensor& s = hierarchy.level(l);
    for (std::size_t k = 0; k < s.rows(); ++k) {
      ExportedNode node;
      node.id = k;
      if (l < depth) node.parent_id = k / 2;
      auto row = s.values().subspan(k * s.cols(), s.cols());
      const LorentzPoint p = expm_origin(TangentVector{{row.begin(), row.end()}}, c);
      node.dist_to_origin = lorentz_distance(p, LorentzPoint::origin(s.cols(), c));
      level.nodes.push_back(std::move(node));
    }
    out.levels.push_back(std::move(level));
  }
  for (std::size_t pos = 0; pos < owner.size(); ++pos) out.levels[0].nodes[owner[pos]].region.push_back(pos);
  for (std::size_t l = 1; l < depth; ++l) {
    for (auto& parent : out.levels[l].nodes) {
      for (std::size_t child : {2 * parent.id, 2 * parent.id + 1}) {
        const auto& r = out.levels[l - 1].nodes[child].region;
        parent.region.insert(parent.region.end(), r.begin(), r.end());
      }
      std::sort(parent.region.begin(), parent.region.end());
    }
  }
  return out;
}

std::string TreeExport::to_json() const {
  nlohmann::json j;
  j["grid"] = grid;
  j["curvature"] = curvature;
  j["levels"] = nlohmann::json::array();
  for (const auto& level : levels) {
    nlohmann::json lj;
    lj["level"] = level.level;
    lj["nodes"] = nlohmann::json::array();
    for (const auto& node : level.nodes) {
      nlohmann::json nj;
      nj["id"] = node.id;
      nj["parent_id"] = node.parent_id ? nlohmann::json(*node.parent_id) : nlohmann::json(nullptr);
      nj["region"] = node.region;
      nj["dist_to_origin"] = node.dist_to_origin;
      lj["nodes"].push_back(std::move(nj));
    }
    j["levels"].push_back(std::move(lj));
  }
  return j.dump(2) + "\n";
}

std::string TreeExport::to_dot() const {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::ostringstream out;
  out << "digraph hierarchy {\n  rankdir=TB;\n  node [style=filled, fontname=\"Helvetica\"];\n";
  const std::size_t depth = levels.size();
  for (const auto& level : levels) {
    for (const auto& node : level.nodes) {
      // Top-level ancestor: each level up halves the index.
      const std::size_t root = node.id >> (depth - level.level);
      out << "  n" << level.level << '_' << node.id << " [label=\"L" << level.level << " #" << node.id << "\\nd="
          << node.dist_to_origin << "\\n" << node.region.size() << " patches\", fillcolor=\""
          << palette[root % 10] << "\"];\n";
    }
  }
  for (const auto& level : levels) {
    for (const auto& node : level.nodes) {
      if (node.parent_id) {
        out << "  n" << level.level + 1 << '_' << *node.parent_id << " -> n" << level.level << '_' << node.id << ";\n";
      }
    }
  }
  out << "}\n";
  return out.str();
}

void write_tree_export(const TreeExport& tree, const std::string& format, const std::string& path) {
  std::string text;
  if (format == "json") {
    text = tree.to_json();
  } else if (format == "dot") {
    text = tree.to_dot();
  } else {
    throw ConfigError("unsupported tree export format '" + format + "' (expected json or dot)");
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace himapper
