#pragma once

// Object library: parametric classes expanded into primitive compositions,
// plus the layout (companions, held tool, bottleneck) each task needs.

#include "rar/scene.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace rar {

struct Companion {
  SpecPtr spec;
  PlanarPose4 offset;  // in the primary object's frame
};

struct HeldTool {
  SpecPtr spec;
  Pose grip;  // EndEffector <- tool
};

/// One entry of the library: a primary object plus everything placed with it.
struct SceneItem {
  std::string name;
  std::string class_id;
  std::string split;  // train | intra | inter
  Task task = Task::Grasp;
  SpecPtr object;
  std::vector<Companion> companions;
  std::optional<HeldTool> held;
  Pose bottleneck;  // b^O: Object <- EndEffector
};

struct Catalog {
  double bottleneck_height = 0.35;
  std::vector<SceneItem> items;

  const SceneItem& find(std::string_view name) const;
  std::vector<const SceneItem*> split(std::string_view split) const;
};

using ClassParams = std::map<std::string, double>;

/// Builds an item from a registered class. Unknown classes or parameter names
/// throw Error.
SceneItem build_item(const std::string& name, const std::string& class_id, const std::string& split,
                     const ClassParams& params, const Rgb& color, double bottleneck_height);

std::vector<std::string> known_classes();
ClassParams default_params(const std::string& class_id);

Catalog parse_catalog(const nlohmann::json& doc);
Catalog load_catalog(const std::filesystem::path& path);

/// World <- EndEffector pose of the bottleneck for an object placed at `placement`.
Pose bottleneck_world(const SceneItem& item, const PlanarPose4& placement);

/// Episode start: camera 0.7 m above the table centre, looking down.
Pose deployment_start_pose(double camera_height = 0.7);

WorldState make_world(const SceneItem& item, const PlanarPose4& placement, const Pose& end_effector,
                      std::uint64_t seed, const TableExtent& table = {});

}  // namespace rar
