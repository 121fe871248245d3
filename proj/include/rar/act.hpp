#pragma once

// Deployment: retrieve a demonstration, servo to its bottleneck, replay it.

#include "rar/align.hpp"
#include "rar/buffer.hpp"

#include <string>

namespace rar {

/// Open-loop execution of a recorded trajectory. Never renders.
WorldState replay(const WorldState& world, const Trajectory& trajectory, const SimConfig& sim = {});

/// Alignment given the live view and the retrieved goal view.
using GoalAlignFn = std::function<Displacement4(const WorldState& world, const Observation& live, const Observation& goal)>;

GoalAlignFn model_aligner(const AlignerModel& model);

struct EpisodeConfig {
  ServoConfig servo;
  RenderOptions render;
  SimConfig sim;
  bool re_retrieve = false;  // re-query the buffer at every servo iteration
};

struct EpisodeResult {
  RetrievalResult retrieval;
  ServoTrace servo_trace;
  Pose replay_final_pose;
  bool success = false;
  Task task_inferred = Task::Grasp;
  std::string failure;  // empty, "servo" or "task"
  std::size_t steps_total = 0;
  double wall_time = 0.0;
  WorldState final_world;
};

/// Renders o_live at the current pose, retrieves (o_b, s), servos, replays,
/// then checks the retrieved demo's task.
EpisodeResult run_episode(const WorldState& world, const MemoryBuffer& buf, const GoalAlignFn& align,
                          const FeatureExtractor& extractor, const EpisodeConfig& cfg = {});

/// One JSON line per episode. Observations are written as raw arrays only with
/// `dump_obs`; wall time is left out when `include_time` is false.
std::string episode_json(const EpisodeResult& r, bool dump_obs = false, bool include_time = true);

}  // namespace rar
