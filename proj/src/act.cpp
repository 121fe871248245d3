#include "rar/act.hpp"

#include "json.hpp"

#include <chrono>

namespace rar {

WorldState replay(const WorldState& world, const Trajectory& trajectory, const SimConfig& sim) {
  WorldState w = world;
  for (const TrajectoryStep& s : trajectory.steps) {
    if (s.event) w = set_gripper(w, *s.event, sim);
    w = step(w, s.twist, trajectory.dt, sim);
  }
  return w;
}

GoalAlignFn model_aligner(const AlignerModel& model) {
  auto extractor = make_extractor(model.extractor_id);
  return [&model, extractor](const WorldState&, const Observation& live, const Observation& goal) {
    return predict(model, *extractor, live, &goal);
  };
}

EpisodeResult run_episode(const WorldState& world, const MemoryBuffer& buf, const GoalAlignFn& align,
                          const FeatureExtractor& extractor, const EpisodeConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  EpisodeResult r;
  const Observation live = render(world, cfg.render);
  r.retrieval = buf.query(live, extractor);

  const Observation* goal = &r.retrieval.bottleneck_obs;
  RetrievalResult latest;
  AlignFn step_align = [&](const WorldState& w, const Observation& o) {
    if (cfg.re_retrieve) {
      latest = buf.query(o, extractor);
      goal = &latest.bottleneck_obs;
    }
    return align(w, o, *goal);
  };
  ServoOutcome s = servo(world, step_align, cfg.servo, cfg.render, cfg.sim);
  r.servo_trace = std::move(s.trace);
  if (cfg.re_retrieve && latest.demo_id >= 0) r.retrieval = std::move(latest);
  r.task_inferred = r.retrieval.task;

  if (!r.servo_trace.converged) {
    r.failure = "servo";
    r.final_world = std::move(s.world);
  } else {
    r.final_world = replay(s.world, r.retrieval.trajectory, cfg.sim);
    r.success = check_success(r.final_world, r.task_inferred, cfg.sim);
    if (!r.success) r.failure = "task";
  }
  r.replay_final_pose = r.final_world.end_effector;
  r.steps_total = r.final_world.progress.steps + static_cast<std::size_t>(r.servo_trace.iterations);
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

namespace {

nlohmann::json pose_json(const Pose& p) {
  return {{"position", {p.position.x(), p.position.y(), p.position.z()}},
          {"orientation", {p.orientation.w(), p.orientation.x(), p.orientation.y(), p.orientation.z()}},
          {"frame", to_string(p.frame)},
          {"child", to_string(p.child)}};
}

nlohmann::json obs_json(const Observation& o) { return {{"rgb", o.rgb}, {"depth", o.depth}}; }

}  // namespace

std::string episode_json(const EpisodeResult& r, bool dump_obs, bool include_time) {
  nlohmann::json j;
  j["retrieval"] = {{"demo_id", r.retrieval.demo_id},
                    {"matched", {r.retrieval.matched.demo, r.retrieval.matched.index}},
                    {"score", r.retrieval.score},
                    {"task", to_string(r.retrieval.task)}};
  if (dump_obs) j["retrieval"]["bottleneck_obs"] = obs_json(r.retrieval.bottleneck_obs);
  nlohmann::json steps = nlohmann::json::array();
  for (const ServoStep& s : r.servo_trace.steps) {
    steps.push_back({{"pose", pose_json(s.pose)},
                     {"prediction", {s.prediction.dx, s.prediction.dy, s.prediction.dz, s.prediction.dtheta_z}}});
  }
  j["servo"] = {{"converged", r.servo_trace.converged}, {"iterations", r.servo_trace.iterations}, {"trace", steps}};
  j["replay_final_pose"] = pose_json(r.replay_final_pose);
  j["success"] = r.success;
  j["task_inferred"] = to_string(r.task_inferred);
  j["failure"] = r.failure;
  j["steps_total"] = r.steps_total;
  j["clipped"] = r.final_world.progress.clipped;
  if (include_time) j["wall_time"] = r.wall_time;
  return j.dump();
}

}  // namespace rar
