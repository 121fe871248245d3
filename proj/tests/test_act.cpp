#include "rar/act.hpp"
#include "rar/teach.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include "json.hpp"

namespace rar {
namespace {

using test::catalog;

struct OneDemo {
  const SceneItem* item = nullptr;
  PlanarPose4 placement;
  MemoryBuffer buf;
};

OneDemo one_demo(const std::string& name, PlanarPose4 placement = {0.01, 0.02, 0.0, 0.3}) {
  OneDemo d;
  d.item = &catalog().find(name);
  d.placement = placement;
  CollectionConfig cc;
  cc.samples = 4;
  CollectedDemo c = collect_demo(*d.item, placement, canonical_script(*d.item), cc);
  d.buf.add_demo(std::move(c.record), std::move(c.meta));
  d.buf.ensure_embeddings(*make_extractor("patch"));
  return d;
}

GoalAlignFn oracle_goal_aligner(const Pose& b) {
  const AlignFn a = oracle_aligner(b);
  return [a](const WorldState& w, const Observation& live, const Observation&) { return a(w, live); };
}

TEST(RunEpisode, UnmovedObjectSucceeds) {
  const OneDemo d = one_demo("cup_green");
  const WorldState w = make_world(*d.item, d.placement, deployment_start_pose(), 3);
  const auto x = make_extractor("patch");
  const EpisodeResult r = run_episode(w, d.buf, oracle_goal_aligner(bottleneck_world(*d.item, d.placement)), *x);
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.failure, "");
  EXPECT_EQ(r.retrieval.demo_id, 0);
  EXPECT_EQ(r.servo_trace.iterations, 1);
  EXPECT_EQ(r.steps_total, d.buf.demo(0).trajectory.steps.size() + 1);
}

TEST(RunEpisode, PropertyRepositionedObjectsSucceed) {
  const auto x = make_extractor("patch");
  Rng rng(21);
  for (const SceneItem* item : catalog().split("train")) {
    const OneDemo d = one_demo(item->name);
    for (int k = 0; k < 5; ++k) {
      const PlanarPose4 t = sample_test_pose(*item->object, rng);
      const WorldState w = make_world(*item, t, deployment_start_pose(), rng.next());
      const EpisodeResult r = run_episode(w, d.buf, oracle_goal_aligner(bottleneck_world(*item, t)), *x);
      EXPECT_TRUE(r.success) << item->name << " trial " << k;
    }
  }
}

TEST(RunEpisode, ServoFailureIsRecorded) {
  const OneDemo d = one_demo("can_red");
  const WorldState w = make_world(*d.item, d.placement, deployment_start_pose(), 3);
  EpisodeConfig cfg;
  cfg.servo.max_iters = 3;
  const GoalAlignFn stuck = [](const WorldState&, const Observation&, const Observation&) {
    return Displacement4(0.0, 0.0, 0.05, 0.0);
  };
  const EpisodeResult r = run_episode(w, d.buf, stuck, *make_extractor("patch"), cfg);
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.failure, "servo");
  EXPECT_FALSE(r.servo_trace.converged);
  EXPECT_EQ(r.servo_trace.iterations, 3);
}

TEST(RunEpisode, ReRetrievalQueriesEveryIteration) {
  const OneDemo d = one_demo("mug_blue");
  const WorldState w = make_world(*d.item, d.placement, deployment_start_pose(), 3);
  int calls = 0;
  const AlignFn oracle = oracle_aligner(bottleneck_world(*d.item, d.placement));
  const GoalAlignFn counting = [&](const WorldState& s, const Observation& live, const Observation&) {
    ++calls;
    return oracle(s, live).scaled(0.5);
  };
  EpisodeConfig cfg;
  cfg.re_retrieve = true;
  const EpisodeResult r = run_episode(w, d.buf, counting, *make_extractor("patch"), cfg);
  EXPECT_TRUE(r.servo_trace.converged);
  EXPECT_EQ(calls, static_cast<int>(r.servo_trace.steps.size()));
  EXPECT_EQ(r.retrieval.demo_id, 0);
}

TEST(Replay, ZeroTwistOnlyAdvancesTime) {
  const OneDemo d = one_demo("can_red");
  const WorldState w = make_world(*d.item, d.placement, deployment_start_pose(), 3);
  Trajectory t;
  t.steps.push_back({Twist::zero(), std::nullopt});
  const WorldState n = replay(w, t);
  EXPECT_EQ(translation_error(n.end_effector, w.end_effector), 0.0);
  EXPECT_EQ(n.progress.steps, w.progress.steps + 1);
  EXPECT_DOUBLE_EQ(n.progress.time, w.progress.time + t.dt);
}

TEST(Replay, GraspFromBottleneckLifts) {
  const OneDemo d = one_demo("can_red");
  const WorldState w = make_world(*d.item, d.placement, bottleneck_world(*d.item, d.placement), 3);
  const WorldState n = replay(w, d.buf.demo(0).trajectory);
  ASSERT_TRUE(n.attached.has_value());
  EXPECT_EQ(*n.attached, 0u);
  EXPECT_TRUE(check_success(n, Task::Grasp));
}

TEST(Replay, InsertionFailsTenMillimetresOff) {
  const OneDemo d = one_demo("bottle_open");
  Pose b = bottleneck_world(*d.item, d.placement);
  EXPECT_TRUE(check_success(replay(make_world(*d.item, d.placement, b, 3), d.buf.demo(0).trajectory), Task::InsertCap));
  b.position.x() += 0.010;
  const WorldState off = replay(make_world(*d.item, d.placement, b, 3), d.buf.demo(0).trajectory);
  EXPECT_FALSE(check_success(off, Task::InsertCap));
}

TEST(EpisodeJson, ObservationsOnlyOnRequest) {
  const OneDemo d = one_demo("can_red");
  const WorldState w = make_world(*d.item, d.placement, deployment_start_pose(), 3);
  const EpisodeResult r =
      run_episode(w, d.buf, oracle_goal_aligner(bottleneck_world(*d.item, d.placement)), *make_extractor("patch"));
  const std::string plain = episode_json(r);
  EXPECT_EQ(plain.find('\n'), std::string::npos);
  const auto j = nlohmann::json::parse(plain);
  EXPECT_FALSE(j["retrieval"].contains("bottleneck_obs"));
  EXPECT_TRUE(j.contains("wall_time"));
  EXPECT_EQ(j["success"], true);
  EXPECT_EQ(j["servo"]["iterations"], 1);

  const auto full = nlohmann::json::parse(episode_json(r, true, false));
  EXPECT_EQ(full["retrieval"]["bottleneck_obs"]["depth"].size(), Observation::kPixels);
  EXPECT_FALSE(full.contains("wall_time"));
}

}  // namespace
}  // namespace rar
