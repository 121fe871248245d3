#include "rar/bench.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>

namespace rar {
namespace {

using test::catalog;

/// Seconds rather than minutes: a handful of samples and epochs, short
/// episodes, one worker.
ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.catalog = test::catalog_path();
  c.collection.samples = 10;
  c.train.epochs = 3;
  c.policy.epochs = 3;
  c.servo.max_iters = 5;
  c.max_steps = 15;
  c.trials = 2;
  c.workers = 1;
  c.seed = 11;
  return c;
}

/// 5 train, 5 intra and 3 inter objects.
Catalog thirteen_objects() {
  Catalog c = catalog();
  const auto drop_last_of = [&](const std::string& split) {
    for (auto it = c.items.rbegin(); it != c.items.rend(); ++it) {
      if (it->split == split) {
        c.items.erase(std::next(it).base());
        return;
      }
    }
  };
  drop_last_of("train");
  drop_last_of("intra");
  return c;
}

Embedding unit(std::vector<float> v) {
  double n = 0.0;
  for (float f : v) n += double(f) * f;
  for (float& f : v) f = static_cast<float>(f / std::sqrt(n));
  return {"test", std::move(v)};
}

FrameSet random_frames(Rng& rng, int n, int dim) {
  FrameSet f;
  f.extractor_id = "test";
  f.dim = dim;
  for (int i = 0; i < n; ++i) {
    std::vector<float> v(dim);
    for (float& x : v) x = static_cast<float>(rng.normal());
    const Embedding e = unit(v);
    f.features.insert(f.features.end(), e.values.begin(), e.values.end());
    ActionVector a;
    for (int k = 0; k < kActionDim; ++k) a[k] = rng.uniform(-0.1, 0.1);
    f.actions.push_back(a);
    f.demo.push_back(i % 3);
  }
  return f;
}

Embedding frame_embedding(const FrameSet& f, std::size_t i) {
  return {f.extractor_id, std::vector<float>(f.row(i), f.row(i) + f.dim)};
}

TEST(Traits, FourCells) {
  EXPECT_TRUE(traits(MethodId::Ours).retrieval);
  EXPECT_TRUE(traits(MethodId::Ours).decomposition);
  EXPECT_FALSE(traits(MethodId::Bc).retrieval);
  EXPECT_FALSE(traits(MethodId::Bc).decomposition);
  EXPECT_TRUE(traits(MethodId::Vinn).retrieval);
  EXPECT_FALSE(traits(MethodId::Vinn).decomposition);
  EXPECT_FALSE(traits(MethodId::BcGuapo).retrieval);
  EXPECT_TRUE(traits(MethodId::BcGuapo).decomposition);
  for (MethodId m : {MethodId::Ours, MethodId::Bc, MethodId::Vinn, MethodId::BcGuapo}) {
    EXPECT_EQ(method_from_string(to_string(m)), m);
  }
  EXPECT_THROW(method_from_string("nope"), Error);
}

TEST(Actions, EncodeDecodeRoundTrip) {
  PolicyAction a;
  a.twist.linear = Vec3(0.01, -0.02, 0.03);
  a.twist.angular = Vec3(0.0, 0.0, 0.2);
  a.gripper = Gripper::Closed;
  const PolicyAction b = decode_action(encode_action(a));
  EXPECT_EQ(b.twist.linear, a.twist.linear);
  EXPECT_EQ(b.twist.angular, a.twist.angular);
  EXPECT_EQ(b.gripper, Gripper::Closed);
  ActionVector v = encode_action(a);
  v[6] = 0.4;
  EXPECT_EQ(decode_action(v).gripper, Gripper::Open);
}

TEST(Vinn, SingleNeighbourReturnsItsAction) {
  Rng rng(1);
  const FrameSet f = random_frames(rng, 40, 8);
  const VinnPolicy p(f, 1, 0.1);
  for (std::size_t i = 0; i < f.size(); ++i) {
    EXPECT_EQ(vinn_action(p, frame_embedding(f, i)), f.actions[i]) << i;
  }
}

TEST(Vinn, UniformSimilarityGivesMean) {
  Rng rng(2);
  FrameSet f = random_frames(rng, 12, 4);
  for (std::size_t i = 1; i < f.size(); ++i) std::copy(f.row(0), f.row(0) + f.dim, f.features.begin() + i * f.dim);
  const VinnPolicy p(f, static_cast<int>(f.size()), 0.1);
  const ActionVector mean =
      std::accumulate(f.actions.begin(), f.actions.end(), ActionVector(ActionVector::Zero())) / double(f.size());
  EXPECT_LT((vinn_action(p, frame_embedding(f, 0)) - mean).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Vinn, PropertyMatchesBruteForceSoftmax) {
  Rng rng(3);
  const FrameSet f = random_frames(rng, 200, 16);
  for (int k : {1, 3, 5, 20}) {
    const VinnPolicy p(f, k, 0.1);
    for (int q = 0; q < 20; ++q) {
      std::vector<float> v(f.dim);
      for (float& x : v) x = static_cast<float>(rng.normal());
      const Embedding live = unit(v);
      // Stored floats are only unit-norm to float precision; renormalise both
      // sides in double as the policy does.
      const auto norm = [&](const float* r) {
        double n = 0.0;
        for (int d = 0; d < f.dim; ++d) n += double(r[d]) * r[d];
        return std::sqrt(n);
      };
      const double nq = norm(live.values.data());
      std::vector<std::pair<double, std::size_t>> sims;
      for (std::size_t i = 0; i < f.size(); ++i) {
        double s = 0.0;
        for (int d = 0; d < f.dim; ++d) s += double(f.row(i)[d]) * live.values[d];
        sims.push_back({-s / (norm(f.row(i)) * nq), i});
      }
      std::sort(sims.begin(), sims.end());
      ActionVector num = ActionVector::Zero();
      double den = 0.0;
      const double top = -sims[0].first;
      for (int j = 0; j < k; ++j) {
        const double w = std::exp((-sims[j].first - top) / 0.1);
        num += w * f.actions[sims[j].second];
        den += w;
      }
      EXPECT_LT((vinn_action(p, live) - num / den).cwiseAbs().maxCoeff(), 1e-12) << "k=" << k;
    }
  }
}

TEST(Bc, ConstantActionsGiveConstantPolicy) {
  Rng rng(4);
  FrameSet f = random_frames(rng, 300, 16);
  ActionVector c;
  c << 0.01, -0.02, 0.0, 0.0, 0.0, 0.1, 1.0;
  for (ActionVector& a : f.actions) a = c;
  TrainConfig tc;
  tc.epochs = 10;
  const BcTrainResult r = bc_train(f, tc);
  // Normalisation constants are stored at float precision.
  for (int q = 0; q < 10; ++q) {
    const PolicyAction a = bc_act(r.policy, frame_embedding(f, rng.index(f.size())));
    EXPECT_NEAR(a.twist.linear.x(), 0.01, 1e-7);
    EXPECT_NEAR(a.twist.linear.y(), -0.02, 1e-7);
    EXPECT_NEAR(a.twist.angular.z(), 0.1, 1e-7);
    EXPECT_EQ(a.gripper, Gripper::Closed);
  }
}

TEST(Bc, DeterministicUnderSeed) {
  Rng rng(5);
  const FrameSet f = random_frames(rng, 100, 8);
  TrainConfig tc;
  tc.epochs = 5;
  tc.seed = 9;
  const BcTrainResult a = bc_train(f, tc), b = bc_train(f, tc);
  EXPECT_EQ(a.curves.val_loss, b.curves.val_loss);
  ASSERT_EQ(a.policy.net.parameter_count(), b.policy.net.parameter_count());
  for (std::size_t i = 0; i < a.policy.net.parameter_count(); ++i) {
    ASSERT_EQ(a.policy.net.parameter(i), b.policy.net.parameter(i));
  }
}

TEST(ApproachTrajectory, ReachesTarget) {
  const Pose from = deployment_start_pose();
  const Pose to = Pose::from(Vec3(0.05, -0.04, 0.35), yaw_quat(2.5), Frame::World, Frame::EndEffector);
  const Trajectory t = approach_trajectory(from, to, ScriptParams{}, 0.05);
  const SceneItem& item = catalog().find("can_red");
  const WorldState end = replay(make_world(item, {}, from, 1), t);
  EXPECT_LT(translation_error(end.end_effector, to), 1e-6);
  EXPECT_LT(rotation_error(end.end_effector, to), 1e-6);
}

TEST(ClosedLoop, ReplayingDemoFramesSucceeds) {
  for (const SceneItem* item : catalog().split("train")) {
    const PlanarPose4 placement(0.02, -0.03, 0.0, 0.6);
    CollectionConfig cc;
    cc.samples = 2;
    CollectedDemo d = collect_demo(*item, placement, canonical_script(*item), cc);
    MemoryBuffer buf;
    buf.add_demo(std::move(d.record), std::move(d.meta));
    const auto x = make_extractor("patch");
    const FrameSet f = demo_frames(buf, 0, catalog(), *x, StreamConfig{});
    ASSERT_EQ(f.size(), f.demo.size());

    std::size_t i = 0;
    const PolicyFn scripted = [&](const Observation&) {
      return decode_action(f.actions[std::min(i++, f.size() - 1)]);
    };
    const WorldState w = make_world(*item, placement, deployment_start_pose(), 3);
    const ClosedLoopResult r = run_closed_loop(w, scripted, item->task, static_cast<int>(f.size()) + 5, 0.05);
    EXPECT_TRUE(r.success) << item->name;
    EXPECT_LE(r.steps, f.size() + 5);
  }
}

TEST(ClosedLoop, StepLimitEndsIdlePolicy) {
  const SceneItem& item = catalog().find("can_red");
  const WorldState w = make_world(item, {}, deployment_start_pose(), 1);
  const ClosedLoopResult r = run_closed_loop(w, [](const Observation&) { return PolicyAction{}; }, item.task, 7, 0.05);
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.steps, 7u);
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c = tiny_config();
  c.methods = {MethodId::Vinn, MethodId::Bc};
  c.demos_per_object = 10;
  c.collection.volume.z_max = 0.4;
  const nlohmann::json j = to_json(c);
  EXPECT_EQ(to_json(experiment_config_from_json(j)), j);
  EXPECT_FALSE(j.contains("record_traces"));
}

TEST(Config, UnknownKeyAndBadValuesNameTheField) {
  nlohmann::json j = to_json(tiny_config());
  j["collection"]["volume"]["zz"] = 1;
  try {
    experiment_config_from_json(j);
    FAIL() << "accepted an unknown key";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("collection.volume.zz"), std::string::npos) << e.what();
  }
  j = to_json(tiny_config());
  j["trials"] = "ten";
  try {
    experiment_config_from_json(j);
    FAIL() << "accepted a string count";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("trials"), std::string::npos) << e.what();
  }
  ExperimentConfig c = tiny_config();
  c.demos_per_object = 3;
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config();
  c.methods = {MethodId::Bc, MethodId::Bc};
  EXPECT_THROW(c.validate(), Error);
}

TEST(Placements, SeedMatchedAndInsideTestRegion) {
  const SceneItem& item = catalog().find("mug_blue");
  EXPECT_EQ(test_placement(item, 4, 2), test_placement(item, 4, 2));
  EXPECT_NE(test_placement(item, 4, 2), test_placement(item, 5, 2));
  EXPECT_NE(test_placement(item, 4, 2), demo_placement(item, 4, 2));
}

/// Two methods over thirteen objects at ten trials each, shared by the
/// report tests below.
const ExperimentReport& counting_report() {
  static const ExperimentReport r = [] {
    ExperimentConfig c = tiny_config();
    c.methods = {MethodId::Ours, MethodId::Bc};
    c.trials = 10;
    const Catalog cat = thirteen_objects();
    return run_experiment(c, cat, collect_buffer(cat, c));
  }();
  return r;
}

TEST(RunExperiment, EpisodeCountIsMethodsTimesObjectsTimesTrials) {
  const ExperimentReport& r = counting_report();
  EXPECT_EQ(r.trials.size(), 260u);
  EXPECT_EQ(r.cells.size(), 26u);
  for (const CellResult& c : r.cells) EXPECT_EQ(c.trials, 10);
  EXPECT_EQ(r.methods(), (std::vector<std::string>{"ours", "bc"}));
}

TEST(RunExperiment, PlacementsMatchAcrossMethods) {
  std::map<std::pair<std::string, int>, std::vector<PlanarPose4>> seen;
  for (const TrialRecord& t : counting_report().trials) seen[{t.object, t.trial}].push_back(t.placement);
  EXPECT_EQ(seen.size(), 130u);
  for (const auto& [key, placements] : seen) {
    ASSERT_EQ(placements.size(), 2u);
    EXPECT_EQ(placements[0], placements[1]) << key.first << " " << key.second;
  }
}

TEST(RunExperiment, SameSeedSameReport) {
  ExperimentConfig c = tiny_config();
  c.methods = {MethodId::Ours, MethodId::Vinn, MethodId::BcGuapo};
  c.splits = {"intra"};
  Catalog cat = catalog();
  const MemoryBuffer buf = collect_buffer(cat, c);
  const ExperimentReport a = run_experiment(c, cat, buf);
  c.workers = 2;
  const ExperimentReport b = run_experiment(c, cat, buf);
  EXPECT_EQ(episodes_csv(a), episodes_csv(b));
  EXPECT_EQ(summary_csv(a), summary_csv(b));
}

TEST(Report, SummaryRowsAreCellsPlusSplitTotals) {
  const ExperimentReport& r = counting_report();
  const std::string s = summary_csv(r);
  const auto lines = std::count(s.begin(), s.end(), '\n');
  // Header, 26 cells, then per method one row for each split and one pooled.
  EXPECT_EQ(lines, 1 + 26 + 2 * (3 + 1));
  const std::string e = episodes_csv(r);
  EXPECT_EQ(std::count(e.begin(), e.end(), '\n'), 261);
}

TEST(Report, JsonRoundTripAndReEmitAreBitIdentical) {
  const ExperimentReport& r = counting_report();
  const ExperimentReport back = report_from_json(report_json(r));
  EXPECT_EQ(summary_csv(back), summary_csv(r));
  EXPECT_EQ(episodes_csv(back), episodes_csv(r));
  EXPECT_EQ(bars_svg(back, "intra"), bars_svg(r, "intra"));

  test::TempDir a, b;
  const auto pa = emit_report(r, a.path());
  const auto pb = emit_report(back, b.path());
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    std::ifstream fa(pa[i], std::ios::binary), fb(pb[i], std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
    EXPECT_EQ(sa, sb) << pa[i].filename();
  }
}

TEST(Report, SvgIsWellFormedXml) {
  test::TempDir dir;
  const auto paths = emit_report(counting_report(), dir.path(), {ReportFormat::Svg});
  ASSERT_FALSE(paths.empty());
  for (const auto& p : paths) {
    const std::string cmd = "python3 -c \"import sys, xml.etree.ElementTree as E; E.parse(sys.argv[1])\" '" +
                            p.string() + "'";
    EXPECT_EQ(std::system(cmd.c_str()), 0) << p;
  }
}

/// Class-match accuracy recomputed by scanning every stored embedding.
int brute_force_correct(const MemoryBuffer& buf, const std::vector<const SceneItem*>& tests,
                        const std::vector<Observation>& queries, const FeatureExtractor& x, int views) {
  const EmbeddingBlock& block = *buf.embeddings(x.id());
  int correct = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const Embedding e = x.extract(queries[q]);
    double best = -2.0;
    int demo = -1;
    for (std::size_t i = 0; i < block.keys.size(); ++i) {
      double s = 0.0;
      for (std::uint32_t d = 0; d < block.dim; ++d) s += double(block.row(i)[d]) * e.values[d];
      if (s > best) {
        best = s;
        demo = block.keys[i].demo;
      }
    }
    if (buf.train_meta(demo).class_id == tests[q / views]->class_id) ++correct;
  }
  return correct;
}

TEST(RetrievalAccuracy, MatchesBruteForce) {
  ExperimentConfig c = tiny_config();
  MemoryBuffer buf = collect_buffer(catalog(), c);
  const auto tests = catalog().split("intra");
  const auto patch = make_extractor("patch");
  const auto hist = make_extractor("gradient_histogram");
  buf.ensure_embeddings(*patch);
  buf.ensure_embeddings(*hist);
  const auto acc = retrieval_accuracy(buf, tests, {patch.get(), hist.get()}, 3, 7);
  ASSERT_EQ(acc.size(), 2u);
  const std::vector<Observation> queries = retrieval_queries(tests, 3, 7);
  ASSERT_EQ(queries.size(), tests.size() * 3);
  EXPECT_EQ(acc[0].queries, static_cast<int>(queries.size()));
  EXPECT_EQ(acc[0].correct, brute_force_correct(buf, tests, queries, *patch, 3));
  EXPECT_EQ(acc[1].correct, brute_force_correct(buf, tests, queries, *hist, 3));
}

TEST(RetrievalAccuracy, ImportedEmbeddingsRankLikeTheirSource) {
  test::TempDir dir;
  ExperimentConfig c = tiny_config();
  MemoryBuffer buf = collect_buffer(catalog(), c);
  const auto tests = catalog().split("inter");
  const auto patch = make_extractor("patch");
  buf.ensure_embeddings(*patch);

  // Round-trip the patch descriptors through the interchange format as if an
  // external model had produced them.
  EmbeddingTable stored, queried;
  for (const DemoRecord& d : buf.demos()) {
    for (int i = -1; i < static_cast<int>(d.samples.size()); ++i) {
      stored.push_back({to_string(ObsKey{d.demo_id, i}), patch->extract(buf.observation({d.demo_id, i}))});
    }
  }
  const std::vector<Observation> queries = retrieval_queries(tests, 4, 3);
  for (std::size_t q = 0; q < queries.size(); ++q) queried.push_back({std::to_string(q), patch->extract(queries[q])});
  export_embeddings(dir / "buf.raremb", "mirror", stored);
  export_embeddings(dir / "q.raremb", "mirror", queried);

  buf.set_embeddings(embedding_block(import_embeddings(dir / "buf.raremb")));
  std::vector<Embedding> external;
  for (auto& [key, e] : import_embeddings(dir / "q.raremb")) external.push_back(std::move(e));
  ASSERT_EQ(external.front().extractor_id, "external:mirror");

  const RetrievalAccuracy imported = retrieval_accuracy(buf, tests, external, 4);
  const RetrievalAccuracy native = retrieval_accuracy(buf, tests, {patch.get()}, 4, 3).front();
  EXPECT_EQ(imported.extractor_id, "external:mirror");
  EXPECT_EQ(imported.queries, native.queries);
  EXPECT_EQ(imported.correct, native.correct);
}

TEST(InteractionStudy, BothArmsOnEveryTrainObject) {
  ExperimentConfig c = tiny_config();
  c.max_steps = 200;
  const MemoryBuffer buf = collect_buffer(catalog(), c);
  const ExperimentReport r = run_interaction_study(c, catalog(), buf);
  EXPECT_EQ(r.methods().size(), 2u);
  EXPECT_EQ(r.cells.size(), 2 * catalog().split("train").size());
  // With oracle alignment, replay is the task script itself.
  EXPECT_EQ(r.methods().front(), "replay");
  EXPECT_DOUBLE_EQ(r.aggregate("replay"), 1.0);
}

}  // namespace
}  // namespace rar
