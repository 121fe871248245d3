#pragma once

// Baselines (BC, VINN, BC-GUAPO) and the experiment harness that runs every
// method on seed-matched test worlds and emits CSV/JSON/SVG reports.

#include "rar/act.hpp"
#include "rar/catalog.hpp"
#include "rar/teach.hpp"

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace rar {

enum class MethodId { Ours, Bc, Vinn, BcGuapo };

std::string_view to_string(MethodId m);
MethodId method_from_string(std::string_view s);

/// Which cell of the retrieval x decomposition taxonomy a method occupies.
struct MethodTraits {
  bool retrieval = false;
  bool decomposition = false;
};
MethodTraits traits(MethodId m);

// Policy actions: twist followed by the gripper target (1 closed, 0 open).

inline constexpr int kActionDim = 7;
using ActionVector = Eigen::Matrix<double, kActionDim, 1>;

struct PolicyAction {
  Twist twist;
  Gripper gripper = Gripper::Open;
};

ActionVector encode_action(const PolicyAction& a);
PolicyAction decode_action(const ActionVector& v);  // gripper closed when > 0.5

/// Per-frame (descriptor, action) pairs from re-rendered demonstrations.
struct FrameSet {
  std::string extractor_id;
  int dim = 0;
  std::vector<float> features;  // row-major, one unit-norm row per frame
  std::vector<ActionVector> actions;
  std::vector<int> demo;  // owning demo per frame

  std::size_t size() const { return actions.size(); }
  const float* row(std::size_t i) const { return features.data() + i * static_cast<std::size_t>(dim); }
  void append(const FrameSet& other);
};

/// Scripted move from `from` to `to`: yaw in place first, then a straight
/// end-effector-frame translation.
Trajectory approach_trajectory(const Pose& from, const Pose& to, const ScriptParams& params, double dt);

struct StreamConfig {
  bool include_approach = true;  // start pose -> b^W before the demo
  bool include_demo = true;      // the recorded trajectory itself
  Pose start = deployment_start_pose();
  ScriptParams script;
  RenderOptions render;
  SimConfig sim;
};

/// Replays demo `d` in its training world (read from the buffer's train-only
/// metadata) and renders every step.
FrameSet demo_frames(const MemoryBuffer& buf, int d, const Catalog& catalog, const FeatureExtractor& x,
                     const StreamConfig& cfg);

/// Behaviour cloning: descriptor -> action regression on the shared MLP stack.
struct BcPolicy {
  std::string extractor_id;
  Mlp net;
};

struct BcTrainResult {
  BcPolicy policy;
  TrainCurves curves;
};

BcTrainResult bc_train(const FrameSet& frames, const TrainConfig& cfg);
PolicyAction bc_act(const BcPolicy& p, const Embedding& live);

/// Frame-level nearest-neighbour policy. Keys are cached in double precision
/// so a step costs one matrix-vector product.
class VinnPolicy {
 public:
  VinnPolicy() = default;
  VinnPolicy(FrameSet frames, int k = 5, double temperature = 0.1);

  const FrameSet& frames() const { return frames_; }
  int k() const { return k_; }
  double temperature() const { return temperature_; }

  /// Cosine similarity of `live` to every frame.
  Eigen::VectorXd similarities(const Embedding& live) const;

 private:
  FrameSet frames_;
  int k_ = 5;
  double temperature_ = 0.1;
  Eigen::MatrixXd keys_;  // dim x frames, unit columns
};

/// Softmax(similarity / temperature) weighted mean of the k most similar
/// frames' actions. Ties in similarity go to the lower frame index.
ActionVector vinn_action(const VinnPolicy& p, const Embedding& live);
PolicyAction vinn_act(const VinnPolicy& p, const Embedding& live);

struct BcGuapoPolicy {
  AlignerModel aligner;  // goal-free
  BcPolicy interaction;
};

/// Per-step closed-loop controller used by the baselines.
using PolicyFn = std::function<PolicyAction(const Observation& live)>;

struct ClosedLoopResult {
  bool success = false;  // task predicate held at some step
  std::size_t steps = 0;
  WorldState final_world;
};

/// Runs `policy` for at most `max_steps` control periods, checking `task`
/// after every step.
ClosedLoopResult run_closed_loop(const WorldState& world, const PolicyFn& policy, Task task, int max_steps,
                                 double dt, const RenderOptions& render_opts = {}, const SimConfig& sim = {});

// Experiments

struct ExperimentConfig {
  std::filesystem::path catalog;
  std::vector<MethodId> methods = {MethodId::Ours};
  std::vector<std::string> splits = {"train", "intra", "inter"};
  int demos_per_object = 1;
  int trials = 10;
  std::uint64_t seed = 0;
  std::string extractor = "patch";
  CollectionConfig collection;
  ScriptParams script;
  TrainConfig train;   // aligners
  TrainConfig policy;  // baseline policy networks
  ServoConfig servo;
  int vinn_k = 5;
  double vinn_temperature = 0.1;
  int max_steps = 400;
  int workers = 0;
  // Runtime only, never serialised.
  bool record_traces = false;  // keep one JSON line per episode of ours
  bool dump_obs = false;

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Missing keys keep their defaults; unknown keys and bad values throw Error
/// naming the field path.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::string& path = "");

struct TrialRecord {
  std::string method;
  std::string object;
  std::string split;
  int trial = 0;
  PlanarPose4 placement;
  bool success = false;
  std::string failure;  // "", "servo", "task", "retrieval" or "steps"
  int retrieved_demo = -1;
  std::size_t steps = 0;
};

struct CellResult {
  std::string method;
  std::string object;
  std::string split;
  int trials = 0;
  int successes = 0;
};

struct ExperimentReport {
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::vector<CellResult> cells;    // method-major, then split, then catalog order
  std::vector<TrialRecord> trials;  // same order, then trial index
  std::vector<std::string> traces;  // episode JSON lines when recorded

  /// Success fraction pooled over the split's objects; all splits when empty.
  double aggregate(std::string_view method, std::string_view split = {}) const;
  std::vector<std::string> methods() const;
};

/// The seeded TrainConfig the experiment uses for its goal-conditioned aligner.
TrainConfig aligner_train_config(const ExperimentConfig& cfg);

/// Seed-matched test placement for (object, trial).
PlanarPose4 test_placement(const SceneItem& item, std::uint64_t seed, int trial);

/// Placement of the j-th demonstration of an object.
PlanarPose4 demo_placement(const SceneItem& item, std::uint64_t seed, int j);

/// Collects demos_per_object demonstrations of every train-split object.
MemoryBuffer collect_buffer(const Catalog& catalog, const ExperimentConfig& cfg);

ExperimentReport run_experiment(const ExperimentConfig& cfg);
ExperimentReport run_experiment(const ExperimentConfig& cfg, const Catalog& catalog, const MemoryBuffer& buf,
                                const AlignerModel* trained_aligner = nullptr);

/// Replay versus a BC interaction policy trained on post-bottleneck frames,
/// both started from the same aligned state on each train object. With
/// `aligner` null the shared alignment is the analytic oracle; otherwise the
/// model servos to the object's own bottleneck view.
ExperimentReport run_interaction_study(const ExperimentConfig& cfg, const Catalog& catalog, const MemoryBuffer& buf,
                                       const AlignerModel* aligner = nullptr);

struct RetrievalAccuracy {
  std::string extractor_id;
  int queries = 0;
  int correct = 0;
  double accuracy() const { return queries > 0 ? static_cast<double>(correct) / queries : 0.0; }
};

/// Renders each test object from the deployment start pose at `views`
/// seed-matched placements and checks whether the retrieved demo has the
/// same class.
std::vector<RetrievalAccuracy> retrieval_accuracy(const MemoryBuffer& buf, const std::vector<const SceneItem*>& tests,
                                                  const std::vector<const FeatureExtractor*>& extractors, int views,
                                                  std::uint64_t seed, int workers = 1);

/// The query views used above, object-major, so an external model can embed
/// them offline.
std::vector<Observation> retrieval_queries(const std::vector<const SceneItem*>& tests, int views, std::uint64_t seed,
                                           int workers = 1);

/// Scores precomputed query embeddings (ordered as retrieval_queries) against
/// the buffer's block for the same extractor id, e.g. imported embeddings.
RetrievalAccuracy retrieval_accuracy(const MemoryBuffer& buf, const std::vector<const SceneItem*>& tests,
                                     const std::vector<Embedding>& queries, int views);

enum class ReportFormat { Csv, Json, Svg };

/// Writes summary.csv, episodes.csv, report.json and per-split bar charts.
/// Returns the paths written.
std::vector<std::filesystem::path> emit_report(const ExperimentReport& r, const std::filesystem::path& dir,
                                               const std::vector<ReportFormat>& formats = {
                                                   ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg});

std::string summary_csv(const ExperimentReport& r);
std::string episodes_csv(const ExperimentReport& r);
nlohmann::json report_json(const ExperimentReport& r);
ExperimentReport report_from_json(const nlohmann::json& j);
std::string bars_svg(const ExperimentReport& r, std::string_view split);

}  // namespace rar
