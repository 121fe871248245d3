#pragma once

// The memory buffer: every demonstration's bottleneck view, labelled
// alignment samples and end-effector trajectory, plus cached embeddings.

#include "rar/features.hpp"
#include "rar/render.hpp"
#include "rar/scene.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace rar {

struct AlignmentSample {
  Observation observation;
  Displacement4 label;
  Pose pose;  // p_i in World, kept so the label can be recomputed
};

/// One control period. A gripper event fires before the twist is applied.
struct TrajectoryStep {
  Twist twist;
  std::optional<Gripper> event;
  bool operator==(const TrajectoryStep&) const = default;
};

struct Trajectory {
  double dt = 0.05;
  std::vector<TrajectoryStep> steps;
  bool operator==(const Trajectory&) const = default;
};

struct DemoRecord {
  int demo_id = -1;  // -1: assign on add_demo
  Task task = Task::Grasp;
  Observation bottleneck_obs;
  Pose bottleneck_pose;  // b^W at collection time
  std::vector<AlignmentSample> samples;
  Trajectory trajectory;
};

/// Train-time description of the demonstrated object. Lives in its own
/// section of the buffer; nothing on the deployment path reads it.
struct ObjectMeta {
  std::string object_name;
  std::string class_id;
  PlanarPose4 placement;
  bool operator==(const ObjectMeta&) const = default;
};

/// (demo, index) with index -1 for the bottleneck view, so it sorts first.
struct ObsKey {
  int demo = 0;
  int index = -1;
  auto operator<=>(const ObsKey&) const = default;
};

/// "demo:index", the key format used in embedding interchange files.
std::string to_string(const ObsKey& k);
/// Throws Error on anything but two integers separated by a colon.
ObsKey obs_key_from_string(std::string_view s);

struct RetrievalResult {
  int demo_id = -1;
  ObsKey matched;
  double score = -1.0;
  Task task = Task::Grasp;
  Observation bottleneck_obs;
  Trajectory trajectory;
};

struct EmbeddingBlock {
  std::string extractor_id;
  std::uint32_t dim = 0;
  std::vector<ObsKey> keys;
  std::vector<float> values;  // keys.size() x dim, row-major

  const float* row(std::size_t i) const { return values.data() + i * dim; }
  bool operator==(const EmbeddingBlock&) const = default;
};

/// Block for imported embeddings whose table keys name buffer observations.
/// Rows are sorted by key; every row must share one extractor id and dim.
EmbeddingBlock embedding_block(const EmbeddingTable& table);

class MemoryBuffer {
 public:
  /// Validates and appends; returns the assigned demo id.
  int add_demo(DemoRecord rec, ObjectMeta meta = {});

  std::size_t size() const { return demos_.size(); }
  bool empty() const { return demos_.empty(); }
  const std::vector<DemoRecord>& demos() const { return demos_; }
  const DemoRecord& demo(int id) const { return demos_.at(static_cast<std::size_t>(id)); }
  const ObjectMeta& train_meta(int id) const { return meta_.at(static_cast<std::size_t>(id)); }
  std::size_t observation_count() const;
  const Observation& observation(const ObsKey& k) const;

  /// Embeds every observation not yet covered for this extractor.
  void ensure_embeddings(const FeatureExtractor& x);
  /// Registers externally computed embeddings; keys must cover every
  /// observation exactly once.
  void set_embeddings(EmbeddingBlock block);
  const EmbeddingBlock* embeddings(const std::string& extractor_id) const;
  std::vector<std::string> extractor_ids() const;

  /// Exhaustive cosine scan; ties go to the lowest key.
  RetrievalResult query(const Embedding& live) const;
  RetrievalResult query(const Observation& live, const FeatureExtractor& x) const;
  std::vector<std::pair<ObsKey, double>> top_k(const Embedding& live, std::size_t k) const;

  void save(const std::filesystem::path& path) const;
  static MemoryBuffer load(const std::filesystem::path& path);

  bool operator==(const MemoryBuffer& o) const;

 private:
  const EmbeddingBlock& complete_block(const std::string& extractor_id) const;
  RetrievalResult result_for(const ObsKey& key, double score) const;

  std::vector<DemoRecord> demos_;
  std::vector<ObjectMeta> meta_;
  std::vector<EmbeddingBlock> blocks_;
};

/// Single-frame files ("RAROBS1"), used to query the buffer from the CLI.
void save_observation(const Observation& o, const std::filesystem::path& path);
Observation load_observation(const std::filesystem::path& path);

}  // namespace rar
