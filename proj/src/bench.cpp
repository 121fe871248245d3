#include "rar/bench.hpp"

#include "rar/binio.hpp"
#include "rar/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

namespace rar {

std::string_view to_string(MethodId m) {
  switch (m) {
    case MethodId::Ours: return "ours";
    case MethodId::Bc: return "bc";
    case MethodId::Vinn: return "vinn";
    case MethodId::BcGuapo: return "bc_guapo";
  }
  return "?";
}

MethodId method_from_string(std::string_view s) {
  for (MethodId m : {MethodId::Ours, MethodId::Bc, MethodId::Vinn, MethodId::BcGuapo}) {
    if (to_string(m) == s) return m;
  }
  throw Error("unknown method '" + std::string(s) + "' (expected ours, bc, vinn or bc_guapo)");
}

MethodTraits traits(MethodId m) {
  switch (m) {
    case MethodId::Ours: return {true, true};
    case MethodId::Bc: return {false, false};
    case MethodId::Vinn: return {true, false};
    case MethodId::BcGuapo: return {false, true};
  }
  return {};
}

ActionVector encode_action(const PolicyAction& a) {
  ActionVector v;
  v << a.twist.linear, a.twist.angular, a.gripper == Gripper::Closed ? 1.0 : 0.0;
  return v;
}

PolicyAction decode_action(const ActionVector& v) {
  PolicyAction a;
  a.twist.linear = v.head<3>();
  a.twist.angular = v.segment<3>(3);
  a.gripper = v[6] > 0.5 ? Gripper::Closed : Gripper::Open;
  return a;
}

void FrameSet::append(const FrameSet& other) {
  if (other.size() == 0) return;
  if (size() == 0 && extractor_id.empty()) {
    extractor_id = other.extractor_id;
    dim = other.dim;
  }
  if (other.extractor_id != extractor_id || other.dim != dim) throw Error("cannot merge frames from different extractors");
  features.insert(features.end(), other.features.begin(), other.features.end());
  actions.insert(actions.end(), other.actions.begin(), other.actions.end());
  demo.insert(demo.end(), other.demo.begin(), other.demo.end());
}

Trajectory approach_trajectory(const Pose& from, const Pose& to, const ScriptParams& params, double dt) {
  const Displacement4 d = displacement_to_bottleneck(from, to);
  Trajectory t;
  t.dt = dt;
  if (d.dtheta_z != 0.0) {
    const int n = segment_steps(d.dtheta_z, params.angular_speed, dt);
    Twist w;
    w.angular = Vec3(0.0, 0.0, d.dtheta_z / (n * dt));
    t.steps.insert(t.steps.end(), static_cast<std::size_t>(n), TrajectoryStep{w, std::nullopt});
  }
  // After the yaw the end-effector frame is rotated, so re-express the offset.
  const Vec3 move = yaw_quat(-d.dtheta_z) * d.translation();
  if (move.norm() > 0.0) {
    const int n = segment_steps(move.norm(), params.approach_speed, dt);
    Twist v;
    v.linear = move / (n * dt);
    t.steps.insert(t.steps.end(), static_cast<std::size_t>(n), TrajectoryStep{v, std::nullopt});
  }
  return t;
}

namespace {

void push_frame(FrameSet& fs, const FeatureExtractor& x, const Observation& o, const PolicyAction& a, int d) {
  const Embedding e = x.extract(o);
  fs.features.insert(fs.features.end(), e.values.begin(), e.values.end());
  fs.actions.push_back(encode_action(a));
  fs.demo.push_back(d);
}

WorldState roll(WorldState w, const Trajectory& t, FrameSet& fs, const FeatureExtractor& x, int d,
                const StreamConfig& cfg) {
  for (const TrajectoryStep& s : t.steps) {
    const Observation o = render(w, cfg.render);
    const Gripper target = s.event.value_or(w.gripper);
    push_frame(fs, x, o, {s.twist, target}, d);
    if (s.event) w = set_gripper(w, *s.event, cfg.sim);
    w = step(w, s.twist, t.dt, cfg.sim);
  }
  return w;
}

}  // namespace

FrameSet demo_frames(const MemoryBuffer& buf, int d, const Catalog& catalog, const FeatureExtractor& x,
                     const StreamConfig& cfg) {
  const DemoRecord& rec = buf.demo(d);
  const ObjectMeta& meta = buf.train_meta(d);
  if (meta.object_name.empty()) throw Error("demo " + std::to_string(d) + " has no training metadata to re-render");
  const SceneItem& item = catalog.find(meta.object_name);

  FrameSet fs;
  fs.extractor_id = x.id();
  fs.dim = static_cast<int>(x.dim());
  WorldState w;
  if (cfg.include_approach) {
    w = make_world(item, meta.placement, cfg.start, 0);
    w = roll(std::move(w), approach_trajectory(cfg.start, rec.bottleneck_pose, cfg.script, rec.trajectory.dt), fs, x,
             d, cfg);
  } else {
    w = make_world(item, meta.placement, rec.bottleneck_pose, 0);
  }
  if (cfg.include_demo) roll(std::move(w), rec.trajectory, fs, x, d, cfg);
  return fs;
}

BcTrainResult bc_train(const FrameSet& frames, const TrainConfig& cfg) {
  cfg.validate();
  if (frames.size() < 2) throw Error("behaviour cloning needs at least two frames");
  const auto n = static_cast<Eigen::Index>(frames.size());
  Eigen::MatrixXd x(frames.dim, n);
  Eigen::MatrixXd y(kActionDim, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const float* r = frames.row(static_cast<std::size_t>(i));
    for (int k = 0; k < frames.dim; ++k) x(k, i) = r[k];
    y.col(i) = frames.actions[static_cast<std::size_t>(i)];
  }
  std::vector<int> widths{frames.dim};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(kActionDim);
  Rng init(derive_seed(cfg.seed, 0xBC));
  BcTrainResult out;
  out.policy.extractor_id = frames.extractor_id;
  out.policy.net = Mlp(widths, init);
  out.curves = fit(out.policy.net, x, y, Eigen::VectorXd::Ones(kActionDim), cfg);
  return out;
}

PolicyAction bc_act(const BcPolicy& p, const Embedding& live) {
  if (p.net.layers.empty()) throw Error("behaviour cloning policy is untrained");
  if (live.extractor_id != p.extractor_id) throw Error("policy expects '" + p.extractor_id + "' descriptors");
  Eigen::VectorXd in(static_cast<Eigen::Index>(live.dim()));
  for (std::size_t i = 0; i < live.dim(); ++i) in[static_cast<Eigen::Index>(i)] = live.values[i];
  return decode_action(p.net.predict(in));
}

VinnPolicy::VinnPolicy(FrameSet frames, int k, double temperature)
    : frames_(std::move(frames)), k_(k), temperature_(temperature) {
  if (frames_.size() == 0) throw Error("VINN needs a non-empty frame buffer");
  if (k_ < 1) throw Error("VINN k must be at least 1");
  if (!(temperature_ > 0.0)) throw Error("VINN temperature must be positive");
  keys_.resize(frames_.dim, static_cast<Eigen::Index>(frames_.size()));
  for (std::size_t i = 0; i < frames_.size(); ++i) {
    const float* r = frames_.row(i);
    auto col = keys_.col(static_cast<Eigen::Index>(i));
    for (int j = 0; j < frames_.dim; ++j) col[j] = r[j];
    const double n = col.norm();
    if (!(n > 0.0)) throw Error("VINN frame " + std::to_string(i) + " has a zero descriptor");
    col /= n;
  }
}

Eigen::VectorXd VinnPolicy::similarities(const Embedding& live) const {
  if (frames_.size() == 0) throw Error("VINN needs a non-empty frame buffer");
  if (live.extractor_id != frames_.extractor_id || static_cast<int>(live.dim()) != frames_.dim) {
    throw Error("VINN query descriptor does not match the frame buffer");
  }
  Eigen::VectorXd q(frames_.dim);
  for (int j = 0; j < frames_.dim; ++j) q[j] = live.values[static_cast<std::size_t>(j)];
  const double n = q.norm();
  if (!(n > 0.0)) throw Error("VINN query has a zero descriptor");
  return ((keys_.transpose() * (q / n)).array().min(1.0).max(-1.0)).matrix();
}

ActionVector vinn_action(const VinnPolicy& p, const Embedding& live) {
  const Eigen::VectorXd sim = p.similarities(live);
  std::vector<std::size_t> order(static_cast<std::size_t>(sim.size()));
  std::iota(order.begin(), order.end(), 0);
  const std::size_t k = std::min(static_cast<std::size_t>(p.k()), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double sa = sim[static_cast<Eigen::Index>(a)];
                      const double sb = sim[static_cast<Eigen::Index>(b)];
                      return sa != sb ? sa > sb : a < b;
                    });
  // Shift by the best score before exponentiating; the softmax is unchanged.
  const double top = sim[static_cast<Eigen::Index>(order.front())];
  ActionVector acc = ActionVector::Zero();
  double z = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double w = std::exp((sim[static_cast<Eigen::Index>(order[j])] - top) / p.temperature());
    acc += w * p.frames().actions[order[j]];
    z += w;
  }
  return acc / z;
}

PolicyAction vinn_act(const VinnPolicy& p, const Embedding& live) { return decode_action(vinn_action(p, live)); }

ClosedLoopResult run_closed_loop(const WorldState& world, const PolicyFn& policy, Task task, int max_steps,
                                 double dt, const RenderOptions& render_opts, const SimConfig& sim) {
  if (max_steps < 1) throw Error("closed-loop rollout needs max_steps >= 1");
  ClosedLoopResult out{false, 0, world};
  WorldState& w = out.final_world;
  while (out.steps < static_cast<std::size_t>(max_steps)) {
    const PolicyAction a = policy(render(w, render_opts));
    if (a.gripper != w.gripper) w = set_gripper(w, a.gripper, sim);
    w = step(w, a.twist.clamped(TwistLimits{}), dt, sim);
    ++out.steps;
    if (check_success(w, task, sim)) {
      out.success = true;
      break;
    }
  }
  return out;
}

// Configuration

void ExperimentConfig::validate() const {
  if (methods.empty()) throw Error("experiment: methods must not be empty");
  if (std::set<MethodId>(methods.begin(), methods.end()).size() != methods.size()) {
    throw Error("experiment: methods must not repeat");
  }
  if (splits.empty()) throw Error("experiment: splits must not be empty");
  for (const std::string& s : splits) {
    if (s != "train" && s != "intra" && s != "inter") throw Error("experiment: unknown split '" + s + "'");
  }
  if (demos_per_object != 1 && demos_per_object != 10) throw Error("experiment: demos_per_object must be 1 or 10");
  if (trials < 1) throw Error("experiment: trials must be positive");
  if (vinn_k < 1 || !(vinn_temperature > 0.0)) throw Error("experiment: vinn k and temperature must be positive");
  if (max_steps < 1) throw Error("experiment: max_steps must be positive");
  if (workers < 0) throw Error("experiment: workers must be non-negative");
  (void)make_extractor(extractor);
  collection.validate();
  train.validate();
  policy.validate();
  servo.validate();
}

namespace {

// Reads an object field by field and rejects anything left over.
class Fields {
 public:
  Fields(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(where() + "must be an object");
  }

  template <class T>
  void read(const char* key, T& target) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      target = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error(field(key) + ": wrong type");
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const nlohmann::json& at(const char* key) const { return j_.at(key); }
  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw Error(field(k.c_str()) + ": unknown key");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config " : path_ + " "; }
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

nlohmann::json train_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"batch_size", t.batch_size},
          {"epochs", t.epochs},               {"validation_fraction", t.validation_fraction},
          {"w_theta", t.w_theta},             {"hidden", t.hidden}};
}

void read_train(Fields& f, const char* key, TrainConfig& t) {
  if (!f.has(key)) return;
  Fields g(f.at(key), f.field(key));
  g.read("learning_rate", t.learning_rate);
  g.read("batch_size", t.batch_size);
  g.read("epochs", t.epochs);
  g.read("validation_fraction", t.validation_fraction);
  g.read("w_theta", t.w_theta);
  g.read("hidden", t.hidden);
  g.finish();
}

}  // namespace

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json methods = nlohmann::json::array();
  for (MethodId m : c.methods) methods.push_back(to_string(m));
  const CollectionVolume& v = c.collection.volume;
  const ScriptParams& s = c.script;
  return {
      {"catalog", c.catalog.string()},
      {"methods", methods},
      {"splits", c.splits},
      {"demos_per_object", c.demos_per_object},
      {"trials", c.trials},
      {"seed", c.seed},
      {"extractor", c.extractor},
      {"collection",
       {{"samples", c.collection.samples},
        {"dt", c.collection.dt},
        {"anchor_first_sample", c.collection.anchor_first_sample},
        {"volume",
         {{"x", v.x}, {"y", v.y}, {"z_min", v.z_min}, {"z_max", v.z_max}, {"yaw", v.yaw}, {"sample_yaw", v.sample_yaw}}}}},
      {"render", {{"rgb_noise", c.collection.render.rgb_noise}, {"depth_noise", c.collection.render.depth_noise}}},
      {"script",
       {{"approach_speed", s.approach_speed},
        {"fine_speed", s.fine_speed},
        {"fine_distance", s.fine_distance},
        {"lift", s.lift},
        {"angular_speed", s.angular_speed},
        {"pour_tilt_deg", s.pour_tilt_deg},
        {"unscrew_turns", s.unscrew_turns},
        {"unscrew_pitch", s.unscrew_pitch},
        {"unscrew_lift", s.unscrew_lift},
        {"insert_cap_clearance", s.insert_cap_clearance},
        {"bread_depth", s.bread_depth},
        {"retreat", s.retreat}}},
      {"train", train_json(c.train)},
      {"policy", train_json(c.policy)},
      {"servo",
       {{"gamma", c.servo.gamma},
        {"gamma_theta", c.servo.gamma_theta},
        {"max_iters", c.servo.max_iters},
        {"step_scale", c.servo.step_scale},
        {"max_translation", c.servo.max_translation}}},
      {"vinn", {{"k", c.vinn_k}, {"temperature", c.vinn_temperature}}},
      {"max_steps", c.max_steps},
      {"workers", c.workers},
  };
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::string& path) {
  ExperimentConfig c;
  Fields f(j, path);
  std::string catalog;
  f.read("catalog", catalog);
  if (!catalog.empty()) c.catalog = catalog;
  if (f.has("methods")) {
    std::vector<std::string> names;
    f.read("methods", names);
    c.methods.clear();
    for (const std::string& n : names) {
      try {
        c.methods.push_back(method_from_string(n));
      } catch (const Error& e) {
        throw Error(f.field("methods") + ": " + e.what());
      }
    }
  }
  f.read("splits", c.splits);
  f.read("demos_per_object", c.demos_per_object);
  f.read("trials", c.trials);
  f.read("seed", c.seed);
  f.read("extractor", c.extractor);
  if (f.has("collection")) {
    Fields g(f.at("collection"), f.field("collection"));
    g.read("samples", c.collection.samples);
    g.read("dt", c.collection.dt);
    g.read("anchor_first_sample", c.collection.anchor_first_sample);
    if (g.has("volume")) {
      Fields h(g.at("volume"), g.field("volume"));
      CollectionVolume& v = c.collection.volume;
      h.read("x", v.x);
      h.read("y", v.y);
      h.read("z_min", v.z_min);
      h.read("z_max", v.z_max);
      h.read("yaw", v.yaw);
      h.read("sample_yaw", v.sample_yaw);
      h.finish();
    }
    g.finish();
  }
  if (f.has("render")) {
    Fields g(f.at("render"), f.field("render"));
    g.read("rgb_noise", c.collection.render.rgb_noise);
    g.read("depth_noise", c.collection.render.depth_noise);
    g.finish();
  }
  if (f.has("script")) {
    Fields g(f.at("script"), f.field("script"));
    ScriptParams& s = c.script;
    g.read("approach_speed", s.approach_speed);
    g.read("fine_speed", s.fine_speed);
    g.read("fine_distance", s.fine_distance);
    g.read("lift", s.lift);
    g.read("angular_speed", s.angular_speed);
    g.read("pour_tilt_deg", s.pour_tilt_deg);
    g.read("unscrew_turns", s.unscrew_turns);
    g.read("unscrew_pitch", s.unscrew_pitch);
    g.read("unscrew_lift", s.unscrew_lift);
    g.read("insert_cap_clearance", s.insert_cap_clearance);
    g.read("bread_depth", s.bread_depth);
    g.read("retreat", s.retreat);
    g.finish();
  }
  read_train(f, "train", c.train);
  read_train(f, "policy", c.policy);
  if (f.has("servo")) {
    Fields g(f.at("servo"), f.field("servo"));
    g.read("gamma", c.servo.gamma);
    g.read("gamma_theta", c.servo.gamma_theta);
    g.read("max_iters", c.servo.max_iters);
    g.read("step_scale", c.servo.step_scale);
    g.read("max_translation", c.servo.max_translation);
    g.finish();
  }
  if (f.has("vinn")) {
    Fields g(f.at("vinn"), f.field("vinn"));
    g.read("k", c.vinn_k);
    g.read("temperature", c.vinn_temperature);
    g.finish();
  }
  f.read("max_steps", c.max_steps);
  f.read("workers", c.workers);
  f.finish();
  c.validate();
  return c;
}

// Experiments

double ExperimentReport::aggregate(std::string_view method, std::string_view split) const {
  int n = 0;
  int s = 0;
  for (const CellResult& c : cells) {
    if (c.method != method || (!split.empty() && c.split != split)) continue;
    n += c.trials;
    s += c.successes;
  }
  return n > 0 ? static_cast<double>(s) / n : 0.0;
}

std::vector<std::string> ExperimentReport::methods() const {
  std::vector<std::string> out;
  for (const CellResult& c : cells) {
    if (std::find(out.begin(), out.end(), c.method) == out.end()) out.push_back(c.method);
  }
  return out;
}

namespace {

// The source buffer is used as is when it already holds the embeddings;
// otherwise a copy is embedded.
const MemoryBuffer& embedded(const MemoryBuffer& source, const std::vector<const FeatureExtractor*>& xs,
                             std::optional<MemoryBuffer>& scratch) {
  const auto complete = [&](const FeatureExtractor* x) {
    const EmbeddingBlock* b = source.embeddings(x->id());
    return b != nullptr && b->keys.size() == source.observation_count();
  };
  if (std::all_of(xs.begin(), xs.end(), complete)) return source;
  scratch = source;
  for (const FeatureExtractor* x : xs) scratch->ensure_embeddings(*x);
  return *scratch;
}

std::uint64_t name_stream(const std::string& name) { return crc32_of(name); }

PlanarPose4 placement_for(const SceneItem& item, std::uint64_t seed, std::uint64_t tag, int index) {
  Rng rng(derive_seed(derive_seed(derive_seed(seed, tag), name_stream(item.name)), static_cast<std::uint64_t>(index)));
  return sample_test_pose(*item.object, rng);
}

TrainConfig seeded(TrainConfig t, std::uint64_t seed, std::uint64_t tag) {
  t.seed = derive_seed(seed, tag);
  return t;
}

std::vector<const SceneItem*> items_for(const Catalog& catalog, const std::vector<std::string>& splits) {
  std::vector<const SceneItem*> out;
  for (const std::string& s : splits) {
    for (const SceneItem* it : catalog.split(s)) out.push_back(it);
  }
  return out;
}

// Test worlds depend only on (seed, object, trial), never on the method.
WorldState test_world(const SceneItem& item, std::uint64_t seed, int trial) {
  return make_world(item, test_placement(item, seed, trial), deployment_start_pose(),
                    derive_seed(seed, static_cast<std::uint64_t>(trial)));
}

ServoConfig bounded_servo(const ExperimentConfig& cfg) {
  ServoConfig s = cfg.servo;
  const double diag = cfg.collection.volume.diagonal();
  s.max_translation = s.max_translation > 0.0 ? std::min(s.max_translation, diag) : diag;
  return s;
}

FrameSet all_frames(const MemoryBuffer& buf, const Catalog& catalog, const FeatureExtractor& x, const StreamConfig& sc,
                    int workers) {
  std::vector<FrameSet> per(buf.size());
  parallel_for(per.size(), workers,
               [&](std::size_t d) { per[d] = demo_frames(buf, static_cast<int>(d), catalog, x, sc); });
  FrameSet out;
  for (const FrameSet& f : per) out.append(f);
  return out;
}

StreamConfig stream_config(const ExperimentConfig& cfg, bool approach) {
  StreamConfig sc;
  sc.include_approach = approach;
  sc.script = cfg.script;
  sc.render = cfg.collection.render;
  sc.sim = cfg.collection.sim;
  return sc;
}

struct Job {
  std::size_t method;
  const SceneItem* item;
  int trial;
};

std::vector<CellResult> tally(const std::vector<TrialRecord>& trials) {
  std::vector<CellResult> cells;
  for (const TrialRecord& t : trials) {
    if (cells.empty() || cells.back().method != t.method || cells.back().object != t.object) {
      cells.push_back({t.method, t.object, t.split, 0, 0});
    }
    ++cells.back().trials;
    cells.back().successes += t.success ? 1 : 0;
  }
  return cells;
}

}  // namespace

TrainConfig aligner_train_config(const ExperimentConfig& cfg) { return seeded(cfg.train, cfg.seed, 0xA1); }

PlanarPose4 test_placement(const SceneItem& item, std::uint64_t seed, int trial) {
  return placement_for(item, seed, 0x7E57, trial);
}

PlanarPose4 demo_placement(const SceneItem& item, std::uint64_t seed, int j) {
  return placement_for(item, seed, 0xDE30, j);
}

MemoryBuffer collect_buffer(const Catalog& catalog, const ExperimentConfig& cfg) {
  const std::vector<const SceneItem*> train_items = catalog.split("train");
  if (train_items.empty()) throw Error("catalog has no train-split objects");
  const auto per_object = static_cast<std::size_t>(cfg.demos_per_object);
  std::vector<CollectedDemo> demos(train_items.size() * per_object);
  parallel_for(demos.size(), resolve_workers(cfg.workers), [&](std::size_t k) {
    const SceneItem& item = *train_items[k / per_object];
    const int j = static_cast<int>(k % per_object);
    CollectionConfig cc = cfg.collection;
    cc.seed = derive_seed(derive_seed(derive_seed(cfg.seed, 0xC011), name_stream(item.name)), static_cast<std::uint64_t>(j));
    DemoScript script = canonical_script(item);
    script.params = cfg.script;
    demos[k] = collect_demo(item, demo_placement(item, cfg.seed, j), script, cc);
  });
  MemoryBuffer buf;
  for (CollectedDemo& d : demos) buf.add_demo(std::move(d.record), std::move(d.meta));
  return buf;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const Catalog catalog = load_catalog(cfg.catalog);
  const MemoryBuffer buf = collect_buffer(catalog, cfg);
  return run_experiment(cfg, catalog, buf);
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const Catalog& catalog, const MemoryBuffer& source,
                                const AlignerModel* trained_aligner) {
  cfg.validate();
  const int workers = resolve_workers(cfg.workers);
  const auto x = make_extractor(cfg.extractor);
  std::optional<MemoryBuffer> scratch;
  const MemoryBuffer& buf = embedded(source, {x.get()}, scratch);

  const auto uses = [&](MethodId m) { return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end(); };

  // Training, sequential per method.
  AlignerModel aligner;
  if (uses(MethodId::Ours)) {
    aligner = trained_aligner != nullptr ? *trained_aligner : train(buf, aligner_train_config(cfg), cfg.extractor).model;
  }
  FrameSet full;
  if (uses(MethodId::Bc) || uses(MethodId::Vinn)) full = all_frames(buf, catalog, *x, stream_config(cfg, true), workers);
  BcPolicy bc;
  if (uses(MethodId::Bc)) bc = bc_train(full, seeded(cfg.policy, cfg.seed, 0xB1)).policy;
  VinnPolicy vinn;
  if (uses(MethodId::Vinn)) vinn = VinnPolicy(full, cfg.vinn_k, cfg.vinn_temperature);
  BcGuapoPolicy guapo;
  if (uses(MethodId::BcGuapo)) {
    guapo.aligner = train_goal_free(buf, seeded(cfg.train, cfg.seed, 0xA2), cfg.extractor).model;
    guapo.interaction =
        bc_train(all_frames(buf, catalog, *x, stream_config(cfg, false), workers), seeded(cfg.policy, cfg.seed, 0xB2))
            .policy;
  }

  const std::vector<const SceneItem*> items = items_for(catalog, cfg.splits);
  std::vector<Job> jobs;
  for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
    for (const SceneItem* it : items) {
      for (int t = 0; t < cfg.trials; ++t) jobs.push_back({m, it, t});
    }
  }

  const ServoConfig servo_cfg = bounded_servo(cfg);
  const RenderOptions& ro = cfg.collection.render;
  const SimConfig& sim = cfg.collection.sim;
  const double dt = cfg.collection.dt;
  const GoalAlignFn ours_align = model_aligner(aligner);
  std::vector<TrialRecord> records(jobs.size());
  std::vector<std::string> traces(cfg.record_traces ? jobs.size() : 0);
  parallel_for(jobs.size(), workers, [&](std::size_t k) {
    const Job& job = jobs[k];
    const SceneItem& item = *job.item;
    const MethodId m = cfg.methods[job.method];
    TrialRecord& r = records[k];
    r.method = std::string(to_string(m));
    r.object = item.name;
    r.split = item.split;
    r.trial = job.trial;
    r.placement = test_placement(item, cfg.seed, job.trial);
    const WorldState world = test_world(item, cfg.seed, job.trial);
    const auto closed_loop = [&](const WorldState& from, const auto& act) {
      return run_closed_loop(
          from, [&](const Observation& o) { return act(x->extract(o)); }, item.task, cfg.max_steps, dt, ro, sim);
    };

    switch (m) {
      case MethodId::Ours: {
        const EpisodeResult e = run_episode(world, buf, ours_align, *x, {servo_cfg, ro, sim, false});
        if (cfg.record_traces) traces[k] = episode_json(e, cfg.dump_obs, false);
        r.retrieved_demo = e.retrieval.demo_id;
        r.steps = e.steps_total;
        r.success = e.success && e.task_inferred == item.task;
        if (e.failure == "servo") {
          r.failure = "servo";
        } else if (e.task_inferred != item.task) {
          r.failure = "retrieval";
        } else if (!r.success) {
          r.failure = "task";
        }
        break;
      }
      case MethodId::Bc:
      case MethodId::Vinn: {
        const ClosedLoopResult c = m == MethodId::Bc
                                       ? closed_loop(world, [&](const Embedding& e) { return bc_act(bc, e); })
                                       : closed_loop(world, [&](const Embedding& e) { return vinn_act(vinn, e); });
        r.steps = c.steps;
        r.success = c.success;
        if (!c.success) r.failure = "steps";
        break;
      }
      case MethodId::BcGuapo: {
        const auto gx = make_extractor(guapo.aligner.extractor_id);
        const ServoOutcome s = servo(
            world, [&](const WorldState&, const Observation& o) { return predict(guapo.aligner, *gx, o, nullptr); },
            servo_cfg, ro, sim);
        r.steps = static_cast<std::size_t>(s.trace.iterations);
        if (!s.trace.converged) {
          r.failure = "servo";
          break;
        }
        const ClosedLoopResult c =
            closed_loop(s.world, [&](const Embedding& e) { return bc_act(guapo.interaction, e); });
        r.steps += c.steps;
        r.success = c.success;
        if (!c.success) r.failure = "steps";
        break;
      }
    }
  });

  ExperimentReport rep;
  rep.config = to_json(cfg);
  rep.seed = cfg.seed;
  rep.trials = std::move(records);
  rep.cells = tally(rep.trials);
  for (std::string& t : traces) {
    if (!t.empty()) rep.traces.push_back(std::move(t));
  }
  return rep;
}

ExperimentReport run_interaction_study(const ExperimentConfig& cfg, const Catalog& catalog, const MemoryBuffer& source,
                                       const AlignerModel* aligner) {
  cfg.validate();
  const int workers = resolve_workers(cfg.workers);
  const auto x = make_extractor(cfg.extractor);
  const MemoryBuffer& buf = source;
  const BcPolicy policy =
      bc_train(all_frames(buf, catalog, *x, stream_config(cfg, false), workers), seeded(cfg.policy, cfg.seed, 0xB3))
          .policy;

  std::vector<const SceneItem*> items;
  std::vector<int> demo_of;
  for (const SceneItem* it : catalog.split("train")) {
    for (int d = 0; d < static_cast<int>(buf.size()); ++d) {
      if (buf.train_meta(d).object_name == it->name) {
        items.push_back(it);
        demo_of.push_back(d);
        break;
      }
    }
  }
  if (items.empty()) throw Error("interaction study needs demos of train-split objects");

  const ServoConfig servo_cfg = bounded_servo(cfg);
  const RenderOptions& ro = cfg.collection.render;
  const SimConfig& sim = cfg.collection.sim;
  const auto ax = aligner != nullptr ? make_extractor(aligner->extractor_id) : nullptr;
  const std::size_t per = static_cast<std::size_t>(cfg.trials);
  std::vector<TrialRecord> replay_rows(items.size() * per);
  std::vector<TrialRecord> bc_rows(items.size() * per);
  parallel_for(replay_rows.size(), workers, [&](std::size_t k) {
    const SceneItem& item = *items[k / per];
    const DemoRecord& demo = buf.demo(demo_of[k / per]);
    const int trial = static_cast<int>(k % per);
    const WorldState world = test_world(item, cfg.seed, trial);
    const Pose b = bottleneck_world(item, test_placement(item, cfg.seed, trial));

    // Both arms start from the same aligned state; without a model the
    // alignment is the analytic oracle.
    const ServoOutcome s =
        aligner == nullptr
            ? servo(world, oracle_aligner(b), servo_cfg, ro, sim)
            : servo(world,
                    [&](const WorldState&, const Observation& o) {
                      return predict(*aligner, *ax, o, &demo.bottleneck_obs);
                    },
                    servo_cfg, ro, sim);

    TrialRecord base;
    base.object = item.name;
    base.split = item.split;
    base.trial = trial;
    base.placement = test_placement(item, cfg.seed, trial);
    base.retrieved_demo = demo_of[k / per];

    TrialRecord& rr = replay_rows[k];
    rr = base;
    rr.method = "replay";
    const WorldState done = replay(s.world, demo.trajectory, sim);
    rr.steps = done.progress.steps;
    rr.success = check_success(done, item.task, sim);
    if (!rr.success) rr.failure = "task";

    TrialRecord& br = bc_rows[k];
    br = base;
    br.method = "bc_interaction";
    const ClosedLoopResult c = run_closed_loop(
        s.world, [&](const Observation& o) { return bc_act(policy, x->extract(o)); }, item.task, cfg.max_steps,
        cfg.collection.dt, ro, sim);
    br.steps = c.steps;
    br.success = c.success;
    if (!c.success) br.failure = "steps";
  });

  ExperimentReport rep;
  rep.config = to_json(cfg);
  rep.config["study"] = aligner == nullptr ? "interaction/oracle_alignment" : "interaction/trained_alignment";
  rep.seed = cfg.seed;
  rep.trials = std::move(replay_rows);
  rep.trials.insert(rep.trials.end(), bc_rows.begin(), bc_rows.end());
  rep.cells = tally(rep.trials);
  return rep;
}

std::vector<Observation> retrieval_queries(const std::vector<const SceneItem*>& tests, int views, std::uint64_t seed,
                                           int workers) {
  if (views < 1) throw Error("retrieval accuracy needs at least one view per object");
  const auto per = static_cast<std::size_t>(views);
  std::vector<Observation> queries(tests.size() * per);
  parallel_for(queries.size(), workers, [&](std::size_t k) {
    queries[k] = render(test_world(*tests[k / per], seed, static_cast<int>(k % per)));
  });
  return queries;
}

std::vector<RetrievalAccuracy> retrieval_accuracy(const MemoryBuffer& source, const std::vector<const SceneItem*>& tests,
                                                  const std::vector<const FeatureExtractor*>& extractors, int views,
                                                  std::uint64_t seed, int workers) {
  std::optional<MemoryBuffer> scratch;
  const MemoryBuffer& buf = embedded(source, extractors, scratch);
  const std::vector<Observation> queries = retrieval_queries(tests, views, seed, workers);
  std::vector<RetrievalAccuracy> out;
  for (const FeatureExtractor* x : extractors) {
    std::vector<Embedding> q(queries.size());
    parallel_for(queries.size(), workers, [&](std::size_t k) { q[k] = x->extract(queries[k]); });
    out.push_back(retrieval_accuracy(buf, tests, q, views));
  }
  return out;
}

RetrievalAccuracy retrieval_accuracy(const MemoryBuffer& buf, const std::vector<const SceneItem*>& tests,
                                     const std::vector<Embedding>& queries, int views) {
  if (views < 1) throw Error("retrieval accuracy needs at least one view per object");
  const auto per = static_cast<std::size_t>(views);
  if (queries.size() != tests.size() * per) throw Error("expected one query embedding per (object, view)");
  if (queries.empty()) throw Error("retrieval accuracy needs at least one test object");
  RetrievalAccuracy acc{queries.front().extractor_id, static_cast<int>(queries.size()), 0};
  for (std::size_t k = 0; k < queries.size(); ++k) {
    const RetrievalResult r = buf.query(queries[k]);
    if (buf.train_meta(r.demo_id).class_id == tests[k / per]->class_id) ++acc.correct;
  }
  return acc;
}

// Reports

namespace {

std::string fmt(const char* f, double v) {
  char b[64];
  std::snprintf(b, sizeof b, f, v);
  return b;
}

struct SplitTotals {
  std::string method;
  std::string split;
  int trials = 0;
  int successes = 0;
};

std::vector<SplitTotals> split_totals(const ExperimentReport& r) {
  std::vector<SplitTotals> out;
  for (const std::string& m : r.methods()) {
    std::vector<std::string> splits;
    for (const CellResult& c : r.cells) {
      if (c.method == m && std::find(splits.begin(), splits.end(), c.split) == splits.end()) splits.push_back(c.split);
    }
    splits.push_back("all");
    for (const std::string& s : splits) {
      SplitTotals t{m, s};
      for (const CellResult& c : r.cells) {
        if (c.method != m || (s != "all" && c.split != s)) continue;
        t.trials += c.trials;
        t.successes += c.successes;
      }
      out.push_back(t);
    }
  }
  return out;
}

void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cannot write " + p.string());
  f << bytes;
  if (!f) throw Error("failed writing " + p.string());
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string summary_csv(const ExperimentReport& r) {
  std::string s = "method,split,object,trials,successes,success_rate\n";
  for (const CellResult& c : r.cells) {
    s += c.method + "," + c.split + "," + c.object + "," + std::to_string(c.trials) + "," +
         std::to_string(c.successes) + "," + fmt("%.4f", c.trials > 0 ? double(c.successes) / c.trials : 0.0) + "\n";
  }
  for (const SplitTotals& t : split_totals(r)) {
    s += t.method + "," + t.split + ",*," + std::to_string(t.trials) + "," + std::to_string(t.successes) + "," +
         fmt("%.4f", t.trials > 0 ? double(t.successes) / t.trials : 0.0) + "\n";
  }
  return s;
}

std::string episodes_csv(const ExperimentReport& r) {
  std::string s = "method,split,object,trial,x,y,z,theta,success,failure,retrieved_demo,steps\n";
  for (const TrialRecord& t : r.trials) {
    s += t.method + "," + t.split + "," + t.object + "," + std::to_string(t.trial) + "," + fmt("%.6f", t.placement.x()) +
         "," + fmt("%.6f", t.placement.y()) + "," + fmt("%.6f", t.placement.z()) + "," +
         fmt("%.6f", t.placement.theta_z()) + "," + (t.success ? "1" : "0") + "," + t.failure + "," +
         std::to_string(t.retrieved_demo) + "," + std::to_string(t.steps) + "\n";
  }
  return s;
}

nlohmann::json report_json(const ExperimentReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const CellResult& c : r.cells) {
    cells.push_back({{"method", c.method}, {"split", c.split}, {"object", c.object}, {"trials", c.trials},
                     {"successes", c.successes}});
  }
  nlohmann::json trials = nlohmann::json::array();
  for (const TrialRecord& t : r.trials) {
    trials.push_back({{"method", t.method},
                      {"split", t.split},
                      {"object", t.object},
                      {"trial", t.trial},
                      {"placement", {t.placement.x(), t.placement.y(), t.placement.z(), t.placement.theta_z()}},
                      {"success", t.success},
                      {"failure", t.failure},
                      {"retrieved_demo", t.retrieved_demo},
                      {"steps", t.steps}});
  }
  nlohmann::json aggregates = nlohmann::json::array();
  for (const SplitTotals& t : split_totals(r)) {
    aggregates.push_back({{"method", t.method}, {"split", t.split}, {"trials", t.trials}, {"successes", t.successes}});
  }
  return {{"seed", r.seed}, {"config", r.config}, {"cells", cells}, {"aggregates", aggregates}, {"trials", trials}};
}

ExperimentReport report_from_json(const nlohmann::json& j) {
  try {
    ExperimentReport r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config = j.at("config");
    for (const auto& c : j.at("cells")) {
      r.cells.push_back({c.at("method"), c.at("object"), c.at("split"), c.at("trials"), c.at("successes")});
    }
    for (const auto& t : j.at("trials")) {
      TrialRecord tr;
      tr.method = t.at("method");
      tr.split = t.at("split");
      tr.object = t.at("object");
      tr.trial = t.at("trial");
      const auto& p = t.at("placement");
      tr.placement = PlanarPose4(p.at(0), p.at(1), p.at(2), p.at(3));
      tr.success = t.at("success");
      tr.failure = t.at("failure");
      tr.retrieved_demo = t.at("retrieved_demo");
      tr.steps = t.at("steps");
      r.trials.push_back(std::move(tr));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed report: ") + e.what());
  }
}

std::string bars_svg(const ExperimentReport& r, std::string_view split) {
  const std::vector<std::string> methods = r.methods();
  std::vector<std::string> objects;
  for (const CellResult& c : r.cells) {
    if (c.split == split && std::find(objects.begin(), objects.end(), c.object) == objects.end()) {
      objects.push_back(c.object);
    }
  }
  static const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};
  const int bar = 14;
  const int gap = 18;
  const int group = static_cast<int>(methods.size()) * bar + gap;
  const int left = 50;
  const int top = 30;
  const int plot_h = 200;
  const int width = left + std::max(1, static_cast<int>(objects.size())) * group + 20 + 120;
  const int height = top + plot_h + 110;

  std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
       std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<text x=\"" + std::to_string(left) + "\" y=\"18\" font-size=\"13\">success rate: " + xml_escape(split) +
       "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const int y = top + plot_h - t * plot_h / 4;
    s += "<line x1=\"" + std::to_string(left) + "\" y1=\"" + std::to_string(y) + "\" x2=\"" +
         std::to_string(width - 130) + "\" y2=\"" + std::to_string(y) + "\" stroke=\"#dddddd\"/>\n";
    s += "<text x=\"" + std::to_string(left - 6) + "\" y=\"" + std::to_string(y + 4) + "\" text-anchor=\"end\">" +
         fmt("%.2f", t / 4.0) + "</text>\n";
  }
  for (std::size_t o = 0; o < objects.size(); ++o) {
    const int gx = left + static_cast<int>(o) * group + gap / 2;
    for (std::size_t m = 0; m < methods.size(); ++m) {
      double rate = 0.0;
      for (const CellResult& c : r.cells) {
        if (c.method == methods[m] && c.object == objects[o] && c.split == split && c.trials > 0) {
          rate = double(c.successes) / c.trials;
        }
      }
      const int h = static_cast<int>(std::lround(rate * plot_h));
      s += "<rect x=\"" + std::to_string(gx + static_cast<int>(m) * bar) + "\" y=\"" +
           std::to_string(top + plot_h - h) + "\" width=\"" + std::to_string(bar - 2) + "\" height=\"" +
           std::to_string(h) + "\" fill=\"" + kPalette[m % 6] + "\"><title>" + xml_escape(methods[m]) + " " +
           xml_escape(objects[o]) + " " + fmt("%.2f", rate) + "</title></rect>\n";
    }
    const int lx = gx + static_cast<int>(methods.size()) * bar / 2;
    s += "<text x=\"" + std::to_string(lx) + "\" y=\"" + std::to_string(top + plot_h + 12) +
         "\" text-anchor=\"end\" transform=\"rotate(-45 " + std::to_string(lx) + " " +
         std::to_string(top + plot_h + 12) + ")\">" + xml_escape(objects[o]) + "</text>\n";
  }
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const int y = top + 10 + static_cast<int>(m) * 16;
    s += "<rect x=\"" + std::to_string(width - 120) + "\" y=\"" + std::to_string(y - 9) +
         "\" width=\"10\" height=\"10\" fill=\"" + kPalette[m % 6] + "\"/>\n";
    s += "<text x=\"" + std::to_string(width - 105) + "\" y=\"" + std::to_string(y) + "\">" + xml_escape(methods[m]) +
         " " + fmt("%.2f", r.aggregate(methods[m], split)) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

std::vector<std::filesystem::path> emit_report(const ExperimentReport& r, const std::filesystem::path& dir,
                                               const std::vector<ReportFormat>& formats) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  const auto put = [&](const std::string& name, const std::string& bytes) {
    write_file(dir / name, bytes);
    written.push_back(dir / name);
  };
  for (ReportFormat f : formats) {
    switch (f) {
      case ReportFormat::Csv:
        put("summary.csv", summary_csv(r));
        put("episodes.csv", episodes_csv(r));
        break;
      case ReportFormat::Json: put("report.json", report_json(r).dump(2) + "\n"); break;
      case ReportFormat::Svg: {
        std::vector<std::string> splits;
        for (const CellResult& c : r.cells) {
          if (std::find(splits.begin(), splits.end(), c.split) == splits.end()) splits.push_back(c.split);
        }
        for (const std::string& s : splits) put("bars_" + s + ".svg", bars_svg(r, s));
        break;
      }
    }
  }
  return written;
}

}  // namespace rar
