#include "rar/buffer.hpp"

#include "rar/binio.hpp"

#include <algorithm>
#include <charconv>

namespace rar {

namespace {

constexpr std::string_view kMagic = "RARBUF1";
constexpr std::uint32_t kVersion = 1;
constexpr std::string_view kObsMagic = "RAROBS1";

void put_observation(ByteWriter& w, const Observation& o) {
  o.check();
  w.put_raw(o.rgb.data(), o.rgb.size());
  w.put_raw(o.depth.data(), o.depth.size() * sizeof(float));
  w.put_pose(o.camera_pose);
}

Observation get_observation(ByteReader& r) {
  Observation o;
  o.rgb.resize(Observation::kPixels * 3);
  o.depth.resize(Observation::kPixels);
  r.get_raw(o.rgb.data(), o.rgb.size());
  r.get_raw(o.depth.data(), o.depth.size() * sizeof(float));
  o.camera_pose = r.get_pose();
  return o;
}

void put_twist(ByteWriter& w, const Twist& t) {
  for (int k = 0; k < 3; ++k) w.put<double>(t.linear[k]);
  for (int k = 0; k < 3; ++k) w.put<double>(t.angular[k]);
}

Twist get_twist(ByteReader& r) {
  Twist t;
  for (int k = 0; k < 3; ++k) t.linear[k] = r.get<double>();
  for (int k = 0; k < 3; ++k) t.angular[k] = r.get<double>();
  return t;
}

// 0 = no event, 1 = open, 2 = close.
std::uint8_t encode_event(const std::optional<Gripper>& e) {
  if (!e) return 0;
  return *e == Gripper::Open ? 1 : 2;
}

std::optional<Gripper> decode_event(std::uint8_t v) {
  switch (v) {
    case 0: return std::nullopt;
    case 1: return Gripper::Open;
    case 2: return Gripper::Closed;
    default: throw FormatError("bad gripper event code " + std::to_string(v));
  }
}

bool same_pose(const Pose& a, const Pose& b) {
  return a.position == b.position && a.orientation.coeffs() == b.orientation.coeffs() && a.frame == b.frame &&
         a.child == b.child;
}

}  // namespace

int MemoryBuffer::add_demo(DemoRecord rec, ObjectMeta meta) {
  const int next = static_cast<int>(demos_.size());
  if (rec.demo_id >= 0 && rec.demo_id < next) throw Error("duplicate demo id " + std::to_string(rec.demo_id));
  if (rec.demo_id >= 0 && rec.demo_id != next) {
    throw Error("demo id " + std::to_string(rec.demo_id) + " is not the next id " + std::to_string(next));
  }
  if (rec.trajectory.steps.empty()) throw Error("demo has an empty trajectory");
  if (!(rec.trajectory.dt > 0.0)) throw Error("demo trajectory dt must be positive");
  for (const TrajectoryStep& s : rec.trajectory.steps) {
    if (s.twist.frame != Frame::EndEffector) throw FrameError("demo twists must be in the end-effector frame");
    if (!s.twist.finite()) throw Error("demo trajectory has a non-finite twist");
  }
  if (rec.samples.empty()) throw Error("demo needs at least one alignment sample");
  rec.bottleneck_obs.check();
  for (const AlignmentSample& s : rec.samples) s.observation.check();
  rec.demo_id = next;
  demos_.push_back(std::move(rec));
  meta_.push_back(std::move(meta));
  return next;
}

std::size_t MemoryBuffer::observation_count() const {
  std::size_t n = 0;
  for (const DemoRecord& d : demos_) n += d.samples.size() + 1;
  return n;
}

const Observation& MemoryBuffer::observation(const ObsKey& k) const {
  const DemoRecord& d = demo(k.demo);
  if (k.index < 0) return d.bottleneck_obs;
  return d.samples.at(static_cast<std::size_t>(k.index)).observation;
}

void MemoryBuffer::ensure_embeddings(const FeatureExtractor& x) {
  auto it = std::find_if(blocks_.begin(), blocks_.end(), [&](const EmbeddingBlock& b) { return b.extractor_id == x.id(); });
  if (it == blocks_.end()) {
    blocks_.push_back({x.id(), static_cast<std::uint32_t>(x.dim()), {}, {}});
    it = blocks_.end() - 1;
  }
  EmbeddingBlock& b = *it;
  const int first = b.keys.empty() ? 0 : b.keys.back().demo + 1;
  for (int d = first; d < static_cast<int>(demos_.size()); ++d) {
    for (int i = -1; i < static_cast<int>(demos_[d].samples.size()); ++i) {
      const Embedding e = x.extract(observation({d, i}));
      b.keys.push_back({d, i});
      b.values.insert(b.values.end(), e.values.begin(), e.values.end());
    }
  }
}

void MemoryBuffer::set_embeddings(EmbeddingBlock block) {
  if (block.values.size() != block.keys.size() * block.dim) throw Error("embedding block size mismatch");
  std::vector<std::size_t> order(block.keys.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return block.keys[a] < block.keys[b]; });
  EmbeddingBlock sorted{block.extractor_id, block.dim, {}, {}};
  for (std::size_t i : order) {
    sorted.keys.push_back(block.keys[i]);
    sorted.values.insert(sorted.values.end(), block.row(i), block.row(i) + block.dim);
  }
  std::size_t expect = 0;
  for (int d = 0; d < static_cast<int>(demos_.size()); ++d) {
    for (int i = -1; i < static_cast<int>(demos_[d].samples.size()); ++i, ++expect) {
      if (expect >= sorted.keys.size() || sorted.keys[expect] != ObsKey{d, i}) {
        throw Error("embeddings for '" + block.extractor_id + "' do not cover observation (" + std::to_string(d) + ", " +
                    std::to_string(i) + ") exactly once");
      }
    }
  }
  if (expect != sorted.keys.size()) throw Error("embeddings for '" + block.extractor_id + "' have extra keys");
  std::erase_if(blocks_, [&](const EmbeddingBlock& b) { return b.extractor_id == sorted.extractor_id; });
  blocks_.push_back(std::move(sorted));
}

const EmbeddingBlock* MemoryBuffer::embeddings(const std::string& extractor_id) const {
  for (const EmbeddingBlock& b : blocks_) {
    if (b.extractor_id == extractor_id) return &b;
  }
  return nullptr;
}

std::vector<std::string> MemoryBuffer::extractor_ids() const {
  std::vector<std::string> out;
  for (const EmbeddingBlock& b : blocks_) out.push_back(b.extractor_id);
  return out;
}

const EmbeddingBlock& MemoryBuffer::complete_block(const std::string& extractor_id) const {
  if (demos_.empty()) throw Error("query on an empty memory buffer");
  const EmbeddingBlock* b = embeddings(extractor_id);
  if (b == nullptr || b->keys.size() != observation_count()) {
    throw Error("memory buffer has no complete embeddings for extractor '" + extractor_id + "'");
  }
  return *b;
}

RetrievalResult MemoryBuffer::result_for(const ObsKey& key, double score) const {
  const DemoRecord& d = demo(key.demo);
  return {key.demo, key, score, d.task, d.bottleneck_obs, d.trajectory};
}

RetrievalResult MemoryBuffer::query(const Embedding& live) const {
  const EmbeddingBlock& b = complete_block(live.extractor_id);
  if (live.dim() != b.dim) throw Error("query embedding dimension does not match the buffer");
  std::size_t best = 0;
  double best_score = -2.0;
  for (std::size_t i = 0; i < b.keys.size(); ++i) {
    const double s = cosine(live.values.data(), b.row(i), b.dim);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return result_for(b.keys[best], best_score);
}

RetrievalResult MemoryBuffer::query(const Observation& live, const FeatureExtractor& x) const {
  return query(x.extract(live));
}

std::vector<std::pair<ObsKey, double>> MemoryBuffer::top_k(const Embedding& live, std::size_t k) const {
  const EmbeddingBlock& b = complete_block(live.extractor_id);
  if (live.dim() != b.dim) throw Error("query embedding dimension does not match the buffer");
  std::vector<std::pair<ObsKey, double>> all;
  all.reserve(b.keys.size());
  for (std::size_t i = 0; i < b.keys.size(); ++i) all.emplace_back(b.keys[i], cosine(live.values.data(), b.row(i), b.dim));
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), [](const auto& a, const auto& c) {
    return a.second != c.second ? a.second > c.second : a.first < c.first;
  });
  all.resize(k);
  return all;
}

void MemoryBuffer::save(const std::filesystem::path& path) const {
  ByteWriter w;
  w.put_raw(kMagic.data(), kMagic.size());
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint64_t>(demos_.size());
  for (const DemoRecord& d : demos_) {
    w.put<std::int32_t>(d.demo_id);
    w.put_string(to_string(d.task));
    w.put<double>(d.trajectory.dt);
    w.put<std::uint64_t>(d.trajectory.steps.size());
    for (const TrajectoryStep& s : d.trajectory.steps) {
      put_twist(w, s.twist);
      w.put<std::uint8_t>(encode_event(s.event));
    }
    w.put_pose(d.bottleneck_pose);
    put_observation(w, d.bottleneck_obs);
    w.put<std::uint64_t>(d.samples.size());
    for (const AlignmentSample& s : d.samples) {
      w.put_pose(s.pose);
      w.put<double>(s.label.dx);
      w.put<double>(s.label.dy);
      w.put<double>(s.label.dz);
      w.put<double>(s.label.dtheta_z);
      put_observation(w, s.observation);
    }
  }
  // Train-only section.
  for (const ObjectMeta& m : meta_) {
    w.put_string(m.object_name);
    w.put_string(m.class_id);
    w.put<double>(m.placement.x());
    w.put<double>(m.placement.y());
    w.put<double>(m.placement.z());
    w.put<double>(m.placement.theta_z());
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(blocks_.size()));
  for (const EmbeddingBlock& b : blocks_) {
    w.put_string(b.extractor_id);
    w.put<std::uint32_t>(b.dim);
    w.put<std::uint64_t>(b.keys.size());
    for (const ObsKey& k : b.keys) {
      w.put<std::int32_t>(k.demo);
      w.put<std::int32_t>(k.index);
    }
    w.put_raw(b.values.data(), b.values.size() * sizeof(float));
  }
  w.write_with_crc(path);
}

MemoryBuffer MemoryBuffer::load(const std::filesystem::path& path) {
  ByteReader r = ByteReader::open_checked(path, kMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw FormatError("unsupported buffer version " + std::to_string(version));
  MemoryBuffer buf;
  const auto n = r.get<std::uint64_t>();
  for (std::uint64_t k = 0; k < n; ++k) {
    DemoRecord d;
    d.demo_id = r.get<std::int32_t>();
    d.task = task_from_string(r.get_string());
    d.trajectory.dt = r.get<double>();
    const auto steps = r.get<std::uint64_t>();
    if (steps > r.remaining()) throw FormatError("implausible trajectory length");
    d.trajectory.steps.resize(steps);
    for (TrajectoryStep& s : d.trajectory.steps) {
      s.twist = get_twist(r);
      s.event = decode_event(r.get<std::uint8_t>());
    }
    d.bottleneck_pose = r.get_pose();
    d.bottleneck_obs = get_observation(r);
    const auto samples = r.get<std::uint64_t>();
    if (samples > r.remaining()) throw FormatError("implausible sample count");
    d.samples.resize(samples);
    for (AlignmentSample& s : d.samples) {
      s.pose = r.get_pose();
      const double dx = r.get<double>();
      const double dy = r.get<double>();
      const double dz = r.get<double>();
      const double dt = r.get<double>();
      s.label = Displacement4(dx, dy, dz, dt);
      s.observation = get_observation(r);
    }
    buf.demos_.push_back(std::move(d));
  }
  for (std::uint64_t k = 0; k < n; ++k) {
    ObjectMeta m;
    m.object_name = r.get_string();
    m.class_id = r.get_string();
    const double x = r.get<double>();
    const double y = r.get<double>();
    const double z = r.get<double>();
    const double t = r.get<double>();
    m.placement = PlanarPose4(x, y, z, t);
    buf.meta_.push_back(std::move(m));
  }
  const auto blocks = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < blocks; ++k) {
    EmbeddingBlock b;
    b.extractor_id = r.get_string();
    b.dim = r.get<std::uint32_t>();
    const auto count = r.get<std::uint64_t>();
    if (count * (8 + std::uint64_t{b.dim} * 4) > r.remaining()) throw FormatError("implausible embedding block size");
    b.keys.resize(count);
    for (ObsKey& key : b.keys) {
      key.demo = r.get<std::int32_t>();
      key.index = r.get<std::int32_t>();
    }
    b.values.resize(count * b.dim);
    r.get_raw(b.values.data(), b.values.size() * sizeof(float));
    buf.blocks_.push_back(std::move(b));
  }
  if (!r.at_end()) throw FormatError("trailing bytes in buffer file");
  return buf;
}

bool MemoryBuffer::operator==(const MemoryBuffer& o) const {
  if (demos_.size() != o.demos_.size() || meta_ != o.meta_ || blocks_ != o.blocks_) return false;
  for (std::size_t k = 0; k < demos_.size(); ++k) {
    const DemoRecord& a = demos_[k];
    const DemoRecord& b = o.demos_[k];
    if (a.demo_id != b.demo_id || a.task != b.task || !(a.trajectory == b.trajectory)) return false;
    if (!(a.bottleneck_obs == b.bottleneck_obs) || !same_pose(a.bottleneck_pose, b.bottleneck_pose)) return false;
    if (a.samples.size() != b.samples.size()) return false;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
      const AlignmentSample& s = a.samples[i];
      const AlignmentSample& t = b.samples[i];
      if (!(s.label == t.label) || !same_pose(s.pose, t.pose) || !(s.observation == t.observation)) return false;
    }
  }
  return true;
}

std::string to_string(const ObsKey& k) { return std::to_string(k.demo) + ":" + std::to_string(k.index); }

ObsKey obs_key_from_string(std::string_view s) {
  const auto colon = s.find(':');
  const auto bad = [&] { return Error("bad observation key '" + std::string(s) + "', expected DEMO:INDEX"); };
  if (colon == std::string_view::npos) throw bad();
  ObsKey k;
  const auto parse = [&](std::string_view part, int& out) {
    const auto [end, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
    if (ec != std::errc() || end != part.data() + part.size() || part.empty()) throw bad();
  };
  parse(s.substr(0, colon), k.demo);
  parse(s.substr(colon + 1), k.index);
  return k;
}

EmbeddingBlock embedding_block(const EmbeddingTable& table) {
  if (table.empty()) throw Error("embedding table is empty");
  std::vector<std::pair<ObsKey, const Embedding*>> rows;
  for (const auto& [name, e] : table) rows.emplace_back(obs_key_from_string(name), &e);
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  EmbeddingBlock b;
  b.extractor_id = rows.front().second->extractor_id;
  b.dim = static_cast<std::uint32_t>(rows.front().second->dim());
  for (const auto& [key, e] : rows) {
    if (e->extractor_id != b.extractor_id || e->dim() != b.dim) {
      throw Error("embedding table mixes extractors or dimensions at key " + to_string(key));
    }
    b.keys.push_back(key);
    b.values.insert(b.values.end(), e->values.begin(), e->values.end());
  }
  return b;
}

void save_observation(const Observation& o, const std::filesystem::path& path) {
  ByteWriter w;
  w.put_raw(kObsMagic.data(), kObsMagic.size());
  put_observation(w, o);
  w.write_with_crc(path);
}

Observation load_observation(const std::filesystem::path& path) {
  ByteReader r = ByteReader::open_checked(path, kObsMagic);
  Observation o = get_observation(r);
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after observation");
  return o;
}

}  // namespace rar
