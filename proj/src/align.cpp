#include "rar/align.hpp"

#include "rar/binio.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace rar {

namespace {

Eigen::MatrixXd relu(const Eigen::MatrixXd& z) { return z.cwiseMax(0.0); }

Eigen::MatrixXd gather(const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx, std::size_t begin,
                       std::size_t end) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(end - begin));
  for (std::size_t k = begin; k < end; ++k) out.col(static_cast<Eigen::Index>(k - begin)) = m.col(static_cast<Eigen::Index>(idx[k]));
  return out;
}

// Mean over columns of the weighted squared error, averaged over outputs.
double weighted_mse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& y, const Eigen::VectorXd& w) {
  if (y.cols() == 0) return 0.0;
  const Eigen::MatrixXd e = pred - y;
  return (e.array().square().colwise() * w.array()).sum() / (static_cast<double>(y.cols()) * w.size());
}

float to_f32(double v) { return static_cast<float>(v); }

}  // namespace

Mlp::Mlp(const std::vector<int>& widths, Rng& rng) {
  if (widths.size() < 2) throw Error("an MLP needs at least an input and an output width");
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l];
    const int out = widths[l + 1];
    if (in < 1 || out < 1) throw Error("MLP widths must be positive");
    const bool head = l + 2 == widths.size();
    const double sd = std::sqrt((head ? 1.0 : 2.0) / in);
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    for (Eigen::Index j = 0; j < layer.W.cols(); ++j) {
      for (Eigen::Index i = 0; i < layer.W.rows(); ++i) layer.W(i, j) = sd * rng.normal();
    }
    layers.push_back(std::move(layer));
  }
  in_mean = Eigen::VectorXd::Zero(widths.front());
  in_scale = Eigen::VectorXd::Ones(widths.front());
  out_mean = Eigen::VectorXd::Zero(widths.back());
  out_scale = Eigen::VectorXd::Ones(widths.back());
}

Eigen::MatrixXd Mlp::normalize_inputs(const Eigen::MatrixXd& x) const {
  return (x.colwise() - in_mean).array().colwise() * in_scale.array();
}

Eigen::MatrixXd Mlp::normalize_targets(const Eigen::MatrixXd& y) const {
  // Constant outputs have scale 0; their normalised target is 0.
  const Eigen::ArrayXd div = (out_scale.array() > 0.0).select(out_scale.array(), 1.0);
  return (y.colwise() - out_mean).array().colwise() / div;
}

Eigen::MatrixXd Mlp::predict(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd a = normalize_inputs(x);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::MatrixXd z = (layers[l].W * a).colwise() + layers[l].b;
    a = l + 1 < layers.size() ? relu(z) : std::move(z);
  }
  return (a.array().colwise() * out_scale.array()).matrix().colwise() + out_mean;
}

double Mlp::loss(const Eigen::MatrixXd& xn, const Eigen::MatrixXd& yn, const Eigen::VectorXd& weights,
                 std::vector<DenseLayer>* grad) const {
  const std::size_t L = layers.size();
  std::vector<Eigen::MatrixXd> acts{xn};
  std::vector<Eigen::MatrixXd> pre;
  for (std::size_t l = 0; l < L; ++l) {
    pre.push_back((layers[l].W * acts.back()).colwise() + layers[l].b);
    acts.push_back(l + 1 < L ? relu(pre.back()) : pre.back());
  }
  const double n = static_cast<double>(xn.cols());
  const double k = static_cast<double>(weights.size());
  const Eigen::MatrixXd err = acts.back() - yn;
  const double value = (err.array().square().colwise() * weights.array()).sum() / (n * k);
  if (grad == nullptr) return value;

  grad->resize(L);
  Eigen::MatrixXd delta = (err.array().colwise() * weights.array()).matrix() * (2.0 / (n * k));
  for (std::size_t l = L; l-- > 0;) {
    (*grad)[l].W = delta * acts[l].transpose();
    (*grad)[l].b = delta.rowwise().sum();
    if (l > 0) delta = ((layers[l].W.transpose() * delta).array() * (pre[l - 1].array() > 0.0).cast<double>()).matrix();
  }
  return value;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const DenseLayer& l : layers) n += static_cast<std::size_t>(l.W.size() + l.b.size());
  return n;
}

double& Mlp::parameter(std::size_t i) {
  for (DenseLayer& l : layers) {
    const auto nw = static_cast<std::size_t>(l.W.size());
    if (i < nw) return l.W.data()[i];
    i -= nw;
    const auto nb = static_cast<std::size_t>(l.b.size());
    if (i < nb) return l.b[static_cast<Eigen::Index>(i)];
    i -= nb;
  }
  throw Error("parameter index out of range");
}

void Mlp::round_to_float() {
  auto round = [](auto& m) { m = m.template cast<float>().template cast<double>(); };
  for (DenseLayer& l : layers) {
    round(l.W);
    round(l.b);
  }
  round(in_mean);
  round(in_scale);
  round(out_mean);
  round(out_scale);
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || batch_size < 1 || epochs < 1 || !(w_theta > 0.0)) {
    throw Error("train config: learning_rate, batch_size, epochs and w_theta must be positive");
  }
  if (!(validation_fraction > 0.0 && validation_fraction < 0.5)) {
    throw Error("train config: validation_fraction must be in (0, 0.5)");
  }
  for (int h : hidden) {
    if (h < 1) throw Error("train config: hidden widths must be positive");
  }
}

TrainCurves fit(Mlp& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const Eigen::VectorXd& weights,
                const TrainConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(x.cols());
  if (n < 2) throw Error("training needs at least two samples");
  Rng rng(derive_seed(cfg.seed, 0x7124));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  const std::size_t n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(cfg.validation_fraction * static_cast<double>(n))), 1, n - 1);
  const std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  const Eigen::MatrixXd xt = gather(x, train_idx, 0, train_idx.size());
  const Eigen::MatrixXd yt = gather(y, train_idx, 0, train_idx.size());
  const Eigen::MatrixXd xv = gather(x, val_idx, 0, val_idx.size());
  const Eigen::MatrixXd yv = gather(y, val_idx, 0, val_idx.size());

  // Standardise from the training columns. Near-constant inputs are damped
  // rather than blown up.
  net.in_mean = xt.rowwise().mean();
  const Eigen::VectorXd in_sd = ((xt.colwise() - net.in_mean).array().square().rowwise().mean()).sqrt();
  const double sd_floor = std::max(1e-12, 0.05 * in_sd.mean());
  net.in_scale = in_sd.cwiseMax(sd_floor).cwiseInverse();
  net.out_mean = yt.rowwise().mean();
  const Eigen::VectorXd out_sd = ((yt.colwise() - net.out_mean).array().square().rowwise().mean()).sqrt();
  net.out_scale = out_sd.unaryExpr([](double s) { return s > 1e-12 ? s : 0.0; });

  const Eigen::MatrixXd xtn = net.normalize_inputs(xt);
  const Eigen::MatrixXd ytn = net.normalize_targets(yt);

  TrainCurves curves;
  auto record = [&](int epoch) {
    const double tr = weighted_mse(net.predict(xt), yt, weights);
    const double va = weighted_mse(net.predict(xv), yv, weights);
    if (!std::isfinite(tr) || !std::isfinite(va)) {
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch), epoch);
    }
    curves.train_loss.push_back(tr);
    curves.val_loss.push_back(va);
  };
  record(0);

  std::vector<std::size_t> perm(train_idx.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<DenseLayer> grad;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    for (std::size_t start = 0; start < perm.size(); start += batch) {
      const std::size_t end = std::min(perm.size(), start + batch);
      net.loss(gather(xtn, perm, start, end), gather(ytn, perm, start, end), weights, &grad);
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        net.layers[l].W -= cfg.learning_rate * grad[l].W;
        net.layers[l].b -= cfg.learning_rate * grad[l].b;
      }
    }
    record(epoch);
  }
  net.round_to_float();
  return curves;
}

Eigen::VectorXd AlignerModel::input(const Embedding& live, const Embedding* goal) const {
  if (live.extractor_id != extractor_id) throw Error("aligner expects '" + extractor_id + "' descriptors");
  const auto d = static_cast<Eigen::Index>(live.dim());
  Eigen::VectorXd v(goal_conditioned ? 2 * d : d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = live.values[static_cast<std::size_t>(i)];
  if (goal_conditioned) {
    if (goal == nullptr) throw Error("goal-conditioned aligner needs a goal observation");
    if (goal->dim() != live.dim()) throw Error("goal descriptor dimension mismatch");
    for (Eigen::Index i = 0; i < d; ++i) v[d + i] = goal->values[static_cast<std::size_t>(i)];
  }
  return v;
}

namespace {

std::vector<Embedding> demo_embeddings(const MemoryBuffer& buf, const FeatureExtractor& x, int d) {
  const DemoRecord& rec = buf.demo(d);
  std::vector<Embedding> out;
  const EmbeddingBlock* block = buf.embeddings(x.id());
  if (block != nullptr && block->keys.size() == buf.observation_count()) {
    const auto first = static_cast<std::size_t>(
        std::lower_bound(block->keys.begin(), block->keys.end(), ObsKey{d, -1}) - block->keys.begin());
    for (std::size_t k = 0; k <= rec.samples.size(); ++k) {
      out.push_back({x.id(), std::vector<float>(block->row(first + k), block->row(first + k) + block->dim)});
    }
    return out;
  }
  out.push_back(x.extract(rec.bottleneck_obs));
  for (const AlignmentSample& s : rec.samples) out.push_back(x.extract(s.observation));
  return out;
}

Eigen::VectorXd label_vector(const Displacement4& d) { return Eigen::Vector4d(d.dx, d.dy, d.dz, d.dtheta_z); }

TrainResult train_impl(const MemoryBuffer& buf, const TrainConfig& cfg, const std::string& extractor_id, bool goal) {
  if (buf.empty()) throw Error("cannot train an aligner on an empty buffer");
  const auto extractor = make_extractor(extractor_id);
  TrainResult out;
  out.model.extractor_id = extractor_id;
  out.model.goal_conditioned = goal;
  out.model.train_seed = cfg.seed;

  std::vector<Eigen::VectorXd> xs;
  std::vector<Eigen::VectorXd> ys;
  for (int d = 0; d < static_cast<int>(buf.size()); ++d) {
    const std::vector<Embedding> e = demo_embeddings(buf, *extractor, d);
    const DemoRecord& rec = buf.demo(d);
    for (std::size_t i = 0; i < rec.samples.size(); ++i) {
      xs.push_back(out.model.input(e[i + 1], &e[0]));
      ys.push_back(label_vector(rec.samples[i].label));
    }
  }
  if (xs.size() < 2) throw Error("aligner training needs at least two samples");
  Eigen::MatrixXd x(xs.front().size(), static_cast<Eigen::Index>(xs.size()));
  Eigen::MatrixXd y(4, static_cast<Eigen::Index>(ys.size()));
  for (std::size_t k = 0; k < xs.size(); ++k) {
    x.col(static_cast<Eigen::Index>(k)) = xs[k];
    y.col(static_cast<Eigen::Index>(k)) = ys[k];
  }
  std::vector<int> widths{static_cast<int>(x.rows())};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(4);
  Rng init(derive_seed(cfg.seed, 0x1717));
  out.model.net = Mlp(widths, init);
  out.curves = fit(out.model.net, x, y, Eigen::Vector4d(1.0, 1.0, 1.0, cfg.w_theta), cfg);
  return out;
}

}  // namespace

TrainResult train(const MemoryBuffer& buf, const TrainConfig& cfg, const std::string& extractor_id) {
  return train_impl(buf, cfg, extractor_id, true);
}

TrainResult train_goal_free(const MemoryBuffer& buf, const TrainConfig& cfg, const std::string& extractor_id) {
  return train_impl(buf, cfg, extractor_id, false);
}

Displacement4 predict(const AlignerModel& model, const FeatureExtractor& x, const Observation& live,
                      const Observation* goal) {
  const Embedding el = x.extract(live);
  Eigen::VectorXd in;
  if (model.goal_conditioned) {
    if (goal == nullptr) throw Error("goal-conditioned aligner needs a goal observation");
    const Embedding eg = x.extract(*goal);
    in = model.input(el, &eg);
  } else {
    in = model.input(el, nullptr);
  }
  const Eigen::VectorXd y = model.net.predict(in);
  return {y[0], y[1], y[2], y[3]};
}

Displacement4 predict(const AlignerModel& model, const Observation& live, const Observation& goal) {
  return predict(model, *make_extractor(model.extractor_id), live, &goal);
}

GradCheck gradient_check(const Mlp& net, const Eigen::MatrixXd& xn, const Eigen::MatrixXd& yn,
                         const Eigen::VectorXd& weights, Rng& rng, std::size_t coords, double h, double floor) {
  std::vector<DenseLayer> grad;
  net.loss(xn, yn, weights, &grad);
  Mlp probe = net;
  Mlp analytic = net;
  analytic.layers = grad;

  const std::size_t total = net.parameter_count();
  coords = std::min(coords, total);
  std::set<std::size_t> picked;
  while (picked.size() < coords) picked.insert(rng.index(total));

  GradCheck out;
  for (std::size_t i : picked) {
    const double saved = probe.parameter(i);
    probe.parameter(i) = saved + h;
    const double up = probe.loss(xn, yn, weights);
    probe.parameter(i) = saved - h;
    const double down = probe.loss(xn, yn, weights);
    probe.parameter(i) = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic.parameter(i);
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    out.max_rel_error = std::max(out.max_rel_error, rel);
    ++out.coordinates;
  }
  return out;
}

namespace {

constexpr std::string_view kModelMagic = "RARMLP1";

void put_vector(ByteWriter& w, const Eigen::VectorXd& v) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) w.put<float>(to_f32(v[i]));
}

Eigen::VectorXd get_vector(ByteReader& r) {
  const auto n = r.get<std::uint32_t>();
  if (std::size_t{n} * 4 > r.remaining()) throw FormatError("implausible vector length in checkpoint");
  Eigen::VectorXd v(n);
  for (std::uint32_t i = 0; i < n; ++i) v[i] = r.get<float>();
  return v;
}

}  // namespace

void save_model(const AlignerModel& m, const std::filesystem::path& path) {
  ByteWriter w;
  w.put_raw(kModelMagic.data(), kModelMagic.size());
  w.put_string(m.extractor_id);
  w.put<std::uint8_t>(m.goal_conditioned ? 1 : 0);
  w.put<std::uint64_t>(m.train_seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.net.layers.size()));
  for (const DenseLayer& l : m.net.layers) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.W.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.W.cols()));
  }
  for (const DenseLayer& l : m.net.layers) {
    for (Eigen::Index i = 0; i < l.W.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.W.cols(); ++j) w.put<float>(to_f32(l.W(i, j)));
    }
    for (Eigen::Index i = 0; i < l.b.size(); ++i) w.put<float>(to_f32(l.b[i]));
  }
  put_vector(w, m.net.in_mean);
  put_vector(w, m.net.in_scale);
  put_vector(w, m.net.out_mean);
  put_vector(w, m.net.out_scale);
  w.write_with_crc(path);
}

AlignerModel load_model(const std::filesystem::path& path) {
  ByteReader r = ByteReader::open_checked(path, kModelMagic);
  AlignerModel m;
  m.extractor_id = r.get_string();
  m.goal_conditioned = r.get<std::uint8_t>() != 0;
  m.train_seed = r.get<std::uint64_t>();
  const auto n_layers = r.get<std::uint32_t>();
  if (n_layers == 0 || n_layers > 64) throw FormatError("implausible layer count in checkpoint");
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes;
  for (std::uint32_t k = 0; k < n_layers; ++k) {
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    if (k > 0 && cols != shapes.back().first) throw FormatError("checkpoint layer shapes do not chain");
    shapes.emplace_back(rows, cols);
  }
  for (const auto& [rows, cols] : shapes) {
    if ((std::uint64_t{rows} * cols + rows) * 4 > r.remaining()) throw FormatError("truncated checkpoint weights");
    DenseLayer l{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
    for (std::uint32_t i = 0; i < rows; ++i) {
      for (std::uint32_t j = 0; j < cols; ++j) l.W(i, j) = r.get<float>();
    }
    for (std::uint32_t i = 0; i < rows; ++i) l.b[i] = r.get<float>();
    m.net.layers.push_back(std::move(l));
  }
  m.net.in_mean = get_vector(r);
  m.net.in_scale = get_vector(r);
  m.net.out_mean = get_vector(r);
  m.net.out_scale = get_vector(r);
  if (m.net.in_mean.size() != m.net.input_dim() || m.net.in_scale.size() != m.net.input_dim() ||
      m.net.out_mean.size() != m.net.output_dim() || m.net.out_scale.size() != m.net.output_dim()) {
    throw FormatError("checkpoint normalisation does not match layer shapes");
  }
  if (!r.at_end()) throw FormatError("trailing bytes in checkpoint");
  return m;
}

void ServoConfig::validate() const {
  if (!(gamma > 0.0) || !(gamma_theta > 0.0)) throw Error("servo tolerances must be positive");
  if (max_iters < 1) throw Error("servo max_iters must be at least 1");
  if (!(step_scale > 0.0 && step_scale <= 1.0)) throw Error("servo step_scale must be in (0, 1]");
  if (max_translation < 0.0) throw Error("servo max_translation must be non-negative");
}

ServoOutcome servo(const WorldState& world, const AlignFn& align, const ServoConfig& cfg,
                   const RenderOptions& render_opts, const SimConfig& sim) {
  cfg.validate();
  ServoOutcome out{world, {}};
  for (;;) {
    const Observation live = render(out.world, render_opts);
    const Displacement4 d = align(out.world, live);
    out.trace.steps.push_back({out.world.end_effector, d});
    if (d.translation_norm() < cfg.gamma && std::abs(d.dtheta_z) < cfg.gamma_theta) {
      out.trace.converged = true;
      break;
    }
    if (out.trace.iterations >= cfg.max_iters) break;
    Displacement4 move = d.scaled(cfg.step_scale);
    if (cfg.max_translation > 0.0 && move.translation_norm() > cfg.max_translation) {
      const double k = cfg.max_translation / move.translation_norm();
      move = Displacement4(move.dx * k, move.dy * k, move.dz * k, move.dtheta_z);
    }
    out.world = move_end_effector(out.world, apply_displacement(out.world.end_effector, move), sim);
    ++out.trace.iterations;
  }
  return out;
}

AlignFn oracle_aligner(const Pose& bottleneck) {
  return [bottleneck](const WorldState& w, const Observation&) {
    return displacement_to_bottleneck(w.end_effector, bottleneck);
  };
}

}  // namespace rar
