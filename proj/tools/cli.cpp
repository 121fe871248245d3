#include "cli.hpp"

#include "rar/binio.hpp"
#include "rar/parallel.hpp"
#include "rar/rng.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace rar::cli {

json RunConfig::to_json() const {
  json j = rar::to_json(experiment);
  j["out"] = out.string();
  return j;
}

fs::path default_catalog() { return fs::path(RAR_DATA_DIR) / "objects.json"; }

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw Error("config: expected a JSON object");
  json rest = j;
  RunConfig rc;
  if (rest.contains("out")) {
    if (!rest["out"].is_string()) throw Error("config.out: expected a string");
    rc.out = rest["out"].get<std::string>();
    rest.erase("out");
  }
  rc.experiment = experiment_config_from_json(rest, "config");
  const auto resolve = [&](fs::path& p) {
    if (!p.empty() && p.is_relative()) p = (base_dir / p).lexically_normal();
  };
  resolve(rc.experiment.catalog);
  resolve(rc.out);
  if (rc.experiment.catalog.empty()) rc.experiment.catalog = default_catalog();
  return rc;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(path.string() + ": " + e.what());
  }
  return run_config_from_json(j, fs::absolute(path).parent_path());
}

std::string git_blob_hash(std::string_view bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw Error("cannot allocate a digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 && EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("SHA-1 digest failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

namespace {

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write '" + path.string() + "'");
}

}  // namespace

std::string file_hash(const fs::path& path) { return git_blob_hash(read_bytes(path)); }

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
  std::string extractor;
  std::optional<int> demos;
  bool dump_obs = false;

  std::string buffer;
  std::string model;
  std::string image;
  std::string key;
  std::string report;
  std::string export_obs;
  int k = 5;
  int models = 5;
  int coords = 200;
  bool goal_free = false;
};

RunConfig effective_config(const Options& o) {
  RunConfig rc;
  if (!o.config.empty()) {
    rc = load_run_config(o.config);
  } else {
    rc.experiment.catalog = default_catalog();
  }
  ExperimentConfig& e = rc.experiment;
  if (o.seed) e.seed = *o.seed;
  if (o.workers) e.workers = *o.workers;
  if (!o.extractor.empty()) e.extractor = o.extractor;
  if (o.demos) e.demos_per_object = *o.demos;
  e.validate();
  make_extractor(e.extractor);  // rejects unknown ids before any work starts
  return rc;
}

/// A fresh output directory plus the manifest of what went into it.
class RunDir {
 public:
  RunDir(const Options& o, const RunConfig& rc, std::string command, json inputs)
      : command_(std::move(command)), inputs_(std::move(inputs)) {
    snapshot_ = rc.to_json();
    snapshot_["command"] = command_;
    const std::string config_text = snapshot_.dump(2) + "\n";
    config_hash_ = git_blob_hash(config_text);
    if (!o.out.empty()) {
      dir_ = o.out;
      if (fs::exists(dir_) && !(fs::is_directory(dir_) && fs::is_empty(dir_))) {
        throw Error("output directory '" + dir_.string() + "' already exists and is not empty");
      }
    } else {
      const fs::path base = rc.out / (command_ + "-" + config_hash_.substr(0, 12));
      dir_ = base;
      for (int n = 2; fs::exists(dir_); ++n) dir_ = base.string() + "-" + std::to_string(n);
    }
    fs::create_directories(dir_);
    write("config.json", config_text);
  }

  const fs::path& path() const { return dir_; }
  fs::path operator/(const std::string& name) const { return dir_ / name; }

  void write(const std::string& name, const std::string& bytes) {
    write_text(dir_ / name, bytes);
    add(name);
  }
  /// Registers a file written by other code.
  void add(const std::string& name) {
    if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
  }

  /// Writes manifest.json: the config hash, input hashes and one git blob id
  /// per artifact.
  void finish(const json& extra = json::object()) {
    json artifacts = json::object();
    for (const std::string& f : files_) artifacts[f] = file_hash(dir_ / f);
    json m = {{"command", command_},
              {"config_hash", config_hash_},
              {"seed", snapshot_["seed"]},
              {"inputs", inputs_},
              {"artifacts", artifacts}};
    for (const auto& [k, v] : extra.items()) m[k] = v;
    write_text(dir_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  std::string command_;
  json inputs_;
  json snapshot_;
  std::string config_hash_;
  fs::path dir_;
  std::vector<std::string> files_;
};

json input_entry(const fs::path& p) { return {{"path", p.string()}, {"hash", file_hash(p)}}; }

MemoryBuffer load_buffer_arg(const Options& o) {
  if (o.buffer.empty()) throw Error("--buffer is required");
  return MemoryBuffer::load(o.buffer);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_collect(const Options& o, std::ostream& out, std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig rc = effective_config(o);
  const ExperimentConfig& cfg = rc.experiment;
  const Catalog catalog = load_catalog(cfg.catalog);
  RunDir run(o, rc, "collect", {{"catalog", input_entry(cfg.catalog)}});

  MemoryBuffer buf = collect_buffer(catalog, cfg);
  buf.ensure_embeddings(*make_extractor(cfg.extractor));
  buf.save(run / "buffer.rarbuf");
  run.add("buffer.rarbuf");

  json demos = json::array();
  for (int d = 0; d < static_cast<int>(buf.size()); ++d) {
    const DemoRecord& rec = buf.demo(d);
    const ObjectMeta& meta = buf.train_meta(d);
    out << "demo " << d << " " << meta.object_name << " " << to_string(rec.task) << " I=" << rec.samples.size()
        << " trajectory=" << rec.trajectory.steps.size() << "\n";
    demos.push_back({{"demo", d},
                     {"object", meta.object_name},
                     {"task", to_string(rec.task)},
                     {"samples", rec.samples.size()},
                     {"trajectory_steps", rec.trajectory.steps.size()}});
  }
  out << "observations " << buf.observation_count() << "\n";
  run.finish({{"demos", demos}, {"observations", buf.observation_count()}});
  out << "run " << run.path().string() << "\n";
  err << "collect finished in " << seconds_since(t0) << " s\n";
  return kOk;
}

std::string curves_csv(const TrainCurves& c) {
  std::string s = "epoch,train_loss,val_loss\n";
  char line[96];
  for (std::size_t e = 0; e < c.train_loss.size(); ++e) {
    const double v = e < c.val_loss.size() ? c.val_loss[e] : 0.0;
    std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g\n", e, c.train_loss[e], v);
    s += line;
  }
  return s;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig rc = effective_config(o);
  const ExperimentConfig& cfg = rc.experiment;
  const MemoryBuffer buf = load_buffer_arg(o);
  RunDir run(o, rc, "train", {{"buffer", input_entry(o.buffer)}});

  TrainResult result;
  try {
    result = o.goal_free ? train_goal_free(buf, aligner_train_config(cfg), cfg.extractor)
                         : train(buf, aligner_train_config(cfg), cfg.extractor);
  } catch (const DivergenceError& e) {
    run.finish({{"diverged", true}, {"epoch", e.epoch()}});
    err << "error: " << e.what() << "\n";
    return kDivergence;
  }
  save_model(result.model, run / "model.rarmlp");
  run.add("model.rarmlp");
  run.write("curves.csv", curves_csv(result.curves));

  const TrainCurves& c = result.curves;
  out << "train_loss " << c.train_loss.front() << " -> " << c.train_loss.back() << "\n";
  out << "val_loss " << c.val_loss.front() << " -> " << c.val_loss.back() << "\n";
  run.finish({{"epochs", c.train_loss.size() - 1}});
  out << "run " << run.path().string() << "\n";
  err << "train finished in " << seconds_since(t0) << " s\n";
  return kOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out, std::ostream&) {
  const RunConfig rc = effective_config(o);
  const ExperimentConfig& cfg = rc.experiment;
  if (o.models < 1 || o.coords < 1) throw Error("--models and --coords must be positive");
  RunDir run(o, rc, "gradcheck", json::object());

  const int in = 2 * static_cast<int>(make_extractor(cfg.extractor)->dim());
  std::vector<int> widths = {in};
  widths.insert(widths.end(), cfg.train.hidden.begin(), cfg.train.hidden.end());
  widths.push_back(4);
  const Eigen::VectorXd weights = Eigen::Vector4d(1.0, 1.0, 1.0, cfg.train.w_theta);

  double worst = 0.0;
  std::size_t total = 0;
  json rows = json::array();
  for (int m = 0; m < o.models; ++m) {
    Rng rng(derive_seed(derive_seed(cfg.seed, 0x6C), static_cast<std::uint64_t>(m)));
    const Mlp net(widths, rng);
    Eigen::MatrixXd x(in, 16);
    Eigen::MatrixXd y(4, 16);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.normal();
    const GradCheck g = gradient_check(net, x, y, weights, rng, static_cast<std::size_t>(o.coords));
    out << "model " << m << " max_rel_error " << g.max_rel_error << " coords " << g.coordinates << "\n";
    rows.push_back({{"model", m}, {"max_rel_error", g.max_rel_error}, {"coordinates", g.coordinates}});
    worst = std::max(worst, g.max_rel_error);
    total += g.coordinates;
  }
  const bool pass = worst < 1e-4;
  out << "max_rel_error " << worst << " over " << total << " coordinates " << (pass ? "PASS" : "FAIL") << "\n";
  run.write("gradcheck.json", json({{"models", rows}, {"max_rel_error", worst}, {"pass", pass}}).dump(2) + "\n");
  run.finish();
  return pass ? kOk : kEpisodeFailures;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig rc = effective_config(o);
  ExperimentConfig& cfg = rc.experiment;
  const Catalog catalog = load_catalog(cfg.catalog);
  json inputs = {{"catalog", input_entry(cfg.catalog)}};
  if (!o.buffer.empty()) inputs["buffer"] = input_entry(o.buffer);
  if (!o.model.empty()) inputs["model"] = input_entry(o.model);
  RunDir run(o, rc, "eval", inputs);

  const MemoryBuffer buf = o.buffer.empty() ? collect_buffer(catalog, cfg) : MemoryBuffer::load(o.buffer);
  std::optional<AlignerModel> model;
  if (!o.model.empty()) model = load_model(o.model);
  cfg.record_traces = true;
  cfg.dump_obs = o.dump_obs;

  ExperimentReport rep;
  try {
    rep = run_experiment(cfg, catalog, buf, model ? &*model : nullptr);
  } catch (const DivergenceError& e) {
    run.finish({{"diverged", true}, {"epoch", e.epoch()}});
    err << "error: " << e.what() << "\n";
    return kDivergence;
  }
  for (const fs::path& p : emit_report(rep, run.path())) run.add(p.filename().string());
  std::string lines;
  for (const std::string& t : rep.traces) lines += t + "\n";
  run.write("episodes.jsonl", lines);

  int failures = 0;
  for (const TrialRecord& t : rep.trials) failures += t.success ? 0 : 1;
  char line[160];
  for (const std::string& m : rep.methods()) {
    std::snprintf(line, sizeof(line), "%-9s", m.c_str());
    out << line;
    for (const std::string& s : cfg.splits) {
      std::snprintf(line, sizeof(line), " %s %.3f", s.c_str(), rep.aggregate(m, s));
      out << line;
    }
    std::snprintf(line, sizeof(line), " all %.3f\n", rep.aggregate(m));
    out << line;
  }
  out << "episodes " << rep.trials.size() << " failures " << failures << "\n";
  run.finish({{"episodes", rep.trials.size()}, {"failures", failures}});
  out << "run " << run.path().string() << "\n";
  err << "eval finished in " << seconds_since(t0) << " s\n";
  return failures > 0 ? kEpisodeFailures : kOk;
}

int cmd_retrieve(const Options& o, std::ostream& out, std::ostream&) {
  const RunConfig rc = effective_config(o);
  MemoryBuffer buf = load_buffer_arg(o);
  if (o.image.empty() == o.key.empty()) throw Error("give exactly one of --image or --key");
  if (o.k < 1) throw Error("--k must be positive");
  const Observation query = o.image.empty() ? buf.observation(obs_key_from_string(o.key)) : load_observation(o.image);
  json inputs = {{"buffer", input_entry(o.buffer)}};
  if (!o.image.empty()) inputs["image"] = input_entry(o.image);
  RunDir run(o, rc, "retrieve", inputs);

  const auto x = make_extractor(rc.experiment.extractor);
  buf.ensure_embeddings(*x);
  const auto top = buf.top_k(x->extract(query), static_cast<std::size_t>(o.k));

  json rows = json::array();
  char line[128];
  for (std::size_t r = 0; r < top.size(); ++r) {
    const auto& [key, score] = top[r];
    const DemoRecord& d = buf.demo(key.demo);
    std::snprintf(line, sizeof(line), "%zu demo %d index %d score %.6f task %s\n", r + 1, key.demo, key.index, score,
                  std::string(to_string(d.task)).c_str());
    out << line;
    rows.push_back({{"rank", r + 1},
                    {"demo", key.demo},
                    {"index", key.index},
                    {"score", score},
                    {"task", to_string(d.task)}});
  }
  run.write("matches.json", json({{"extractor", x->id()}, {"matches", rows}}).dump(2) + "\n");
  run.finish();
  return kOk;
}

int cmd_inspect(const Options& o, std::ostream& out, std::ostream&) {
  const RunConfig rc = effective_config(o);
  const MemoryBuffer buf = load_buffer_arg(o);
  const Observation* exported = o.export_obs.empty() ? nullptr : &buf.observation(obs_key_from_string(o.export_obs));
  RunDir run(o, rc, "inspect", {{"buffer", input_entry(o.buffer)}});

  std::map<std::string, int> tasks;
  std::size_t samples = 0;
  std::size_t steps = 0;
  for (const DemoRecord& d : buf.demos()) {
    ++tasks[std::string(to_string(d.task))];
    samples += d.samples.size();
    steps += d.trajectory.steps.size();
  }
  json blocks = json::array();
  for (const std::string& id : buf.extractor_ids()) {
    const EmbeddingBlock* b = buf.embeddings(id);
    blocks.push_back({{"extractor", id}, {"dim", b->dim}, {"rows", b->keys.size()}});
  }
  const json report = {{"demos", buf.size()},
                       {"observations", buf.observation_count()},
                       {"samples", samples},
                       {"trajectory_steps", steps},
                       {"tasks", tasks},
                       {"embeddings", blocks},
                       {"file_bytes", fs::file_size(o.buffer)}};
  out << report.dump(2) << "\n";
  run.write("inspect.json", report.dump(2) + "\n");
  if (exported != nullptr) {
    save_observation(*exported, run / "observation.rarobs");
    run.add("observation.rarobs");
    out << "exported " << o.export_obs << " to " << (run / "observation.rarobs").string() << "\n";
  }
  run.finish();
  return kOk;
}

int cmd_plot(const Options& o, std::ostream& out, std::ostream&) {
  const RunConfig rc = effective_config(o);
  if (o.report.empty()) throw Error("--report is required");
  std::ifstream in(o.report);
  if (!in) throw Error("cannot open report '" + o.report + "'");
  const ExperimentReport rep = report_from_json(json::parse(in));
  RunDir run(o, rc, "plot", {{"report", input_entry(o.report)}});
  for (const fs::path& p : emit_report(rep, run.path(), {ReportFormat::Svg})) {
    run.add(p.filename().string());
    out << p.string() << "\n";
  }
  run.finish();
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Retrieval, alignment and replay benchmark", "rar"};
  app.require_subcommand(1);
  Options o;

  const auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "RunConfig JSON")->check(CLI::ExistingFile);
    c->add_option("--seed", o.seed, "Override the config seed");
    c->add_option("--workers", o.workers, "Worker threads (0: machine parallelism)")->check(CLI::NonNegativeNumber);
    c->add_option("--out", o.out, "Run directory (must be new or empty)");
    c->add_option("--extractor", o.extractor, "Descriptor id");
  };
  CLI::App* collect = app.add_subcommand("collect", "Record demonstrations into a buffer");
  common(collect);
  collect->add_option("--demos", o.demos, "Demonstrations per object")->check(CLI::IsMember({1, 10}));

  CLI::App* trn = app.add_subcommand("train", "Train the alignment network on a buffer");
  common(trn);
  trn->add_option("--buffer", o.buffer)->required()->check(CLI::ExistingFile);
  trn->add_flag("--goal-free", o.goal_free, "Train the goal-free aligner instead");

  CLI::App* grad = app.add_subcommand("gradcheck", "Finite-difference check of the MLP gradients");
  common(grad);
  grad->add_option("--models", o.models, "Random models to check");
  grad->add_option("--coords", o.coords, "Parameters sampled per model");

  CLI::App* eval = app.add_subcommand("eval", "Run the method comparison and write reports");
  common(eval);
  eval->add_option("--demos", o.demos, "Demonstrations per object")->check(CLI::IsMember({1, 10}));
  eval->add_option("--buffer", o.buffer, "Reuse a collected buffer")->check(CLI::ExistingFile);
  eval->add_option("--model", o.model, "Reuse a trained aligner")->check(CLI::ExistingFile);
  eval->add_flag("--dump-obs", o.dump_obs, "Include observations in episodes.jsonl");

  CLI::App* retrieve = app.add_subcommand("retrieve", "Top-k buffer matches for an observation");
  common(retrieve);
  retrieve->add_option("--buffer", o.buffer)->required()->check(CLI::ExistingFile);
  retrieve->add_option("--image", o.image, "Observation file (.rarobs)")->check(CLI::ExistingFile);
  retrieve->add_option("--key", o.key, "Stored observation DEMO:INDEX");
  retrieve->add_option("--k", o.k, "Matches to list");

  CLI::App* inspect = app.add_subcommand("inspect", "Summarise a buffer");
  common(inspect);
  inspect->add_option("--buffer", o.buffer)->required()->check(CLI::ExistingFile);
  inspect->add_option("--export-obs", o.export_obs, "Write observation DEMO:INDEX as a .rarobs file");

  CLI::App* plot = app.add_subcommand("plot", "Bar charts from a report.json");
  common(plot);
  plot->add_option("--report", o.report)->required()->check(CLI::ExistingFile);

  std::vector<const char*> argv = {"rar"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kOperationalError;
  }

  try {
    if (*collect) return cmd_collect(o, out, err);
    if (*trn) return cmd_train(o, out, err);
    if (*grad) return cmd_gradcheck(o, out, err);
    if (*eval) return cmd_eval(o, out, err);
    if (*retrieve) return cmd_retrieve(o, out, err);
    if (*inspect) return cmd_inspect(o, out, err);
    if (*plot) return cmd_plot(o, out, err);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kOperationalError;
  }
  return kOperationalError;
}

}  // namespace rar::cli
