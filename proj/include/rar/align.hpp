#pragma once

// Goal-conditioned alignment regressor (descriptor MLP), its trainer, and
// the iterative servo loop that drives the end-effector onto the bottleneck.

#include "rar/buffer.hpp"
#include "rar/features.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <vector>

namespace rar {

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

struct DenseLayer {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;
};

/// Plain ReLU MLP with a linear head. Inputs are standardised and outputs
/// de-standardised inside the model; the loss lives in normalised units.
class Mlp {
 public:
  Mlp() = default;
  /// He-initialised layers of the given widths, identity normalisation.
  Mlp(const std::vector<int>& widths, Rng& rng);

  std::vector<DenseLayer> layers;
  Eigen::VectorXd in_mean;
  Eigen::VectorXd in_scale;  // multiplies (x - in_mean)
  Eigen::VectorXd out_mean;
  Eigen::VectorXd out_scale;

  int input_dim() const { return static_cast<int>(layers.front().W.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().W.rows()); }

  /// Columns are samples. Raw in, physical out.
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x) const;

  Eigen::MatrixXd normalize_inputs(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd normalize_targets(const Eigen::MatrixXd& y) const;

  /// Weighted MSE in normalised units, mean over columns. Fills `grad`
  /// (same shapes as `layers`) when non-null.
  double loss(const Eigen::MatrixXd& xn, const Eigen::MatrixXd& yn, const Eigen::VectorXd& weights,
              std::vector<DenseLayer>* grad = nullptr) const;

  std::size_t parameter_count() const;
  double& parameter(std::size_t i);
  double parameter(std::size_t i) const { return const_cast<Mlp*>(this)->parameter(i); }

  /// Rounds every stored number to float so checkpoints round-trip exactly.
  void round_to_float();
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 64;
  int epochs = 200;
  double validation_fraction = 0.1;
  double w_theta = 0.25;
  std::uint64_t seed = 0;
  std::vector<int> hidden = {256, 256};

  void validate() const;
};

struct TrainCurves {
  std::vector<double> train_loss;  // physical weighted MSE; index 0 is before training
  std::vector<double> val_loss;
};

/// Mini-batch gradient descent on (x, y) columns with a seeded validation
/// split. Sets the model's normalisation from the training columns.
TrainCurves fit(Mlp& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const Eigen::VectorXd& weights,
                const TrainConfig& cfg);

struct AlignerModel {
  std::string extractor_id = "patch";
  bool goal_conditioned = true;
  Mlp net;
  std::uint64_t train_seed = 0;

  Eigen::VectorXd input(const Embedding& live, const Embedding* goal) const;
};

struct TrainResult {
  AlignerModel model;
  TrainCurves curves;
};

/// Trains on (o_i, o_b) -> d_i pairs drawn within each demo.
TrainResult train(const MemoryBuffer& buf, const TrainConfig& cfg, const std::string& extractor_id = "patch");

/// Goal-free variant: o_i -> d_i across all demos.
TrainResult train_goal_free(const MemoryBuffer& buf, const TrainConfig& cfg, const std::string& extractor_id = "patch");

Displacement4 predict(const AlignerModel& model, const FeatureExtractor& x, const Observation& live,
                      const Observation* goal);
Displacement4 predict(const AlignerModel& model, const Observation& live, const Observation& goal);

/// Largest relative error |a - n| / max(|a|, |n|, floor) between analytic and
/// central-difference gradients over `coords` random parameters.
struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};
GradCheck gradient_check(const Mlp& net, const Eigen::MatrixXd& xn, const Eigen::MatrixXd& yn,
                         const Eigen::VectorXd& weights, Rng& rng, std::size_t coords = 200, double h = 1e-5,
                         double floor = 1e-6);

void save_model(const AlignerModel& m, const std::filesystem::path& path);
AlignerModel load_model(const std::filesystem::path& path);

// Servo

struct ServoConfig {
  double gamma = 5e-3;
  double gamma_theta = 0.0175;
  int max_iters = 50;
  double step_scale = 1.0;
  double max_translation = 0.0;  // clamp on each executed motion; 0 disables

  void validate() const;
};

struct ServoStep {
  Pose pose;  // end-effector pose the observation was taken from
  Displacement4 prediction;
};

struct ServoTrace {
  std::vector<ServoStep> steps;
  bool converged = false;
  int iterations = 0;  // executed motions
};

using AlignFn = std::function<Displacement4(const WorldState& world, const Observation& live)>;

struct ServoOutcome {
  WorldState world;
  ServoTrace trace;
};

ServoOutcome servo(const WorldState& world, const AlignFn& align, const ServoConfig& cfg,
                   const RenderOptions& render_opts = {}, const SimConfig& sim = {});

/// Analytic alignment: exact displacement from the current end-effector pose
/// to `bottleneck`. Test and benchmark oracle only.
AlignFn oracle_aligner(const Pose& bottleneck);

}  // namespace rar
