#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "grokforget/data.hpp"
#include "grokforget/errors.hpp"
#include "grokforget/grad_vector.hpp"
#include "grokforget/model.hpp"
#include "grokforget/rng.hpp"

namespace gf::train {

enum class OptimizerKind { sgd, adamw, sam_sgd, sam_adamw };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adamw;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double sam_radius = 0.0;

  bool is_sam() const { return kind == OptimizerKind::sam_sgd || kind == OptimizerKind::sam_adamw; }
  void validate() const;
  nlohmann::json to_json() const;
  static OptimizerConfig from_json(const nlohmann::json& j);
};

/// First-order update rule holding its own per-coordinate state. SGD uses
/// coupled L2 decay with heavy-ball momentum; AdamW decays decoupled. The
/// sam_* kinds use the matching base rule here; the perturbation lives in
/// sam_step.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, std::int64_t size);

  void step(std::span<float> params, std::span<const float> grad);
  const OptimizerConfig& config() const { return cfg_; }
  std::int64_t steps_taken() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::vector<float> m_;
  std::vector<float> v_;
  std::int64_t t_ = 0;
};

// Loss and gradient at a flat parameter point.
using GradientFn = std::function<std::pair<double, std::vector<float>>(std::span<const float>)>;

struct SamStepInfo {
  double loss = 0.0;
  int gradient_evaluations = 0;
  bool perturbation_skipped = false;
};

// Evaluates g at w, moves to w + radius * g / |g|, re-evaluates, then applies
// the base update at w with the second gradient. A zero first gradient skips
// the perturbation and takes a plain step.
SamStepInfo sam_step(std::span<float> params, const GradientFn& grad_fn, Optimizer& base, double radius);

struct TrainConfig {
  OptimizerConfig opt;
  std::int64_t steps = 1000;
  std::int64_t batch_size = 512;
  std::int64_t eval_every = 100;
  std::int64_t checkpoint_every = 500;
  double fit_threshold = 0.99;
  // Stop once validation accuracy has held at or above this level for
  // early_stop_evals consecutive evaluations.
  std::optional<double> early_stop_val_acc;
  std::int64_t early_stop_evals = 4;
  // Training examples whose individual losses are logged at every eval; a
  // seeded sample is drawn when the set is larger.
  std::int64_t loss_track_limit = 8192;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EvalRecord {
  std::int64_t step = 0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrajectoryLog {
  std::vector<EvalRecord> evals;
  std::vector<std::int64_t> tracked_ids;
  std::vector<std::int64_t> loss_steps;
  // per_example_loss[i][j]: loss of tracked_ids[j] at loss_steps[i].
  std::vector<std::vector<float>> per_example_loss;

  const EvalRecord* at_step(std::int64_t step) const;
};

// step,split,metric,value rows.
void write_trajectory_csv(const TrajectoryLog& log, const std::filesystem::path& path);
TrajectoryLog read_trajectory_csv(const std::filesystem::path& path);

struct CheckpointSet {
  std::map<std::int64_t, zoo::Params> by_step;
  std::optional<std::int64_t> fit_step;

  std::vector<std::int64_t> steps() const;
  const zoo::Params& at(std::int64_t step) const;
};

struct TrainResult {
  TrajectoryLog log;
  CheckpointSet checkpoints;
  zoo::Params final_params;
  std::int64_t steps_done = 0;
};

/// Raised when training hits a non-finite loss; carries everything up to the
/// last good step.
class RunError : public Error {
 public:
  RunError(const std::string& what, std::shared_ptr<TrainResult> partial)
      : Error(what), partial_(std::move(partial)) {}
  const TrainResult& partial() const { return *partial_; }

 private:
  std::shared_ptr<TrainResult> partial_;
};

// Deterministic per (rng, config). When out_dir is set, checkpoints go to
// out_dir/ckpt/step_<n> and the log to out_dir/trajectory.csv.
TrainResult train(const zoo::ModelSpec& spec, zoo::Params params, const data::Dataset& train_set,
                  const data::Dataset& val_set, const TrainConfig& cfg, Rng rng,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

struct GrokThresholds {
  double fit = 0.99;
  double grok = 0.90;
  std::int64_t persistence_evals = 3;
  std::int64_t min_gap_steps = 0;
};

struct GrokkingReport {
  std::optional<std::int64_t> t_fit;
  std::optional<std::int64_t> t_grok;
  std::optional<std::int64_t> pre_checkpoint;
  std::optional<std::int64_t> grok_checkpoint;
  GrokThresholds thresholds;
  // False when the log ends fewer than min_gap_steps after t_fit.
  bool covered = true;

  bool grokked() const { return t_grok.has_value(); }
  nlohmann::json to_json() const;
};

// t_fit: first eval with train_acc >= fit. t_grok: first eval at or after
// t_fit whose val_acc and the next persistence_evals val_accs are all >= grok.
// Checkpoint choice: best validation accuracy at step <= t_fit (earliest on
// ties) and the first checkpoint at step >= t_grok.
GrokkingReport detect_grokking(const TrajectoryLog& log, const GrokThresholds& th,
                               std::span<const std::int64_t> checkpoint_steps);

// Per tracked example: delta = loss(t_candidate) - loss(final logged step);
// delta < low -> grokked, delta > high -> ungrokked, otherwise ambiguous.
std::vector<data::LocalGrokLabel> classify_local_grokking(const TrajectoryLog& log, std::int64_t t_candidate,
                                                          double low = 0.01, double high = 0.5);
std::vector<data::LocalGrokLabel> classify_local_grokking(std::span<const double> loss_at_candidate,
                                                          std::span<const double> loss_at_final, double low = 0.01,
                                                          double high = 0.5);
// Logged step closest to `fraction` of the final logged step.
std::int64_t default_candidate_step(const TrajectoryLog& log, double fraction = 0.2);

}  // namespace gf::train
