#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "grokforget/data.hpp"
#include "grokforget/model.hpp"
#include "grokforget/train.hpp"

namespace gf::unlearn {

enum class Algorithm { ga, finetune, grad_tau, kl_anchor, fisher, scrub, retrain };

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);

struct ScrubConfig {
  std::int64_t max_epochs = 2;
  std::int64_t min_epochs = 2;
  double temperature = 2.0;
  double ce_weight = 1.0;  // weight of retain cross-entropy in the min phase
};

struct UnlearnConfig {
  Algorithm algorithm = Algorithm::ga;
  double lr = 1e-2;
  std::int64_t steps = 100;
  std::int64_t batch_size = 0;  // 0 = whole set every step
  double ascent_weight = 1.0;   // grad_tau alpha
  bool strict_alternation = false;  // grad_tau: alternate ascent and descent steps
  double kl_weight = 1.0;
  double fisher_scale = 1e-3;
  double fisher_eps = 1e-8;
  double fisher_exponent = -0.25;
  std::int64_t fisher_samples = 1024;  // retain examples used for the Fisher estimate
  ScrubConfig scrub;
  std::optional<double> stop_target_ua;
  std::int64_t eval_every = 1;
  std::uint64_t seed = 0;
  train::TrainConfig retrain;  // retrain only

  void validate() const;
  nlohmann::json to_json() const;
  static UnlearnConfig from_json(const nlohmann::json& j);
};

struct TrajectoryPoint {
  std::int64_t step = 0;
  double ua = 0.0;
  double ra = 0.0;
};

struct UnlearnResult {
  zoo::Params params;
  std::int64_t steps_used = 0;
  std::vector<TrajectoryPoint> trajectory;
  double wall_time = 0.0;  // seconds
  bool diverged = false;
};

// Called with every set of example ids an algorithm reads to compute an
// update, before it reads them. Trajectory evaluation is not reported.
using AccessHook = std::function<void(std::span<const std::int64_t> ids)>;

struct UnlearnInputs {
  const zoo::ModelSpec& spec;
  const data::Dataset& train;  // holds both the forget and retain examples
  const data::DataSplit& split;
  AccessHook on_access;
};

UnlearnResult ga_unlearn(const zoo::Params& params, const UnlearnInputs& in, const UnlearnConfig& cfg);
UnlearnResult finetune_unlearn(const zoo::Params& params, const UnlearnInputs& in, const UnlearnConfig& cfg);
UnlearnResult grad_tau_unlearn(const zoo::Params& params, const UnlearnInputs& in, const UnlearnConfig& cfg);
UnlearnResult kl_anchor_unlearn(const zoo::Params& params, const zoo::Params& ref_params, const UnlearnInputs& in,
                                const UnlearnConfig& cfg);
UnlearnResult fisher_forget(const zoo::Params& params, const UnlearnInputs& in, const UnlearnConfig& cfg);
UnlearnResult scrub_unlearn(const zoo::Params& teacher, const UnlearnInputs& in, const UnlearnConfig& cfg);
// Student starting somewhere other than the teacher. From student == teacher
// the forget-side KL has zero gradient until a min phase moves the student.
UnlearnResult scrub_unlearn(const zoo::Params& student, const zoo::Params& teacher, const UnlearnInputs& in,
                            const UnlearnConfig& cfg);
// Fresh init from cfg.seed, trained on the retain set only. `original`, when
// given, supplies the step-0 trajectory point.
UnlearnResult retrain(const UnlearnInputs& in, const UnlearnConfig& cfg, const zoo::Params* original = nullptr);

// Dispatches on cfg.algorithm; kl_anchor and scrub anchor to `params`.
UnlearnResult run(const zoo::Params& params, const UnlearnInputs& in, const UnlearnConfig& cfg);

// Mean over `rows` of the squared per-example gradient, per coordinate.
std::vector<double> diagonal_fisher(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds,
                                    std::span<const std::int64_t> rows);

// First logged step with UA <= target_ua.
std::optional<std::int64_t> steps_to_target(const UnlearnResult& result, double target_ua);

// Writes <root>/<hash>/{params.grkf, params.json, trajectory.csv} and returns
// the run directory. The hash covers spec, config and `context` (for example
// which checkpoint the run started from).
std::filesystem::path save_result(const UnlearnResult& result, const zoo::ModelSpec& spec, const UnlearnConfig& cfg,
                                  const std::filesystem::path& root, const nlohmann::json& context = nullptr);
std::vector<TrajectoryPoint> read_unlearn_trajectory(const std::filesystem::path& path);

}  // namespace gf::unlearn
