#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "grokforget/grad_vector.hpp"
#include "grokforget/rng.hpp"

namespace gf::modsim {

/// Synthetic gradients over m equal coordinate blocks ("modules").
struct ModularModelCfg {
  std::int64_t m = 64;
  std::int64_t d = 8192;
  double p = 0.5;      // activation probability per module
  double rho = 0.9;    // within-module correlation
  double sigma = 1.0;  // per-module gradient scale
  std::int64_t n_pairs = 2000;
  std::uint64_t seed = 0;

  std::int64_t block() const { return d / m; }
  void validate() const;
  nlohmann::json to_json() const;
  static ModularModelCfg from_json(const nlohmann::json& j);
};

struct SimResult {
  double empirical_corr_mean = 0.0;
  double standard_error = 0.0;
  double predicted = 0.0;  // p * rho
  double inner_product_mean = 0.0;
  double inner_product_se = 0.0;
  double predicted_inner_product = 0.0;  // p^2 rho sigma^2 d
  double norm_sq_mean = 0.0;
  double norm_sq_se = 0.0;
  double predicted_norm_sq = 0.0;  // p sigma^2 d
  std::int64_t resampled = 0;      // all-inactive draws that were redrawn

  nlohmann::json to_json() const;
};

// frame[i] is a unit vector of length d supported on block i only.
std::vector<std::vector<double>> sample_module_frame(const ModularModelCfg& cfg, Rng& rng);

// One gradient; `active_out`, when given, receives the active module mask.
std::vector<double> sample_gradient(const ModularModelCfg& cfg, std::span<const std::vector<double>> frame, Rng& rng,
                                    std::vector<bool>* active_out = nullptr);
GradVector to_grad_vector(std::span<const double> g);

SimResult estimate_correlation(const ModularModelCfg& cfg);

// Cosine between the mean gradients of two disjoint sets, repeated n_pairs
// times with fresh sets.
SimResult aggregate_correlation(const ModularModelCfg& cfg, std::int64_t forget_size, std::int64_t retain_size);

struct SweepRow {
  ModularModelCfg cfg;
  SimResult result;
};

std::vector<SweepRow> sweep(const ModularModelCfg& base, std::span<const double> ps, std::span<const double> rhos);
// Columns: m,d,p,rho,n_pairs,empirical,predicted,stderr.
void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path);

}  // namespace gf::modsim
