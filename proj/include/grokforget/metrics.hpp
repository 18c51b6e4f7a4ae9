#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "grokforget/data.hpp"
#include "grokforget/grad_vector.hpp"
#include "grokforget/model.hpp"

namespace gf::metrics {

/// Accuracies as fractions on the forget (ua), retain (ra) and test (ta) sets.
struct AccuracyTriple {
  double ua = 0.0;
  double ra = 0.0;
  double ta = 0.0;

  nlohmann::json to_json() const { return {{"ua", ua}, {"ra", ra}, {"ta", ta}}; }
};

AccuracyTriple ua_ra_ta(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& train,
                        const data::Dataset& test, const data::DataSplit& split);

// (UA_o - UA_u) / ((TA_o - TA_u)(RA_o - RA_u)) with accuracies in percent.
// Empty when either difference in the denominator is below 1e-9.
std::optional<double> ues(const AccuracyTriple& before, const AccuracyTriple& after);
std::optional<double> ues_percent(double ua_o, double ra_o, double ta_o, double ua_u, double ra_u, double ta_u);

struct MiaResult {
  double balanced_accuracy = 0.5;
  double auc = 0.5;
};

// Loss-threshold attack: an example is called a member when its loss is at
// most the threshold. All observed losses are tried as thresholds, plus one
// below every loss (predict nobody), so the best balanced accuracy is >= 0.5.
MiaResult mia_from_losses(std::span<const double> member_losses, std::span<const double> nonmember_losses);
MiaResult mia_score(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& train,
                    std::span<const std::int64_t> forget_ids, const data::Dataset& test,
                    std::span<const std::int64_t> test_ids);

// Per fact: k* is the shortest prefix (at least the full key) from which
// greedy decoding reproduces the rest of the answer; ES = 1 - k*/L, or 0
// when no prefix works.
std::vector<double> extraction_strength_per_example(const zoo::ModelSpec& spec, const zoo::Params& params,
                                                    const data::Dataset& qa, std::span<const std::int64_t> rows);
double extraction_strength(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& qa,
                           std::span<const std::int64_t> rows);
double extraction_strength(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& qa);

// Gradient of the mean loss over `rows`, accumulated in chunks.
GradVector mean_gradient(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds,
                         std::span<const std::int64_t> rows);
CosineResult grad_correlation(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& train,
                              const data::DataSplit& split);

// Linear CKA with column centring.
double cka(const Tensor& x, const Tensor& y);

struct CkaPairing {
  std::int64_t max_rows = 512;
  std::uint64_t seed = 0;
};

// CKA between penultimate representations of the forget and retain sets,
// each subsampled to min(|forget|, |retain|, max_rows) rows.
double representation_cka(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& train,
                          const data::DataSplit& split, const CkaPairing& pairing = {});

struct LocalComplexityConfig {
  std::optional<double> radius;  // default 0.05 * mean input norm
  std::optional<std::int64_t> frame_size;  // default min(input dim, 32)
  std::uint64_t seed = 0;
  std::int64_t max_points = 0;  // 0 = every point
};

// Per point: number of (layer, unit) pairs whose pre-activation sign at some
// cross-polytope vertex x +- r*e_k differs from the sign at x.
std::vector<double> local_complexity_per_point(const zoo::ModelSpec& spec, const zoo::Params& params,
                                               const Tensor& points, double radius,
                                               std::span<const std::vector<double>> frame);
double local_complexity(const zoo::ModelSpec& spec, const zoo::Params& params, const Tensor& points,
                        const LocalComplexityConfig& cfg = {});

struct LocalComplexityReport {
  double retain = 0.0;
  double test = 0.0;
  double forget = 0.0;
};

LocalComplexityReport local_complexity_by_split(const zoo::ModelSpec& spec, const zoo::Params& params,
                                                const data::Dataset& train, const data::Dataset& test,
                                                const data::DataSplit& split, const LocalComplexityConfig& cfg = {});

// P orthonormal directions in R^dim from a seeded Gaussian draw.
std::vector<std::vector<double>> random_orthonormal_frame(std::int64_t dim, std::int64_t count, std::uint64_t seed);

// Adversarial accuracy per epsilon with x_adv = clip(x + eps * sign(grad_x L)).
std::vector<std::pair<double, double>> fgsm_robustness(const zoo::ModelSpec& spec, const zoo::Params& params,
                                                       const data::Dataset& test, std::span<const std::int64_t> rows,
                                                       std::span<const double> epsilons);
Tensor fgsm_perturb(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds,
                    std::span<const std::int64_t> rows, double epsilon);

inline const std::vector<double> kPaperFgsmEpsilons{0.05, 0.10, 0.15, 0.20};

struct MetricsReport {
  AccuracyTriple before;
  AccuracyTriple after;
  std::optional<double> ues;
  std::optional<MiaResult> mia;
  std::optional<double> es_retain;
  std::optional<double> es_unlearn;
  std::optional<CosineResult> grad;
  std::optional<double> cka;
  std::optional<LocalComplexityReport> lc;
  std::vector<std::pair<double, double>> fgsm;
  std::optional<std::int64_t> steps_to_target;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  static std::vector<std::string> csv_columns();
  std::vector<std::string> csv_row() const;
};

}  // namespace gf::metrics
