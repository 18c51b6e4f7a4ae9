#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "grokforget/data.hpp"
#include "grokforget/metrics.hpp"
#include "grokforget/model.hpp"
#include "grokforget/train.hpp"
#include "grokforget/unlearn.hpp"

namespace gf::harness {

enum class DatasetKind { modular, toy_images, kv_qa };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::modular;
  // modular
  std::int64_t modulus = 97;
  data::ModularOp op = data::ModularOp::add;
  double train_fraction = 0.5;
  data::ModularEncoding encoding = data::ModularEncoding::one_hot;
  // toy_images
  std::int64_t classes = 10;
  std::int64_t per_class = 50;
  std::int64_t test_per_class = -1;
  data::ImageDims dims;
  double noise_sigma = 0.3;
  // kv_qa
  std::int64_t n_facts = 20;
  std::int64_t key_len = 2;
  std::int64_t value_len = 20;
  std::int64_t vocab = 32;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static DatasetConfig from_json(const nlohmann::json& j);
};

// train and test from one generator; kv_qa uses the same facts for both.
data::TrainTest make_datasets(const DatasetConfig& cfg);

struct SplitConfig {
  data::SplitMode mode = data::SplitMode::random_global;
  std::vector<double> fractions{0.15};
  std::vector<std::int32_t> target_classes;
  data::LocalGrokLabel label_group = data::LocalGrokLabel::grokked;

  nlohmann::json to_json() const;
  static SplitConfig from_json(const nlohmann::json& j);
};

struct MetricsConfig {
  bool mia = true;
  bool grad = false;
  bool cka = false;
  bool lc = false;
  metrics::LocalComplexityConfig lc_cfg;
  std::vector<double> fgsm;
  double target_ua = 0.5;

  nlohmann::json to_json() const;
  static MetricsConfig from_json(const nlohmann::json& j);
};

struct AlgorithmEntry {
  std::string name;  // grid label; defaults to the algorithm name
  unlearn::UnlearnConfig cfg;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  zoo::ModelSpec model;
  train::TrainConfig train;
  train::GrokThresholds grok;
  SplitConfig split;
  // "pre", "grok", "final", or "step:<n>".
  std::vector<std::string> checkpoints{"pre", "grok"};
  std::vector<AlgorithmEntry> algorithms;
  std::vector<std::uint64_t> seeds;
  MetricsConfig metrics;
  bool checkpoint_sweep = false;
  std::int64_t workers = 1;
  std::filesystem::path output_dir;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  // Covers every field that affects results; workers and output_dir excluded.
  std::string hash() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

enum class Status { ok, diverged, skipped, failed };
std::string to_string(Status s);
Status status_from_string(const std::string& s);

struct RunRecord {
  std::string config_hash;
  std::string checkpoint;
  std::string algorithm;
  double fraction = 0.0;
  std::uint64_t seed = 0;
  std::optional<std::int64_t> checkpoint_step;
  Status status = Status::ok;
  std::string message;
  double wall_time = 0.0;
  metrics::MetricsReport report;
  std::vector<unlearn::TrajectoryPoint> trajectory;

  std::string key() const;
  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
};

struct SweepPoint {
  std::string config_hash;
  std::uint64_t seed = 0;
  double fraction = 0.0;
  std::int64_t step = 0;
  double ua = 0.0;
  double ra = 0.0;
  double ta = 0.0;

  std::string key() const;
  nlohmann::json to_json() const;
  static SweepPoint from_json(const nlohmann::json& j);
};

/// Append-only JSON-lines log. A torn final line left by a killed writer is
/// dropped on open; records already present are never written twice.
class ResultsStore {
 public:
  explicit ResultsStore(std::filesystem::path dir);

  const std::filesystem::path& dir() const { return dir_; }
  bool has(const std::string& key) const;
  // Returns false (and writes nothing) when the key is already present.
  bool append(const RunRecord& r);
  bool append(const SweepPoint& p);

  std::vector<RunRecord> records() const;
  std::vector<SweepPoint> sweep_points() const;

 private:
  void write_line(const nlohmann::json& j);

  std::filesystem::path dir_;
  std::filesystem::path log_path_;
  mutable std::mutex mu_;
  std::map<std::string, std::size_t> index_;
  std::vector<RunRecord> records_;
  std::vector<SweepPoint> sweep_;
};

struct ExperimentHooks {
  // Runs after each record is durably appended.
  std::function<void(const RunRecord&)> after_record;
};

struct ExperimentStats {
  std::int64_t cells = 0;
  std::int64_t executed = 0;
  std::int64_t reused = 0;
  std::int64_t skipped = 0;
  std::int64_t failed = 0;
  std::int64_t trainings_run = 0;
};

ExperimentStats run_experiment(const ExperimentConfig& cfg, ResultsStore& store, const ExperimentHooks& hooks = {});

struct SummaryRow {
  std::vector<std::string> group;  // values of the group_by axes
  std::int64_t count = 0;
  std::map<std::string, std::pair<double, double>> stats;  // metric -> (mean, population std)

  friend bool operator==(const SummaryRow&, const SummaryRow&) = default;
};

// Axes: checkpoint, algorithm, fraction, seed. Skipped and failed records
// are left out. Accuracies are in percent.
std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records, const std::vector<std::string>& group_by);
std::vector<std::string> summary_metrics();

enum class ReportKind { summary_table, efficiency_curves, checkpoint_sweep };
ReportKind report_kind_from_string(const std::string& s);
std::string to_string(ReportKind k);

// Writes <dir>/<kind>.csv and returns the path.
std::filesystem::path emit_report(const ResultsStore& store, ReportKind kind, const std::filesystem::path& dir);

// Full-precision flat export of the records; ingest reverses it.
void export_records_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path);
std::vector<RunRecord> ingest_records_csv(const std::filesystem::path& path);
std::vector<SummaryRow> ingest_summary_csv(const std::filesystem::path& path, std::size_t group_columns);

// Small CSV helpers shared with the CLI.
std::string format_double(double v);
std::vector<std::string> split_csv_line(const std::string& line);

// Training output for one seed, cached on disk under <output_dir>/train/<hash>.
struct TrainedRun {
  data::TrainTest data;
  train::TrajectoryLog log;
  train::CheckpointSet checkpoints;
  zoo::Params final_params;
  train::GrokkingReport grokking;
  std::filesystem::path dir;
  bool reused = false;
};

TrainedRun train_or_load(const ExperimentConfig& cfg, std::uint64_t seed);
// Resolves a selector against a trained run; empty when it does not apply.
std::optional<std::int64_t> resolve_checkpoint(const TrainedRun& run, const std::string& selector);
const zoo::Params& checkpoint_params(const TrainedRun& run, std::int64_t step);

}  // namespace gf::harness
