#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include "grokforget/checkpoint.hpp"
#include "grokforget/config_hash.hpp"
#include "grokforget/errors.hpp"
#include "grokforget/harness.hpp"
#include "grokforget/objective.hpp"

namespace gf::harness {
namespace {

constexpr std::uint64_t kInitStream = 0x696e6974;
constexpr std::uint64_t kTrainStream = 0x747261696e;

std::uint64_t text_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string train_key(const ExperimentConfig& cfg, std::uint64_t seed) {
  return config_hash({{"dataset", cfg.dataset.to_json()},
                      {"model", cfg.model.to_json()},
                      {"train", cfg.train.to_json()},
                      {"seed", seed}});
}

std::vector<data::LocalGrokLabel> local_labels(const train::TrajectoryLog& log, std::int64_t n_train,
                                               std::int64_t first_id) {
  std::vector<data::LocalGrokLabel> out(static_cast<std::size_t>(n_train), data::LocalGrokLabel::ambiguous);
  if (log.loss_steps.size() < 2) return out;
  const auto labels = train::classify_local_grokking(log, train::default_candidate_step(log));
  for (std::size_t j = 0; j < labels.size(); ++j)
    out[static_cast<std::size_t>(log.tracked_ids[j] - first_id)] = labels[j];
  return out;
}

data::LocalGrokLabel label_from_string(const std::string& s) {
  if (s == "grokked") return data::LocalGrokLabel::grokked;
  if (s == "ungrokked") return data::LocalGrokLabel::ungrokked;
  return data::LocalGrokLabel::ambiguous;
}

struct Cell {
  std::uint64_t seed;
  double fraction;
  std::string checkpoint;
  const AlgorithmEntry* algo;
  const TrainedRun* run;
  const data::DataSplit* split;
};

// Numeric metrics per record, keyed by summary name; absent metrics omitted.
std::map<std::string, double> metric_values(const RunRecord& r) {
  const auto& m = r.report;
  std::map<std::string, double> v{{"ua", 100.0 * m.after.ua},
                                  {"ra", 100.0 * m.after.ra},
                                  {"ta", 100.0 * m.after.ta},
                                  {"ua_before", 100.0 * m.before.ua},
                                  {"ra_before", 100.0 * m.before.ra},
                                  {"ta_before", 100.0 * m.before.ta},
                                  {"wall_time", r.wall_time}};
  if (m.ues) v["ues"] = *m.ues;
  if (m.mia) {
    v["mia_balanced_accuracy"] = m.mia->balanced_accuracy;
    v["mia_auc"] = m.mia->auc;
  }
  if (m.es_retain) v["es_retain"] = *m.es_retain;
  if (m.es_unlearn) v["es_unlearn"] = *m.es_unlearn;
  if (m.grad) v["grad_cosine"] = m.grad->cosine;
  if (m.cka) v["cka"] = *m.cka;
  if (m.lc) {
    v["lc_retain"] = m.lc->retain;
    v["lc_test"] = m.lc->test;
    v["lc_forget"] = m.lc->forget;
  }
  if (m.steps_to_target) v["steps_to_target"] = static_cast<double>(*m.steps_to_target);
  return v;
}

std::string axis_value(const RunRecord& r, const std::string& axis) {
  if (axis == "checkpoint") return r.checkpoint;
  if (axis == "algorithm") return r.algorithm;
  if (axis == "fraction") return format_double(r.fraction);
  if (axis == "seed") return std::to_string(r.seed);
  throw ValidationError("unknown axis '" + axis + "'");
}

}  // namespace

TrainedRun train_or_load(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainedRun run;
  run.data = make_datasets(cfg.dataset);
  const bool persist = !cfg.output_dir.empty();
  if (persist) run.dir = cfg.output_dir / "train" / train_key(cfg, seed);
  const auto done_path = run.dir / "done.json";
  std::vector<data::LocalGrokLabel> labels;
  if (persist && std::filesystem::exists(done_path)) {
    std::ifstream in(done_path);
    const auto done = nlohmann::json::parse(in);
    run.log = train::read_trajectory_csv(run.dir / "trajectory.csv");
    for (auto step : done.at("checkpoints").get<std::vector<std::int64_t>>())
      run.checkpoints.by_step.emplace(step, zoo::load_checkpoint(run.dir / "ckpt" / ("step_" + std::to_string(step))).params);
    if (!done.at("fit_step").is_null()) run.checkpoints.fit_step = done["fit_step"].get<std::int64_t>();
    run.final_params = zoo::load_checkpoint(run.dir / "final").params;
    run.log.loss_steps.clear();
    run.reused = true;
  } else {
    if (persist) std::filesystem::create_directories(run.dir);
    auto params = zoo::build_model(cfg.model, Rng(seed, kInitStream));
    auto out_dir = persist ? std::optional<std::filesystem::path>(run.dir) : std::nullopt;
    auto result = train::train(cfg.model, std::move(params), run.data.train, run.data.test, cfg.train,
                               Rng(seed, kTrainStream), out_dir);
    run.log = std::move(result.log);
    run.checkpoints = std::move(result.checkpoints);
    run.final_params = std::move(result.final_params);
    if (persist) {
      zoo::CheckpointMeta meta;
      meta.spec = cfg.model;
      meta.seed = seed;
      meta.step = result.steps_done;
      zoo::save_checkpoint(run.dir / "final", run.final_params, meta);
      nlohmann::json done{{"checkpoints", run.checkpoints.steps()}, {"steps_done", result.steps_done}};
      done["fit_step"] = run.checkpoints.fit_step ? nlohmann::json(*run.checkpoints.fit_step) : nlohmann::json(nullptr);
      nlohmann::json lab = nlohmann::json::array();
      for (auto l : local_labels(run.log, run.data.train.size(), run.data.train.first_id)) lab.push_back(data::to_string(l));
      done["local_labels"] = lab;
      // Written last: its presence marks the run complete.
      const auto tmp = run.dir / "done.json.tmp";
      std::ofstream(tmp) << done.dump();
      std::filesystem::rename(tmp, done_path);
    }
  }
  const auto steps = run.checkpoints.steps();
  run.grokking = train::detect_grokking(run.log, cfg.grok, steps);
  return run;
}

std::optional<std::int64_t> resolve_checkpoint(const TrainedRun& run, const std::string& selector) {
  if (selector == "pre") return run.grokking.pre_checkpoint;
  if (selector == "grok") return run.grokking.grok_checkpoint;
  if (selector == "final") return run.log.evals.empty() ? 0 : run.log.evals.back().step;
  if (selector.rfind("step:", 0) == 0) {
    const auto step = std::stoll(selector.substr(5));
    if (run.checkpoints.by_step.count(step)) return step;
    return std::nullopt;
  }
  throw ValidationError("bad checkpoint selector '" + selector + "'");
}

const zoo::Params& checkpoint_params(const TrainedRun& run, std::int64_t step) {
  if (run.checkpoints.by_step.count(step)) return run.checkpoints.at(step);
  if (!run.log.evals.empty() && step == run.log.evals.back().step) return run.final_params;
  throw ValidationError("no checkpoint at step " + std::to_string(step));
}

namespace {

std::vector<data::LocalGrokLabel> labels_for(const ExperimentConfig& cfg, const TrainedRun& run) {
  if (!run.dir.empty() && std::filesystem::exists(run.dir / "done.json")) {
    std::ifstream in(run.dir / "done.json");
    const auto done = nlohmann::json::parse(in);
    std::vector<data::LocalGrokLabel> out;
    for (const auto& s : done.value("local_labels", nlohmann::json::array())) out.push_back(label_from_string(s));
    if (static_cast<std::int64_t>(out.size()) == run.data.train.size()) return out;
  }
  (void)cfg;
  return local_labels(run.log, run.data.train.size(), run.data.train.first_id);
}

RunRecord execute_cell(const ExperimentConfig& cfg, const std::string& hash, const Cell& c) {
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.config_hash = hash;
  rec.checkpoint = c.checkpoint;
  rec.algorithm = c.algo->name;
  rec.fraction = c.fraction;
  rec.seed = c.seed;
  const auto step = resolve_checkpoint(*c.run, c.checkpoint);
  if (!step) {
    rec.status = Status::skipped;
    rec.message = "checkpoint '" + c.checkpoint + "' not available in this run";
    return rec;
  }
  rec.checkpoint_step = step;
  try {
    const auto& start = checkpoint_params(*c.run, *step);
    const auto& tr = c.run->data.train;
    const auto& te = c.run->data.test;
    const auto& split = *c.split;
    unlearn::UnlearnConfig ucfg = c.algo->cfg;
    ucfg.seed = hash_combine(c.seed, text_hash(c.algo->name + "|" + format_double(c.fraction)));
    const unlearn::UnlearnInputs in{cfg.model, tr, split, nullptr};
    const auto result = unlearn::run(start, in, ucfg);

    auto& m = rec.report;
    m.before = metrics::ua_ra_ta(cfg.model, start, tr, te, split);
    m.after = metrics::ua_ra_ta(cfg.model, result.params, tr, te, split);
    m.ues = metrics::ues(m.before, m.after);
    const bool sequence = tr.kind == data::Kind::sequence_qa;
    if (cfg.metrics.mia && !sequence)
      m.mia = metrics::mia_score(cfg.model, result.params, tr, split.forget_ids, te, split.test_ids);
    if (sequence) {
      m.es_retain = metrics::extraction_strength(cfg.model, result.params, tr, tr.rows_of(split.retain_ids));
      m.es_unlearn = metrics::extraction_strength(cfg.model, result.params, tr, tr.rows_of(split.forget_ids));
    }
    if (cfg.metrics.grad) m.grad = metrics::grad_correlation(cfg.model, start, tr, split);
    if (cfg.metrics.cka) m.cka = metrics::representation_cka(cfg.model, start, tr, split, {512, c.seed});
    if (cfg.metrics.lc) m.lc = metrics::local_complexity_by_split(cfg.model, start, tr, te, split, cfg.metrics.lc_cfg);
    if (!cfg.metrics.fgsm.empty() && !sequence && !tr.token_input)
      m.fgsm = metrics::fgsm_robustness(cfg.model, result.params, te, te.rows_of(split.test_ids), cfg.metrics.fgsm);
    m.steps_to_target = unlearn::steps_to_target(result, cfg.metrics.target_ua);
    rec.trajectory = result.trajectory;
    rec.status = result.diverged ? Status::diverged : Status::ok;
    if (result.diverged) rec.message = "non-finite update; metrics are for the last finite parameters";
  } catch (const std::exception& e) {
    rec.status = Status::failed;
    rec.message = e.what();
  }
  rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

}  // namespace

ExperimentStats run_experiment(const ExperimentConfig& cfg, ResultsStore& store, const ExperimentHooks& hooks) {
  cfg.validate();
  const auto hash = cfg.hash();
  ExperimentStats stats;
  auto record = [&](const RunRecord& r) {
    if (store.append(r) && hooks.after_record) hooks.after_record(r);
    if (r.status == Status::skipped) ++stats.skipped;
    if (r.status == Status::failed) ++stats.failed;
  };

  for (auto seed : cfg.seeds) {
    // Keys for every cell of this seed, in grid order.
    std::vector<std::tuple<double, std::string, const AlgorithmEntry*>> todo;
    for (double f : cfg.split.fractions)
      for (const auto& ck : cfg.checkpoints)
        for (const auto& a : cfg.algorithms) {
          ++stats.cells;
          RunRecord probe;
          probe.config_hash = hash;
          probe.checkpoint = ck;
          probe.algorithm = a.name;
          probe.fraction = f;
          probe.seed = seed;
          if (store.has(probe.key())) {
            ++stats.reused;
          } else {
            todo.emplace_back(f, ck, &a);
          }
        }
    if (todo.empty() && !cfg.checkpoint_sweep) continue;

    std::optional<TrainedRun> run;
    std::string train_error;
    try {
      run = train_or_load(cfg, seed);
      if (!run->reused) ++stats.trainings_run;
    } catch (const std::exception& e) {
      train_error = e.what();
    }
    if (!run) {
      for (const auto& [f, ck, a] : todo) {
        RunRecord r;
        r.config_hash = hash;
        r.checkpoint = ck;
        r.algorithm = a->name;
        r.fraction = f;
        r.seed = seed;
        r.status = Status::failed;
        r.message = "training failed: " + train_error;
        record(r);
        ++stats.executed;
      }
      continue;
    }

    std::map<double, data::DataSplit> splits;
    const auto aux = cfg.split.mode == data::SplitMode::by_local_grok_label ? labels_for(cfg, *run)
                                                                             : std::vector<data::LocalGrokLabel>{};
    for (double f : cfg.split.fractions) {
      data::SplitSpec spec;
      spec.mode = cfg.split.mode;
      spec.forget_fraction = f;
      spec.target_classes = cfg.split.target_classes;
      spec.label_group = cfg.split.label_group;
      spec.seed = hash_combine(seed, text_hash(format_double(f)));
      splits[f] = data::make_split(run->data.train, spec, aux, &run->data.test);
    }

    if (cfg.checkpoint_sweep) {
      for (double f : cfg.split.fractions)
        for (auto step : run->checkpoints.steps()) {
          SweepPoint p;
          p.config_hash = hash;
          p.seed = seed;
          p.fraction = f;
          p.step = step;
          if (store.has(p.key())) continue;
          const auto t = metrics::ua_ra_ta(cfg.model, run->checkpoints.at(step), run->data.train, run->data.test, splits[f]);
          p.ua = t.ua;
          p.ra = t.ra;
          p.ta = t.ta;
          store.append(p);
        }
    }

    std::vector<Cell> cells;
    for (const auto& [f, ck, a] : todo) cells.push_back({seed, f, ck, a, &*run, &splits.at(f)});
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    auto worker = [&] {
      for (;;) {
        const auto i = next.fetch_add(1);
        if (i >= cells.size()) return;
        auto r = execute_cell(cfg, hash, cells[i]);
        std::lock_guard lock(mu);
        record(r);
        ++stats.executed;
      }
    };
    const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), cells.size());
    if (n_threads <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }
  }
  return stats;
}

std::vector<std::string> summary_metrics() {
  return {"ta", "ra", "ua", "ues", "ua_before", "ra_before", "ta_before", "mia_balanced_accuracy", "mia_auc",
          "es_retain", "es_unlearn", "grad_cosine", "cka", "lc_retain", "lc_test", "lc_forget", "steps_to_target",
          "wall_time"};
}

std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records, const std::vector<std::string>& group_by) {
  std::map<std::vector<std::string>, std::map<std::string, std::vector<double>>> groups;
  std::map<std::vector<std::string>, std::int64_t> counts;
  for (const auto& r : records) {
    if (r.status == Status::skipped || r.status == Status::failed) continue;
    std::vector<std::string> key;
    for (const auto& a : group_by) key.push_back(axis_value(r, a));
    ++counts[key];
    auto& g = groups[key];
    for (const auto& [name, v] : metric_values(r)) g[name].push_back(v);
  }
  std::vector<SummaryRow> out;
  for (const auto& [key, metrics_] : groups) {
    SummaryRow row;
    row.group = key;
    row.count = counts[key];
    for (const auto& [name, vals] : metrics_) {
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      double var = 0.0;
      for (double v : vals) var += (v - mean) * (v - mean);
      var /= static_cast<double>(vals.size());
      row.stats[name] = {mean, std::sqrt(var)};
    }
    out.push_back(std::move(row));
  }
  return out;
}

ReportKind report_kind_from_string(const std::string& s) {
  if (s == "summary_table") return ReportKind::summary_table;
  if (s == "efficiency_curves") return ReportKind::efficiency_curves;
  if (s == "checkpoint_sweep") return ReportKind::checkpoint_sweep;
  throw ValidationError("unknown report kind '" + s + "'");
}

std::string to_string(ReportKind k) {
  switch (k) {
    case ReportKind::summary_table: return "summary_table";
    case ReportKind::efficiency_curves: return "efficiency_curves";
    case ReportKind::checkpoint_sweep: return "checkpoint_sweep";
  }
  return "?";
}

namespace {

const std::vector<std::string> kSummaryAxes{"checkpoint", "algorithm", "fraction"};
const std::vector<std::string> kSummaryMetrics{"ta", "ra", "ua", "ues"};

}  // namespace

std::filesystem::path emit_report(const ResultsStore& store, ReportKind kind, const std::filesystem::path& dir) {
  const auto records = store.records();
  const auto sweep = store.sweep_points();
  if (records.empty() && sweep.empty()) throw ValidationError("results store is empty");
  std::filesystem::create_directories(dir);
  const auto path = dir / (to_string(kind) + ".csv");
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  switch (kind) {
    case ReportKind::summary_table: {
      for (const auto& a : kSummaryAxes) out << a << ',';
      for (std::size_t i = 0; i < kSummaryMetrics.size(); ++i)
        out << kSummaryMetrics[i] << "_mean," << kSummaryMetrics[i] << "_std" << (i + 1 < kSummaryMetrics.size() ? "," : "\n");
      for (const auto& row : summarize(records, kSummaryAxes)) {
        for (const auto& g : row.group) out << g << ',';
        for (std::size_t i = 0; i < kSummaryMetrics.size(); ++i) {
          auto it = row.stats.find(kSummaryMetrics[i]);
          if (it != row.stats.end()) out << format_double(it->second.first) << ',' << format_double(it->second.second);
          else out << ',';
          out << (i + 1 < kSummaryMetrics.size() ? "," : "\n");
        }
      }
      break;
    }
    case ReportKind::efficiency_curves:
      out << "checkpoint,algorithm,fraction,seed,step,ua,ra\n";
      for (const auto& r : records)
        for (const auto& p : r.trajectory)
          out << r.checkpoint << ',' << r.algorithm << ',' << format_double(r.fraction) << ',' << r.seed << ','
              << p.step << ',' << format_double(p.ua) << ',' << format_double(p.ra) << '\n';
      break;
    case ReportKind::checkpoint_sweep:
      out << "seed,fraction,step,ua,ra,ta\n";
      for (const auto& p : sweep)
        out << p.seed << ',' << format_double(p.fraction) << ',' << p.step << ',' << format_double(p.ua) << ','
            << format_double(p.ra) << ',' << format_double(p.ta) << '\n';
      break;
  }
  if (!out) throw FormatError("failed writing " + path.string());
  return path;
}

std::vector<SummaryRow> ingest_summary_csv(const std::filesystem::path& path, std::size_t group_columns) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty summary file");
  const auto header = split_csv_line(line);
  if (header.size() < group_columns || (header.size() - group_columns) % 2 != 0)
    throw FormatError("unexpected summary columns in " + path.string());
  std::vector<SummaryRow> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw FormatError("wrong field count in " + path.string());
    SummaryRow row;
    row.group.assign(f.begin(), f.begin() + static_cast<std::ptrdiff_t>(group_columns));
    for (std::size_t i = group_columns; i < f.size(); i += 2) {
      if (f[i].empty()) continue;
      const auto name = header[i].substr(0, header[i].size() - 5);  // strip "_mean"
      row.stats[name] = {std::strtod(f[i].c_str(), nullptr), std::strtod(f[i + 1].c_str(), nullptr)};
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace gf::harness
