#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "grokforget/checkpoint.hpp"
#include "grokforget/objective.hpp"
#include "grokforget/ops.hpp"
#include "grokforget/train.hpp"

namespace gf::train {

void TrainConfig::validate() const {
  opt.validate();
  if (steps < 1) throw ValidationError("training needs at least one step");
  if (batch_size < 1) throw ValidationError("batch_size must be positive");
  if (eval_every < 1 || checkpoint_every < 1) throw ValidationError("eval/checkpoint cadence must be positive");
  if (early_stop_evals < 1) throw ValidationError("early_stop_evals must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j{{"opt", opt.to_json()},
                   {"steps", steps},
                   {"batch_size", batch_size},
                   {"eval_every", eval_every},
                   {"checkpoint_every", checkpoint_every},
                   {"fit_threshold", fit_threshold},
                   {"early_stop_evals", early_stop_evals},
                   {"loss_track_limit", loss_track_limit}};
  j["early_stop_val_acc"] = early_stop_val_acc ? nlohmann::json(*early_stop_val_acc) : nlohmann::json(nullptr);
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("opt")) c.opt = OptimizerConfig::from_json(j.at("opt"));
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.fit_threshold = j.value("fit_threshold", c.fit_threshold);
  c.early_stop_evals = j.value("early_stop_evals", c.early_stop_evals);
  c.loss_track_limit = j.value("loss_track_limit", c.loss_track_limit);
  if (j.contains("early_stop_val_acc") && !j.at("early_stop_val_acc").is_null()) {
    c.early_stop_val_acc = j.at("early_stop_val_acc").get<double>();
  }
  c.validate();
  return c;
}

const EvalRecord* TrajectoryLog::at_step(std::int64_t step) const {
  auto it = std::lower_bound(evals.begin(), evals.end(), step, [](const EvalRecord& r, std::int64_t s) { return r.step < s; });
  return it != evals.end() && it->step == step ? &*it : nullptr;
}

std::vector<std::int64_t> CheckpointSet::steps() const {
  std::vector<std::int64_t> s;
  for (const auto& [k, _] : by_step) s.push_back(k);
  return s;
}

const zoo::Params& CheckpointSet::at(std::int64_t step) const {
  auto it = by_step.find(step);
  if (it == by_step.end()) throw ValidationError("no checkpoint at step " + std::to_string(step));
  return it->second;
}

void write_trajectory_csv(const TrajectoryLog& log, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f.precision(17);
  f << "step,split,metric,value\n";
  for (const auto& r : log.evals) {
    f << r.step << ",train,acc," << r.train_acc << '\n';
    f << r.step << ",train,loss," << r.train_loss << '\n';
    f << r.step << ",val,acc," << r.val_acc << '\n';
    f << r.step << ",val,loss," << r.val_loss << '\n';
  }
}

TrajectoryLog read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot read " + path.string());
  std::map<std::int64_t, EvalRecord> recs;
  std::string line;
  std::getline(f, line);
  if (line != "step,split,metric,value") throw FormatError("unexpected trajectory header");
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string step_s, split, metric, value_s;
    std::getline(ls, step_s, ',');
    std::getline(ls, split, ',');
    std::getline(ls, metric, ',');
    std::getline(ls, value_s);
    const auto step = std::stoll(step_s);
    const double v = std::stod(value_s);
    auto& r = recs[step];
    r.step = step;
    if (split == "train" && metric == "acc") r.train_acc = v;
    else if (split == "train" && metric == "loss") r.train_loss = v;
    else if (split == "val" && metric == "acc") r.val_acc = v;
    else if (split == "val" && metric == "loss") r.val_loss = v;
    else throw FormatError("unknown trajectory field " + split + "/" + metric);
  }
  TrajectoryLog log;
  for (auto& [_, r] : recs) log.evals.push_back(r);
  return log;
}

namespace {

struct SetEval {
  double acc = 0.0;
  double loss = 0.0;
  std::vector<double> losses;
};

SetEval evaluate(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds) {
  const auto rows = all_rows(ds);
  SetEval e;
  const auto correct = per_example_correct(spec, params, ds, rows);
  e.losses = per_example_loss(spec, params, ds, rows);
  std::int64_t hits = 0;
  for (bool c : correct) hits += c;
  e.acc = static_cast<double>(hits) / static_cast<double>(rows.size());
  double s = 0.0;
  for (double l : e.losses) s += l;
  e.loss = s / static_cast<double>(rows.size());
  return e;
}

}  // namespace

TrainResult train(const zoo::ModelSpec& spec, zoo::Params params, const data::Dataset& train_set,
                  const data::Dataset& val_set, const TrainConfig& cfg, Rng rng,
                  const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  if (train_set.size() < 1) throw ValidationError("empty training set");
  if (cfg.batch_size > train_set.size()) throw ValidationError("batch_size exceeds training set size");
  if (val_set.size() < 1) throw ValidationError("empty validation set");

  auto result = std::make_shared<TrainResult>();
  auto& log = result->log;
  auto& ckpts = result->checkpoints;

  Rng batch_rng = rng.fork(0x62617463);
  Rng track_rng = rng.fork(0x747261);
  std::vector<std::int64_t> tracked_rows;
  if (train_set.size() <= cfg.loss_track_limit) {
    tracked_rows = all_rows(train_set);
  } else {
    tracked_rows = track_rng.sample_without_replacement(train_set.size(), cfg.loss_track_limit);
    std::sort(tracked_rows.begin(), tracked_rows.end());
  }
  for (auto r : tracked_rows) log.tracked_ids.push_back(train_set.first_id + r);

  Optimizer opt(cfg.opt, params.total_count());
  const auto layout = params.layout_ptr();
  std::set<std::int64_t> pinned;  // cadence and t_fit checkpoints
  std::optional<std::int64_t> best_slot;
  double best_val = -1.0;
  std::int64_t streak = 0;

  auto persist = [&](std::int64_t step, const zoo::Params& p) {
    if (!out_dir) return;
    zoo::CheckpointMeta meta;
    meta.spec = spec;
    meta.seed = rng.seed();
    meta.step = step;
    if (const auto* r = log.at_step(step)) {
      meta.trajectory_summary = {{"train_acc", r->train_acc}, {"val_acc", r->val_acc}, {"train_loss", r->train_loss}, {"val_loss", r->val_loss}};
    }
    zoo::save_checkpoint(*out_dir / "ckpt" / ("step_" + std::to_string(step)), p, meta);
  };

  // Returns true when training should stop early.
  auto do_eval = [&](std::int64_t step) {
    const auto tr = evaluate(spec, params, train_set);
    const auto va = evaluate(spec, params, val_set);
    log.evals.push_back(EvalRecord{step, tr.acc, va.acc, tr.loss, va.loss});
    log.loss_steps.push_back(step);
    std::vector<float> row;
    row.reserve(tracked_rows.size());
    for (auto r : tracked_rows) row.push_back(static_cast<float>(tr.losses[static_cast<std::size_t>(r)]));
    log.per_example_loss.push_back(std::move(row));

    if (!ckpts.fit_step && tr.acc >= cfg.fit_threshold) {
      ckpts.fit_step = step;
      ckpts.by_step.insert_or_assign(step, params);
      pinned.insert(step);
      persist(step, params);
    }
    // Rolling best-validation checkpoint, frozen once the fit point is seen
    // so the pre-transition optimum stays available.
    if (!ckpts.fit_step || step == *ckpts.fit_step) {
      if (va.acc > best_val) {
        best_val = va.acc;
        if (best_slot && !pinned.count(*best_slot)) ckpts.by_step.erase(*best_slot);
        best_slot = step;
        if (!ckpts.by_step.count(step)) {
          ckpts.by_step.emplace(step, params);
          persist(step, params);
        }
      }
    }
    if (cfg.early_stop_val_acc) {
      streak = va.acc >= *cfg.early_stop_val_acc ? streak + 1 : 0;
      return streak >= cfg.early_stop_evals;
    }
    return false;
  };

  auto checkpoint_cadence = [&](std::int64_t step) {
    if (step % cfg.checkpoint_every != 0) return;
    ckpts.by_step.insert_or_assign(step, params);
    pinned.insert(step);
    persist(step, params);
  };

  checkpoint_cadence(0);
  bool stop = do_eval(0);
  std::int64_t step = 0;
  std::vector<std::int64_t> batch(static_cast<std::size_t>(cfg.batch_size));
  try {
    while (!stop && step < cfg.steps) {
      for (auto& b : batch) b = static_cast<std::int64_t>(batch_rng.below(static_cast<std::uint64_t>(train_set.size())));
      if (cfg.opt.is_sam()) {
        auto fn = [&](std::span<const float> w) {
          auto lg = loss_and_grad(spec, layout, w, train_set, batch);
          return std::make_pair(lg.loss, std::move(lg.grad.values));
        };
        auto info = sam_step(params.flat(), fn, opt, cfg.opt.sam_radius);
        if (!std::isfinite(info.loss)) throw NumericError("non-finite training loss");
      } else {
        auto lg = loss_and_grad(spec, params, train_set, batch);
        if (!std::isfinite(lg.loss)) throw NumericError("non-finite training loss");
        opt.step(params.flat(), lg.grad.values);
      }
      for (float v : params.flat())
        if (!std::isfinite(v)) throw NumericError("non-finite parameter after update");
      ++step;
      checkpoint_cadence(step);
      if (step % cfg.eval_every == 0 || step == cfg.steps) stop = do_eval(step);
    }
  } catch (const NumericError& e) {
    // Parameters may be poisoned; roll back to the newest checkpoint.
    result->steps_done = step;
    if (!ckpts.by_step.empty()) result->final_params = ckpts.by_step.rbegin()->second;
    if (out_dir) write_trajectory_csv(log, *out_dir / "trajectory.csv");
    throw RunError("training diverged at step " + std::to_string(step + 1) + ": " + e.what(), result);
  }
  if (log.evals.back().step != step) do_eval(step);
  result->steps_done = step;
  result->final_params = params;
  if (out_dir) write_trajectory_csv(log, *out_dir / "trajectory.csv");
  return std::move(*result);
}

}  // namespace gf::train
