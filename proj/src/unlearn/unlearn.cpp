#include "grokforget/unlearn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "grokforget/checkpoint.hpp"
#include "grokforget/config_hash.hpp"
#include "grokforget/errors.hpp"
#include "grokforget/objective.hpp"
#include "grokforget/ops.hpp"

namespace gf::unlearn {
namespace {

constexpr std::uint64_t kForgetStream = 0x666f72;
constexpr std::uint64_t kRetainStream = 0x726574;
constexpr std::uint64_t kFisherStream = 0x666973;
constexpr std::uint64_t kNoiseStream = 0x6e6f69;

using Clock = std::chrono::steady_clock;

const std::vector<std::pair<Algorithm, const char*>> kNames{
    {Algorithm::ga, "ga"},         {Algorithm::finetune, "finetune"}, {Algorithm::grad_tau, "grad_tau"},
    {Algorithm::kl_anchor, "kl_anchor"}, {Algorithm::fisher, "fisher"}, {Algorithm::scrub, "scrub"},
    {Algorithm::retrain, "retrain"}};

/// Draws batches of dataset rows for one side of the split.
class BatchSource {
 public:
  BatchSource(const UnlearnInputs& in, const std::vector<std::int64_t>& ids, std::int64_t batch_size, Rng rng)
      : in_(in), ids_(ids), rows_(in.train.rows_of(ids)), batch_(batch_size), rng_(rng) {}

  std::vector<std::int64_t> next() {
    const auto n = static_cast<std::int64_t>(rows_.size());
    std::vector<std::int64_t> picked;
    if (batch_ <= 0 || batch_ >= n) {
      picked.assign(ids_.begin(), ids_.end());
    } else {
      for (auto i : rng_.sample_without_replacement(n, batch_)) picked.push_back(ids_[static_cast<std::size_t>(i)]);
    }
    return touch(picked);
  }

  // One pass over the set in shuffled batches.
  std::vector<std::vector<std::int64_t>> epoch() {
    std::vector<std::int64_t> order(ids_.begin(), ids_.end());
    rng_.shuffle(order);
    const auto n = static_cast<std::int64_t>(order.size());
    const auto b = batch_ <= 0 ? n : batch_;
    std::vector<std::vector<std::int64_t>> out;
    for (std::int64_t s = 0; s < n; s += b)
      out.emplace_back(order.begin() + s, order.begin() + std::min(n, s + b));
    return out;
  }

  std::vector<std::int64_t> rows_for(const std::vector<std::int64_t>& ids) const { return touch_rows(ids); }

 private:
  std::vector<std::int64_t> touch(const std::vector<std::int64_t>& ids) const { return touch_rows(ids); }
  std::vector<std::int64_t> touch_rows(const std::vector<std::int64_t>& ids) const {
    if (in_.on_access) in_.on_access(ids);
    return in_.train.rows_of(ids);
  }

  const UnlearnInputs& in_;
  const std::vector<std::int64_t>& ids_;
  std::vector<std::int64_t> rows_;
  std::int64_t batch_;
  Rng rng_;
};

void require_nonempty(const std::vector<std::int64_t>& ids, const char* name) {
  if (ids.empty()) throw ValidationError(std::string(name) + " set is empty");
}

TrajectoryPoint evaluate(const zoo::Params& p, const UnlearnInputs& in, std::int64_t step) {
  TrajectoryPoint t;
  t.step = step;
  t.ua = in.split.forget_ids.empty() ? 0.0 : accuracy(in.spec, p, in.train, in.train.rows_of(in.split.forget_ids));
  t.ra = in.split.retain_ids.empty() ? 0.0 : accuracy(in.spec, p, in.train, in.train.rows_of(in.split.retain_ids));
  return t;
}

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Shared loop: each call to `direction` returns d for the update w -= lr * d.
/// Stops at the step budget, on reaching the UA target, or on divergence.
class Loop {
 public:
  Loop(const zoo::Params& start, const UnlearnInputs& in, const UnlearnConfig& cfg)
      : in_(in), cfg_(cfg), t0_(Clock::now()) {
    result_.params = start;
    result_.trajectory.push_back(evaluate(start, in, 0));
    if (cfg.stop_target_ua && result_.trajectory.back().ua <= *cfg.stop_target_ua) stopped_ = true;
  }

  const zoo::Params& params() const { return result_.params; }
  bool done() const { return stopped_ || result_.steps_used >= cfg_.steps; }

  // Applies one update. Returns false once the loop has stopped.
  bool apply(const std::vector<float>& d) {
    if (done()) return false;
    auto w = result_.params.flat();
    std::vector<float> before(w.begin(), w.end());
    const auto lr = static_cast<float>(cfg_.lr);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * d[i];
    if (!all_finite(w)) {
      std::copy(before.begin(), before.end(), w.begin());
      return diverge();
    }
    ++result_.steps_used;
    const bool last = result_.steps_used >= cfg_.steps;
    if (result_.steps_used % cfg_.eval_every == 0 || last) {
      result_.trajectory.push_back(evaluate(result_.params, in_, result_.steps_used));
      if (cfg_.stop_target_ua && result_.trajectory.back().ua <= *cfg_.stop_target_ua) stopped_ = true;
    }
    return !done();
  }

  bool diverge() {
    result_.diverged = true;
    stopped_ = true;
    return false;
  }

  UnlearnResult finish() {
    result_.wall_time = seconds_since(t0_);
    return std::move(result_);
  }

 private:
  const UnlearnInputs& in_;
  const UnlearnConfig& cfg_;
  Clock::time_point t0_;
  UnlearnResult result_;
  bool stopped_ = false;
};

std::vector<float> grad_of(const UnlearnInputs& in, const zoo::Params& p, const std::vector<std::int64_t>& rows) {
  return loss_and_grad(in.spec, p, in.train, rows).grad.values;
}

// Gradient of weight * KL(student || teacher) (+ ce_weight * CE) on rows.
std::vector<float> kl_grad(const UnlearnInputs& in, const zoo::Params& student, const zoo::Params& teacher,
                           const std::vector<std::int64_t>& rows, double temperature, double ce_weight) {
  Graph g;
  auto s = zoo::bind(g, student, true);
  auto t = zoo::bind(g, teacher, false);
  Var out_s = dataset_outputs(g, in.spec, s, in.train, rows);
  Var out_t = dataset_outputs(g, in.spec, t, in.train, rows);
  Var loss = kl_divergence(out_s, out_t, static_cast<float>(temperature));
  if (ce_weight != 0.0)
    loss = add(loss, scale(cross_entropy(out_s, dataset_targets(in.train, rows)), static_cast<float>(ce_weight)));
  g.backward(loss);
  return zoo::gradients(g, s).values;
}

template <typename Step>
UnlearnResult run_loop(const zoo::Params& start, const UnlearnInputs& in, const UnlearnConfig& cfg, Step step) {
  Loop loop(start, in, cfg);
  try {
    while (!loop.done())
      if (!loop.apply(step(loop.params(), loop))) break;
  } catch (const NumericError&) {
    loop.diverge();
  }
  return loop.finish();
}

}  // namespace

std::string to_string(Algorithm a) {
  for (const auto& [k, v] : kNames)
    if (k == a) return v;
  return "?";
}

Algorithm algorithm_from_string(const std::string& s) {
  for (const auto& [k, v] : kNames)
    if (s == v) return k;
  throw ValidationError("unknown unlearning algorithm: " + s);
}

void UnlearnConfig::validate() const {
  if (!(lr >= 0.0)) throw ValidationError("lr must be non-negative");
  if (steps < 0) throw ValidationError("steps must be non-negative");
  if (eval_every < 1) throw ValidationError("eval_every must be >= 1");
  if (stop_target_ua && (*stop_target_ua < 0.0 || *stop_target_ua > 1.0))
    throw ValidationError("stop_target_ua must lie in [0, 1]");
  if (fisher_scale < 0.0 || fisher_eps <= 0.0) throw ValidationError("fisher_scale >= 0 and fisher_eps > 0 required");
  if (scrub.max_epochs < 0 || scrub.min_epochs < 0 || scrub.temperature <= 0.0)
    throw ValidationError("invalid SCRUB schedule");
  if (kl_weight < 0.0) throw ValidationError("kl_weight must be non-negative");
}

nlohmann::json UnlearnConfig::to_json() const {
  nlohmann::json j{{"algorithm", to_string(algorithm)},
                   {"lr", lr},
                   {"steps", steps},
                   {"batch_size", batch_size},
                   {"ascent_weight", ascent_weight},
                   {"strict_alternation", strict_alternation},
                   {"kl_weight", kl_weight},
                   {"fisher_scale", fisher_scale},
                   {"fisher_eps", fisher_eps},
                   {"fisher_exponent", fisher_exponent},
                   {"fisher_samples", fisher_samples},
                   {"scrub",
                    {{"max_epochs", scrub.max_epochs},
                     {"min_epochs", scrub.min_epochs},
                     {"temperature", scrub.temperature},
                     {"ce_weight", scrub.ce_weight}}},
                   {"eval_every", eval_every},
                   {"seed", seed}};
  j["stop_target_ua"] = stop_target_ua ? nlohmann::json(*stop_target_ua) : nlohmann::json(nullptr);
  if (algorithm == Algorithm::retrain) j["retrain"] = retrain.to_json();
  return j;
}

UnlearnConfig UnlearnConfig::from_json(const nlohmann::json& j) {
  UnlearnConfig c;
  c.algorithm = algorithm_from_string(j.at("algorithm").get<std::string>());
  c.lr = j.value("lr", c.lr);
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.ascent_weight = j.value("ascent_weight", c.ascent_weight);
  c.strict_alternation = j.value("strict_alternation", c.strict_alternation);
  c.kl_weight = j.value("kl_weight", c.kl_weight);
  c.fisher_scale = j.value("fisher_scale", c.fisher_scale);
  c.fisher_eps = j.value("fisher_eps", c.fisher_eps);
  c.fisher_exponent = j.value("fisher_exponent", c.fisher_exponent);
  c.fisher_samples = j.value("fisher_samples", c.fisher_samples);
  if (j.contains("scrub")) {
    const auto& s = j["scrub"];
    c.scrub.max_epochs = s.value("max_epochs", c.scrub.max_epochs);
    c.scrub.min_epochs = s.value("min_epochs", c.scrub.min_epochs);
    c.scrub.temperature = s.value("temperature", c.scrub.temperature);
    c.scrub.ce_weight = s.value("ce_weight", c.scrub.ce_weight);
  }
  if (j.contains("stop_target_ua") && !j["stop_target_ua"].is_null()) c.stop_target_ua = j["stop_target_ua"].get<double>();
  c.eval_every = j.value("eval_every", c.eval_every);
  c.seed = j.value("seed", c.seed);
  if (j.contains("retrain")) c.retrain = train::TrainConfig::from_json(j["retrain"]);
  c.validate();
  return c;
}

UnlearnResult ga_unlearn(const zoo::Params& params, const UnlearnInputs& in, const UnlearnConfig& cfg) {
  cfg.validate();
  require_nonempty(in.split.forget_ids, "forget");
  BatchSource forget(in, in.split.forget_ids, cfg.batch_size, Rng(cfg.seed, kForgetStream));
  return run_loop(params, in, cfg, [&](const zoo::Params& p, Loop&) {
    auto d = grad_of(in, p, forget.next());
    for (auto& v : d) v = -v;
    return d;
  });
}

UnlearnResult finetune_unlearn(const zoo::Params& params, const UnlearnInputs& in, const UnlearnConfig& cfg) {
  cfg.validate();
  require_nonempty(in.split.retain_ids, "retain");
  BatchSource retain(in, in.split.retain_ids, cfg.batch_size, Rng(cfg.seed, kRetainStream));
  return run_loop(params, in, cfg, [&](const zoo::Params& p, Loop&) { return grad_of(in, p, retain.next()); });
}

UnlearnResult grad_tau_unlearn(const zoo::Params& params, const UnlearnInputs& in, const UnlearnConfig& cfg) {
  cfg.validate();
  require_nonempty(in.split.forget_ids, "forget");
  require_nonempty(in.split.retain_ids, "retain");
  BatchSource forget(in, in.split.forget_ids, cfg.batch_size, Rng(cfg.seed, kForgetStream));
  BatchSource retain(in, in.split.retain_ids, cfg.batch_size, Rng(cfg.seed, kRetainStream));
  const auto alpha = static_cast<float>(cfg.ascent_weight);
  std::int64_t k = 0;
  return run_loop(params, in, cfg, [&](const zoo::Params& p, Loop&) {
    if (cfg.strict_alternation) {
      const bool ascend = (k++ % 2) == 1;
      if (!ascend) return grad_of(in, p, retain.next());
      auto d = grad_of(in, p, forget.next());
      for (auto& v : d) v = -alpha * v;
      return d;
    }
    auto d = grad_of(in, p, retain.next());
    if (cfg.ascent_weight != 0.0) {
      const auto gf_ = grad_of(in, p, forget.next());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= alpha * gf_[i];
    }
    return d;
  });
}

UnlearnResult kl_anchor_unlearn(const zoo::Params& params, const zoo::Params& ref_params, const UnlearnInputs& in,
                                const UnlearnConfig& cfg) {
  cfg.validate();
  require_nonempty(in.split.forget_ids, "forget");
  BatchSource forget(in, in.split.forget_ids, cfg.batch_size, Rng(cfg.seed, kForgetStream));
  BatchSource retain(in, in.split.retain_ids, cfg.batch_size, Rng(cfg.seed, kRetainStream));
  if (cfg.kl_weight != 0.0) require_nonempty(in.split.retain_ids, "retain");
  const auto lambda = static_cast<float>(cfg.kl_weight);
  return run_loop(params, in, cfg, [&](const zoo::Params& p, Loop&) {
    auto d = grad_of(in, p, forget.next());
    for (auto& v : d) v = -v;
    if (cfg.kl_weight != 0.0) {
      const auto gk = kl_grad(in, p, ref_params, retain.next(), 1.0, 0.0);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += lambda * gk[i];
    }
    return d;
  });
}

std::vector<double> diagonal_fisher(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds,
                                    std::span<const std::int64_t> rows) {
  if (rows.empty()) throw ValidationError("Fisher estimate over an empty set");
  std::vector<double> f(static_cast<std::size_t>(params.total_count()), 0.0);
  for (auto r : rows) {
    const std::int64_t one[1] = {r};
    const auto g = loss_and_grad(spec, params, ds, one).grad.values;
    for (std::size_t i = 0; i < f.size(); ++i) f[i] += static_cast<double>(g[i]) * g[i];
  }
  for (auto& v : f) v /= static_cast<double>(rows.size());
  return f;
}

UnlearnResult fisher_forget(const zoo::Params& params, const UnlearnInputs& in, const UnlearnConfig& cfg) {
  cfg.validate();
  require_nonempty(in.split.forget_ids, "forget");
  require_nonempty(in.split.retain_ids, "retain");
  const auto t0 = Clock::now();
  UnlearnResult r;
  r.params = params;
  r.trajectory.push_back(evaluate(params, in, 0));
  if (cfg.fisher_scale != 0.0) {
    std::vector<std::int64_t> ids = in.split.retain_ids;
    const auto n = static_cast<std::int64_t>(ids.size());
    if (cfg.fisher_samples > 0 && n > cfg.fisher_samples) {
      Rng pick(cfg.seed, kFisherStream);
      std::vector<std::int64_t> chosen;
      for (auto i : pick.sample_without_replacement(n, cfg.fisher_samples)) chosen.push_back(ids[static_cast<std::size_t>(i)]);
      ids = std::move(chosen);
    }
    if (in.on_access) in.on_access(ids);
    const auto fisher = diagonal_fisher(in.spec, params, in.train, in.train.rows_of(ids));
    Rng noise(cfg.seed, kNoiseStream);
    auto w = r.params.flat();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double sd = cfg.fisher_scale * std::pow(fisher[i] + cfg.fisher_eps, cfg.fisher_exponent);
      w[i] = static_cast<float>(w[i] + sd * noise.normal());
    }
  }
  r.steps_used = 1;
  r.trajectory.push_back(evaluate(r.params, in, 1));
  r.wall_time = seconds_since(t0);
  return r;
}

UnlearnResult scrub_unlearn(const zoo::Params& student, const zoo::Params& teacher, const UnlearnInputs& in,
                            const UnlearnConfig& cfg) {
  cfg.validate();
  const auto& sc = cfg.scrub;
  if (sc.max_epochs > 0) require_nonempty(in.split.forget_ids, "forget");
  if (sc.min_epochs > 0) require_nonempty(in.split.retain_ids, "retain");
  BatchSource forget(in, in.split.forget_ids, cfg.batch_size, Rng(cfg.seed, kForgetStream));
  BatchSource retain(in, in.split.retain_ids, cfg.batch_size, Rng(cfg.seed, kRetainStream));
  Loop loop(student, in, cfg);
  const auto epochs = std::max(sc.max_epochs, sc.min_epochs);
  try {
    // Min phases are aligned to the end so the schedule always finishes on one.
    for (std::int64_t e = 0; e < epochs && !loop.done(); ++e) {
      if (e < sc.max_epochs) {
        for (const auto& ids : forget.epoch()) {
          auto d = kl_grad(in, loop.params(), teacher, forget.rows_for(ids), sc.temperature, 0.0);
          for (auto& v : d) v = -v;
          if (!loop.apply(d)) break;
        }
      }
      if (e >= epochs - sc.min_epochs) {
        for (const auto& ids : retain.epoch())
          if (!loop.apply(kl_grad(in, loop.params(), teacher, retain.rows_for(ids), sc.temperature, sc.ce_weight)))
            break;
      }
    }
  } catch (const NumericError&) {
    loop.diverge();
  }
  return loop.finish();
}

UnlearnResult scrub_unlearn(const zoo::Params& teacher, const UnlearnInputs& in, const UnlearnConfig& cfg) {
  return scrub_unlearn(teacher, teacher, in, cfg);
}

UnlearnResult retrain(const UnlearnInputs& in, const UnlearnConfig& cfg, const zoo::Params* original) {
  cfg.validate();
  require_nonempty(in.split.retain_ids, "retain");
  const auto t0 = Clock::now();
  UnlearnResult r;
  zoo::Params fresh = zoo::build_model(in.spec, Rng(cfg.seed, 0x696e6974));
  r.trajectory.push_back(evaluate(original ? *original : fresh, in, 0));
  if (in.on_access) in.on_access(in.split.retain_ids);
  const data::Dataset retain = in.train.subset(in.split.retain_ids);
  auto tr = train::train(in.spec, std::move(fresh), retain, retain, cfg.retrain, Rng(cfg.seed, 0x7274));
  r.params = std::move(tr.final_params);
  r.steps_used = tr.steps_done;
  r.trajectory.push_back(evaluate(r.params, in, std::max<std::int64_t>(1, tr.steps_done)));
  r.wall_time = seconds_since(t0);
  return r;
}

UnlearnResult run(const zoo::Params& params, const UnlearnInputs& in, const UnlearnConfig& cfg) {
  switch (cfg.algorithm) {
    case Algorithm::ga: return ga_unlearn(params, in, cfg);
    case Algorithm::finetune: return finetune_unlearn(params, in, cfg);
    case Algorithm::grad_tau: return grad_tau_unlearn(params, in, cfg);
    case Algorithm::kl_anchor: return kl_anchor_unlearn(params, params, in, cfg);
    case Algorithm::fisher: return fisher_forget(params, in, cfg);
    case Algorithm::scrub: return scrub_unlearn(params, in, cfg);
    case Algorithm::retrain: return retrain(in, cfg, &params);
  }
  throw ValidationError("unknown unlearning algorithm");
}

std::optional<std::int64_t> steps_to_target(const UnlearnResult& result, double target_ua) {
  if (result.trajectory.empty()) throw ValidationError("empty unlearning trajectory");
  for (const auto& p : result.trajectory)
    if (p.ua <= target_ua) return p.step;
  return std::nullopt;
}

std::filesystem::path save_result(const UnlearnResult& result, const zoo::ModelSpec& spec, const UnlearnConfig& cfg,
                                  const std::filesystem::path& root, const nlohmann::json& context) {
  const nlohmann::json key{{"spec", spec.to_json()}, {"unlearn", cfg.to_json()}, {"context", context}};
  const auto dir = root / config_hash(key);
  std::filesystem::create_directories(dir);
  zoo::CheckpointMeta meta;
  meta.spec = spec;
  meta.seed = cfg.seed;
  meta.step = result.steps_used;
  meta.trajectory_summary = {{"config", key},
                             {"steps_used", result.steps_used},
                             {"wall_time", result.wall_time},
                             {"diverged", result.diverged}};
  zoo::save_checkpoint(dir / "params", result.params, meta);
  std::ofstream out(dir / "trajectory.csv");
  out << "step,ua,ra\n";
  out.precision(17);
  for (const auto& p : result.trajectory) out << p.step << ',' << p.ua << ',' << p.ra << '\n';
  if (!out) throw FormatError("failed writing " + (dir / "trajectory.csv").string());
  return dir;
}

std::vector<TrajectoryPoint> read_unlearn_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "step,ua,ra") throw FormatError("bad trajectory header in " + path.string());
  std::vector<TrajectoryPoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    TrajectoryPoint p;
    char c1 = 0, c2 = 0;
    if (!(ss >> p.step >> c1 >> p.ua >> c2 >> p.ra) || c1 != ',' || c2 != ',')
      throw FormatError("bad trajectory row: " + line);
    out.push_back(p);
  }
  return out;
}

}  // namespace gf::unlearn
