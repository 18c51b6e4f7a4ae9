#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "grokforget/errors.hpp"
#include "grokforget/harness.hpp"
#include "grokforget/metrics.hpp"
#include "grokforget/modsim.hpp"

namespace fs = std::filesystem;
using namespace gf;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::int64_t workers = 0;
  std::optional<std::uint64_t> seed;
};

fs::path default_out() {
  if (const char* env = std::getenv("GROKFORGET_OUT"); env && *env) return env;
  return "grokforget_out";
}

harness::ExperimentConfig load(const Common& c) {
  auto cfg = harness::load_config(c.config);
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (cfg.output_dir.empty()) cfg.output_dir = default_out();
  if (c.workers > 0) cfg.workers = c.workers;
  if (c.seed) cfg.seeds = {*c.seed};
  return cfg;
}

void add_common(CLI::App* app, Common& c, bool needs_config = true) {
  auto* opt = app->add_option("--config", c.config, "experiment config (JSON)");
  if (needs_config) opt->required()->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "output directory (default: $GROKFORGET_OUT or ./grokforget_out)");
  app->add_option("--workers", c.workers, "parallel grid cells");
  app->add_option("--seed", c.seed, "run only this seed");
}

int report_stats(const harness::ExperimentStats& s) {
  std::cout << "cells " << s.cells << ", executed " << s.executed << ", reused " << s.reused << ", skipped "
            << s.skipped << ", failed " << s.failed << "\n";
  return s.failed == 0 ? 0 : 1;
}

int cmd_train(const Common& c) {
  const auto cfg = load(c);
  for (auto seed : cfg.seeds) {
    const auto run = harness::train_or_load(cfg, seed);
    nlohmann::json j = run.grokking.to_json();
    j["seed"] = seed;
    j["dir"] = run.dir.string();
    j["reused"] = run.reused;
    if (!run.log.evals.empty()) {
      const auto& last = run.log.evals.back();
      j["final"] = {{"step", last.step}, {"train_acc", last.train_acc}, {"val_acc", last.val_acc}};
    }
    std::cout << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_sweep(const Common& c) {
  const auto cfg = load(c);
  harness::ResultsStore store(cfg.output_dir / "results");
  const auto stats = harness::run_experiment(cfg, store);
  const auto path = harness::emit_report(store, harness::ReportKind::summary_table, cfg.output_dir / "reports");
  std::cout << "summary: " << path.string() << "\n";
  return report_stats(stats);
}

int cmd_unlearn(const Common& c, const std::string& checkpoint, const std::string& algorithm, double fraction) {
  auto cfg = load(c);
  cfg.checkpoints = {checkpoint};
  std::erase_if(cfg.algorithms, [&](const harness::AlgorithmEntry& a) { return a.name != algorithm; });
  if (cfg.algorithms.empty()) throw ValidationError("config has no algorithm named '" + algorithm + "'");
  cfg.split.fractions = {fraction};
  harness::ResultsStore store(cfg.output_dir / "results");
  const auto stats = harness::run_experiment(cfg, store);
  for (const auto& r : store.records())
    if (r.checkpoint == checkpoint && r.algorithm == algorithm && r.fraction == fraction &&
        std::find(cfg.seeds.begin(), cfg.seeds.end(), r.seed) != cfg.seeds.end())
      std::cout << r.to_json().dump() << "\n";
  return report_stats(stats);
}

int cmd_eval(const Common& c, const std::string& checkpoint, double fraction) {
  const auto cfg = load(c);
  for (auto seed : cfg.seeds) {
    const auto run = harness::train_or_load(cfg, seed);
    const auto step = harness::resolve_checkpoint(run, checkpoint);
    if (!step) {
      std::cout << nlohmann::json{{"seed", seed}, {"checkpoint", checkpoint}, {"status", "skipped"}}.dump() << "\n";
      continue;
    }
    const auto& p = harness::checkpoint_params(run, *step);
    data::SplitSpec spec;
    spec.mode = cfg.split.mode;
    spec.forget_fraction = fraction;
    spec.target_classes = cfg.split.target_classes;
    spec.seed = seed;
    const auto split = data::make_split(run.data.train, spec, {}, &run.data.test);
    metrics::MetricsReport m;
    m.before = m.after = metrics::ua_ra_ta(cfg.model, p, run.data.train, run.data.test, split);
    if (run.data.train.kind == data::Kind::classification) {
      m.mia = metrics::mia_score(cfg.model, p, run.data.train, split.forget_ids, run.data.test, split.test_ids);
      if (cfg.metrics.grad) m.grad = metrics::grad_correlation(cfg.model, p, run.data.train, split);
      if (cfg.metrics.cka) m.cka = metrics::representation_cka(cfg.model, p, run.data.train, split, {512, seed});
      if (cfg.metrics.lc)
        m.lc = metrics::local_complexity_by_split(cfg.model, p, run.data.train, run.data.test, split, cfg.metrics.lc_cfg);
      if (!cfg.metrics.fgsm.empty() && !run.data.test.token_input)
        m.fgsm = metrics::fgsm_robustness(cfg.model, p, run.data.test, run.data.test.rows_of(split.test_ids),
                                          cfg.metrics.fgsm);
    } else {
      m.es_retain = metrics::extraction_strength(cfg.model, p, run.data.train);
    }
    auto j = m.to_json();
    j["seed"] = seed;
    j["checkpoint"] = checkpoint;
    j["step"] = *step;
    std::cout << j.dump() << "\n";
  }
  return 0;
}

int cmd_theory(const std::string& config, const std::string& out, const std::vector<double>& ps,
               const std::vector<double>& rhos) {
  modsim::ModularModelCfg base;
  if (!config.empty()) {
    std::ifstream in(config);
    base = modsim::ModularModelCfg::from_json(nlohmann::json::parse(in, nullptr, true, true));
  }
  const auto rows = modsim::sweep(base, ps, rhos);
  const fs::path dir = out.empty() ? default_out() : fs::path(out);
  fs::create_directories(dir);
  const auto path = dir / "theory_sim.csv";
  modsim::write_sweep_csv(rows, path);
  for (const auto& r : rows)
    std::cout << "p=" << r.cfg.p << " rho=" << r.cfg.rho << " empirical=" << r.result.empirical_corr_mean
              << " predicted=" << r.result.predicted << " stderr=" << r.result.standard_error << "\n";
  std::cout << "wrote " << path.string() << "\n";
  return 0;
}

int cmd_report(const std::string& out, const std::string& kind) {
  const fs::path root = out.empty() ? default_out() : fs::path(out);
  harness::ResultsStore store(root / "results");
  const auto path = harness::emit_report(store, harness::report_kind_from_string(kind), root / "reports");
  std::cout << path.string() << "\n";
  const auto records = store.records();
  return std::any_of(records.begin(), records.end(),
                     [](const harness::RunRecord& r) { return r.status == harness::Status::failed; })
             ? 1
             : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grokforget: grokking and machine-unlearning experiments"};
  app.require_subcommand(1);

  Common train_c, sweep_c, unlearn_c, eval_c;
  auto* train = app.add_subcommand("train", "train and detect grokking for each seed");
  add_common(train, train_c);

  auto* sweep = app.add_subcommand("sweep", "run the full unlearning grid (resumable)");
  add_common(sweep, sweep_c);

  std::string u_ckpt = "grok", u_algo;
  double u_frac = 0.15;
  auto* unl = app.add_subcommand("unlearn", "run one algorithm on one checkpoint");
  add_common(unl, unlearn_c);
  unl->add_option("--checkpoint", u_ckpt, "pre, grok, final or step:<n>");
  unl->add_option("--algorithm", u_algo, "algorithm label from the config")->required();
  unl->add_option("--fraction", u_frac, "forget fraction");

  std::string e_ckpt = "grok";
  double e_frac = 0.15;
  auto* ev = app.add_subcommand("eval", "metrics for a checkpoint without unlearning");
  add_common(ev, eval_c);
  ev->add_option("--checkpoint", e_ckpt, "pre, grok, final or step:<n>");
  ev->add_option("--fraction", e_frac, "forget fraction used to form the split");

  std::string t_config, t_out;
  std::vector<double> t_ps{0.1, 0.5, 1.0}, t_rhos{0.5, 0.9, 1.0};
  auto* th = app.add_subcommand("theory-sim", "Monte Carlo check of the modular gradient-correlation model");
  th->add_option("--config", t_config, "modsim config (JSON)")->check(CLI::ExistingFile);
  th->add_option("--out", t_out, "output directory");
  th->add_option("--p", t_ps, "activation probabilities");
  th->add_option("--rho", t_rhos, "within-module correlations");

  std::string r_out, r_kind = "summary_table";
  auto* rep = app.add_subcommand("report", "emit a CSV report from a results store");
  rep->add_option("--out", r_out, "output root holding results/");
  rep->add_option("--kind", r_kind, "summary_table, efficiency_curves or checkpoint_sweep");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(train_c);
    if (*sweep) return cmd_sweep(sweep_c);
    if (*unl) return cmd_unlearn(unlearn_c, u_ckpt, u_algo, u_frac);
    if (*ev) return cmd_eval(eval_c, e_ckpt, e_frac);
    if (*th) return cmd_theory(t_config, t_out, t_ps, t_rhos);
    if (*rep) return cmd_report(r_out, r_kind);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
