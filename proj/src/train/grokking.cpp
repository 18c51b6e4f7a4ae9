#include <algorithm>
#include <cmath>

#include "grokforget/train.hpp"

namespace gf::train {

nlohmann::json GrokkingReport::to_json() const {
  auto opt = [](const std::optional<std::int64_t>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"t_fit", opt(t_fit)},
          {"t_grok", opt(t_grok)},
          {"pre_checkpoint", opt(pre_checkpoint)},
          {"grok_checkpoint", opt(grok_checkpoint)},
          {"fit_threshold", thresholds.fit},
          {"grok_threshold", thresholds.grok},
          {"persistence_evals", thresholds.persistence_evals},
          {"min_gap_steps", thresholds.min_gap_steps},
          {"covered", covered},
          {"grokked", grokked()}};
}

GrokkingReport detect_grokking(const TrajectoryLog& log, const GrokThresholds& th,
                               std::span<const std::int64_t> checkpoint_steps) {
  GrokkingReport rep;
  rep.thresholds = th;
  const auto& ev = log.evals;
  for (const auto& r : ev) {
    if (r.train_acc >= th.fit) {
      rep.t_fit = r.step;
      break;
    }
  }
  if (!rep.t_fit) return rep;
  rep.covered = !ev.empty() && ev.back().step - *rep.t_fit >= th.min_gap_steps;

  const auto n = static_cast<std::int64_t>(ev.size());
  for (std::int64_t i = 0; i < n; ++i) {
    if (ev[static_cast<std::size_t>(i)].step < *rep.t_fit) continue;
    if (i + th.persistence_evals >= n) break;
    bool held = true;
    for (std::int64_t k = 0; k <= th.persistence_evals; ++k)
      held = held && ev[static_cast<std::size_t>(i + k)].val_acc >= th.grok;
    if (held) {
      rep.t_grok = ev[static_cast<std::size_t>(i)].step;
      break;
    }
  }

  double best = -1.0;
  for (auto s : checkpoint_steps) {
    if (s > *rep.t_fit) continue;
    const auto* r = log.at_step(s);
    if (!r) continue;
    if (r->val_acc > best || (r->val_acc == best && rep.pre_checkpoint && s < *rep.pre_checkpoint)) {
      best = r->val_acc;
      rep.pre_checkpoint = s;
    }
  }
  if (rep.t_grok) {
    for (auto s : checkpoint_steps) {
      if (s >= *rep.t_grok && (!rep.grok_checkpoint || s < *rep.grok_checkpoint)) rep.grok_checkpoint = s;
    }
    if (rep.pre_checkpoint && *rep.pre_checkpoint >= *rep.t_grok) rep.pre_checkpoint.reset();
  }
  return rep;
}

std::vector<data::LocalGrokLabel> classify_local_grokking(std::span<const double> loss_at_candidate,
                                                          std::span<const double> loss_at_final, double low,
                                                          double high) {
  if (loss_at_candidate.size() != loss_at_final.size()) throw DataError("loss records have different lengths");
  std::vector<data::LocalGrokLabel> out;
  out.reserve(loss_at_final.size());
  for (std::size_t i = 0; i < loss_at_final.size(); ++i) {
    const double a = loss_at_candidate[i], b = loss_at_final[i];
    if (!std::isfinite(a) || !std::isfinite(b)) throw DataError("missing loss record for example " + std::to_string(i));
    const double delta = a - b;
    out.push_back(delta < low ? data::LocalGrokLabel::grokked
                  : delta > high ? data::LocalGrokLabel::ungrokked
                                 : data::LocalGrokLabel::ambiguous);
  }
  return out;
}

std::vector<data::LocalGrokLabel> classify_local_grokking(const TrajectoryLog& log, std::int64_t t_candidate,
                                                          double low, double high) {
  if (log.loss_steps.empty()) throw DataError("trajectory has no per-example losses");
  auto it = std::find(log.loss_steps.begin(), log.loss_steps.end(), t_candidate);
  if (it == log.loss_steps.end()) throw DataError("no per-example losses logged at step " + std::to_string(t_candidate));
  const auto& cand = log.per_example_loss[static_cast<std::size_t>(it - log.loss_steps.begin())];
  const auto& fin = log.per_example_loss.back();
  std::vector<double> a(cand.begin(), cand.end()), b(fin.begin(), fin.end());
  return classify_local_grokking(a, b, low, high);
}

std::int64_t default_candidate_step(const TrajectoryLog& log, double fraction) {
  if (log.loss_steps.empty()) throw DataError("trajectory has no per-example losses");
  const double target = fraction * static_cast<double>(log.loss_steps.back());
  return *std::min_element(log.loss_steps.begin(), log.loss_steps.end(), [&](std::int64_t a, std::int64_t b) {
    return std::abs(static_cast<double>(a) - target) < std::abs(static_cast<double>(b) - target);
  });
}

}  // namespace gf::train
