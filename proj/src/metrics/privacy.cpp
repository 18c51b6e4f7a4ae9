#include <algorithm>
#include <numeric>

#include "grokforget/errors.hpp"
#include "grokforget/metrics.hpp"
#include "grokforget/objective.hpp"

namespace gf::metrics {

MiaResult mia_from_losses(std::span<const double> member_losses, std::span<const double> nonmember_losses) {
  if (member_losses.empty() || nonmember_losses.empty()) throw ValidationError("membership attack needs both sets");
  struct Scored {
    double loss;
    bool member;
  };
  std::vector<Scored> all;
  all.reserve(member_losses.size() + nonmember_losses.size());
  for (double l : member_losses) all.push_back({l, true});
  for (double l : nonmember_losses) all.push_back({l, false});
  std::sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.loss < b.loss; });

  const double nm = static_cast<double>(member_losses.size());
  const double nn = static_cast<double>(nonmember_losses.size());
  MiaResult r;
  // Threshold below every loss: nobody is called a member.
  r.balanced_accuracy = 0.5;
  double auc_sum = 0.0;
  std::int64_t members_below = 0, nonmembers_below = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::int64_t tie_m = 0, tie_n = 0;
    while (j < all.size() && all[j].loss == all[i].loss) {
      (all[j].member ? tie_m : tie_n) += 1;
      ++j;
    }
    // Members tied with non-members count half.
    auc_sum += static_cast<double>(tie_m) * (nn - static_cast<double>(nonmembers_below) - 0.5 * tie_n);
    members_below += tie_m;
    nonmembers_below += tie_n;
    const double tpr = static_cast<double>(members_below) / nm;
    const double tnr = 1.0 - static_cast<double>(nonmembers_below) / nn;
    r.balanced_accuracy = std::max(r.balanced_accuracy, 0.5 * (tpr + tnr));
    i = j;
  }
  r.auc = auc_sum / (nm * nn);
  return r;
}

MiaResult mia_score(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& train,
                    std::span<const std::int64_t> forget_ids, const data::Dataset& test,
                    std::span<const std::int64_t> test_ids) {
  if (forget_ids.empty() || test_ids.empty()) throw ValidationError("membership attack needs both sets");
  const auto member = per_example_loss(spec, params, train, train.rows_of(forget_ids));
  const auto nonmember = per_example_loss(spec, params, test, test.rows_of(test_ids));
  return mia_from_losses(member, nonmember);
}

// Greedy decoding from a prefix of length k reproduces the true continuation
// exactly when every teacher-forced argmax from position k-1 onward matches
// the next true token, so one teacher-forced pass decides every k.
std::vector<double> extraction_strength_per_example(const zoo::ModelSpec& spec, const zoo::Params& params,
                                                    const data::Dataset& qa, std::span<const std::int64_t> rows) {
  if (qa.kind != data::Kind::sequence_qa) throw ValidationError("extraction strength needs a sequence_qa dataset");
  if (rows.empty()) return {};
  const Tensor tokens = qa.inputs.gather_rows(rows);
  const auto t = tokens.dim(1);
  const auto pred = argmax_rows(zoo::forward_sequence(spec, params, tokens));
  std::vector<double> es(rows.size(), 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto base = static_cast<std::int64_t>(i) * t;
    std::int64_t k_star = -1;
    for (std::int64_t k = t - 1; k >= qa.key_len; --k) {
      const auto pos = k - 1;
      if (pred[static_cast<std::size_t>(base + pos)] != static_cast<std::int32_t>(tokens.at(static_cast<std::int64_t>(i), pos + 1)))
        break;
      k_star = k;
    }
    if (k_star > 0) es[i] = 1.0 - static_cast<double>(k_star) / static_cast<double>(t);
  }
  return es;
}

double extraction_strength(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& qa,
                           std::span<const std::int64_t> rows) {
  const auto es = extraction_strength_per_example(spec, params, qa, rows);
  if (es.empty()) throw ValidationError("extraction strength over an empty set");
  return std::accumulate(es.begin(), es.end(), 0.0) / static_cast<double>(es.size());
}

double extraction_strength(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& qa) {
  return extraction_strength(spec, params, qa, all_rows(qa));
}

}  // namespace gf::metrics
