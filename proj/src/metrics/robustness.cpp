#include <algorithm>

#include "grokforget/errors.hpp"
#include "grokforget/metrics.hpp"
#include "grokforget/objective.hpp"
#include "grokforget/ops.hpp"

namespace gf::metrics {
namespace {

void require_classification(const data::Dataset& ds) {
  if (ds.kind != data::Kind::classification || ds.token_input)
    throw UnsupportedFamilyError("FGSM needs a classification dataset with continuous inputs");
}

Labels labels_of(const data::Dataset& ds, std::span<const std::int64_t> rows) {
  Labels y;
  y.reserve(rows.size());
  for (auto r : rows) y.push_back(ds.labels[static_cast<std::size_t>(r)]);
  return y;
}

}  // namespace

Tensor fgsm_perturb(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds,
                    std::span<const std::int64_t> rows, double epsilon) {
  require_classification(ds);
  if (rows.empty()) throw ValidationError("FGSM over an empty set");
  if (epsilon < 0.0) throw ValidationError("FGSM epsilon must be non-negative");
  Tensor x = ds.inputs.gather_rows(rows);
  if (epsilon == 0.0) return x;
  const auto y = labels_of(ds, rows);
  const auto n = static_cast<std::int64_t>(rows.size());
  const auto width = x.cols();
  Tensor adv = x;
  for (std::int64_t start = 0; start < n; start += zoo::kEvalChunk) {
    const auto len = std::min(zoo::kEvalChunk, n - start);
    std::vector<std::int64_t> part(static_cast<std::size_t>(len));
    for (std::int64_t i = 0; i < len; ++i) part[static_cast<std::size_t>(i)] = start + i;
    Graph g;
    auto bound = zoo::bind(g, params, false);
    Var in = g.variable(x.gather_rows(part));
    Labels py(y.begin() + start, y.begin() + start + len);
    Var loss = cross_entropy(zoo::forward_graph(spec, bound, in), py);
    g.backward(loss);
    const Tensor& grad = in.grad();
    for (std::int64_t k = 0; k < len * width; ++k) {
      const float gk = grad[k];
      const float s = gk > 0.0f ? 1.0f : (gk < 0.0f ? -1.0f : 0.0f);
      float& v = adv[start * width + k];
      v = std::clamp(static_cast<float>(v + epsilon * s), ds.input_min, ds.input_max);
    }
  }
  return adv;
}

std::vector<std::pair<double, double>> fgsm_robustness(const zoo::ModelSpec& spec, const zoo::Params& params,
                                                       const data::Dataset& test, std::span<const std::int64_t> rows,
                                                       std::span<const double> epsilons) {
  require_classification(test);
  const auto y = labels_of(test, rows);
  std::vector<std::pair<double, double>> out;
  for (double eps : epsilons) {
    const auto pred = argmax_rows(zoo::forward(spec, params, fgsm_perturb(spec, params, test, rows, eps)));
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == y[i] ? 1 : 0;
    out.emplace_back(eps, static_cast<double>(hits) / static_cast<double>(pred.size()));
  }
  return out;
}

}  // namespace gf::metrics
