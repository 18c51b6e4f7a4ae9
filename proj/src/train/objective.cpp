#include "grokforget/objective.hpp"

#include <numeric>

#include "grokforget/errors.hpp"
#include "grokforget/ops.hpp"

namespace gf {
namespace {

struct AnswerPositions {
  std::vector<std::int64_t> logit_rows;  // rows of the [B*T, V] logits
  Labels targets;
};

AnswerPositions answer_positions(const data::Dataset& ds, const Tensor& tokens) {
  const auto b = tokens.dim(0), t = tokens.dim(1);
  AnswerPositions a;
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t pos = ds.key_len - 1; pos + 1 < t; ++pos) {
      a.logit_rows.push_back(i * t + pos);
      a.targets.push_back(static_cast<std::int32_t>(tokens.at(i, pos + 1)));
    }
  return a;
}

void require_rows(std::span<const std::int64_t> rows) {
  if (rows.empty()) throw ValidationError("loss over an empty set of rows");
}

}  // namespace

std::vector<std::int64_t> all_rows(const data::Dataset& ds) {
  std::vector<std::int64_t> r(static_cast<std::size_t>(ds.size()));
  std::iota(r.begin(), r.end(), 0);
  return r;
}

Labels dataset_targets(const data::Dataset& ds, std::span<const std::int64_t> rows) {
  Labels y;
  if (ds.kind == data::Kind::classification) {
    for (auto r : rows) y.push_back(ds.labels[static_cast<std::size_t>(r)]);
    return y;
  }
  for (auto r : rows)
    for (std::int64_t pos = ds.key_len; pos < ds.key_len + ds.value_len; ++pos)
      y.push_back(static_cast<std::int32_t>(ds.inputs.at(r, pos)));
  return y;
}

Var dataset_outputs(Graph& g, const zoo::ModelSpec& spec, const zoo::BoundParams& params, const data::Dataset& ds,
                    std::span<const std::int64_t> rows) {
  require_rows(rows);
  Tensor x = ds.inputs.gather_rows(rows);
  if (ds.kind == data::Kind::classification) return zoo::forward_graph(spec, params, g.constant(std::move(x)));
  const auto pos = answer_positions(ds, x);
  Var logits = zoo::forward_graph(spec, params, g.constant(std::move(x)), nullptr, true);
  return select_rows(logits, pos.logit_rows);
}

Var dataset_loss(Graph& g, const zoo::ModelSpec& spec, const zoo::BoundParams& params, const data::Dataset& ds,
                 std::span<const std::int64_t> rows) {
  return cross_entropy(dataset_outputs(g, spec, params, ds, rows), dataset_targets(ds, rows));
}

LossAndGrad loss_and_grad(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds,
                          std::span<const std::int64_t> rows) {
  Graph g;
  auto bound = zoo::bind(g, params, true);
  Var loss = dataset_loss(g, spec, bound, ds, rows);
  g.backward(loss);
  return {loss.value().item(), zoo::gradients(g, bound)};
}

LossAndGrad loss_and_grad(const zoo::ModelSpec& spec, const std::shared_ptr<const IndexMap>& layout,
                          std::span<const float> flat, const data::Dataset& ds, std::span<const std::int64_t> rows) {
  return loss_and_grad(spec, zoo::Params(layout, std::vector<float>(flat.begin(), flat.end())), ds, rows);
}

Tensor dataset_logits(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds,
                      std::span<const std::int64_t> rows) {
  require_rows(rows);
  Tensor x = ds.inputs.gather_rows(rows);
  if (ds.kind == data::Kind::classification) return zoo::forward(spec, params, x);
  const auto pos = answer_positions(ds, x);
  return zoo::forward_sequence(spec, params, x).gather_rows(pos.logit_rows);
}

namespace {

std::int64_t tokens_per_row(const data::Dataset& ds) {
  return ds.kind == data::Kind::classification ? 1 : ds.value_len;
}

}  // namespace

std::vector<double> per_example_loss(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds,
                                     std::span<const std::int64_t> rows) {
  const auto tok = per_example_cross_entropy(dataset_logits(spec, params, ds, rows), dataset_targets(ds, rows));
  const auto k = tokens_per_row(ds);
  std::vector<double> out(rows.size(), 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::int64_t j = 0; j < k; ++j) out[i] += tok[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)];
    out[i] /= static_cast<double>(k);
  }
  return out;
}

std::vector<bool> per_example_correct(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds,
                                      std::span<const std::int64_t> rows) {
  const auto pred = argmax_rows(dataset_logits(spec, params, ds, rows));
  const auto y = dataset_targets(ds, rows);
  const auto k = static_cast<std::size_t>(tokens_per_row(ds));
  std::vector<bool> out(rows.size(), true);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < k; ++j)
      if (pred[i * k + j] != y[i * k + j]) out[i] = false;
  return out;
}

double accuracy(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds,
                std::span<const std::int64_t> rows) {
  const auto c = per_example_correct(spec, params, ds, rows);
  std::int64_t hits = 0;
  for (bool b : c) hits += b ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(c.size());
}

double mean_loss(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds,
                 std::span<const std::int64_t> rows) {
  const auto l = per_example_loss(spec, params, ds, rows);
  double s = 0.0;
  for (double v : l) s += v;
  return s / static_cast<double>(l.size());
}

}  // namespace gf
