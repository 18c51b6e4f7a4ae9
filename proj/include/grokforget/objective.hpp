#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "grokforget/data.hpp"
#include "grokforget/grad_vector.hpp"
#include "grokforget/model.hpp"

namespace gf {

// Logits at supervised positions: one row per example for classification,
// value_len rows per example (answer positions) for sequence_qa.
Var dataset_outputs(Graph& g, const zoo::ModelSpec& spec, const zoo::BoundParams& params, const data::Dataset& ds,
                    std::span<const std::int64_t> rows);
// Targets aligned with the rows of dataset_outputs.
Labels dataset_targets(const data::Dataset& ds, std::span<const std::int64_t> rows);

// Mean loss over the selected dataset rows, recorded on `g`. Classification
// uses cross-entropy on the label; sequence_qa uses next-token cross-entropy
// over the answer positions.
Var dataset_loss(Graph& g, const zoo::ModelSpec& spec, const zoo::BoundParams& params, const data::Dataset& ds,
                 std::span<const std::int64_t> rows);

struct LossAndGrad {
  double loss = 0.0;
  GradVector grad;
};

LossAndGrad loss_and_grad(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds,
                          std::span<const std::int64_t> rows);

// Same as loss_and_grad over parameters given as a flat buffer.
LossAndGrad loss_and_grad(const zoo::ModelSpec& spec, const std::shared_ptr<const IndexMap>& layout,
                          std::span<const float> flat, const data::Dataset& ds, std::span<const std::int64_t> rows);

// Output logits for the selected rows: [rows, classes] for classification,
// [rows * value_len, vocab] answer-position logits for sequence_qa.
Tensor dataset_logits(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds,
                      std::span<const std::int64_t> rows);

std::vector<double> per_example_loss(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds,
                                     std::span<const std::int64_t> rows);
// sequence_qa rows count as correct only when every answer token is the
// argmax under teacher forcing.
std::vector<bool> per_example_correct(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds,
                                      std::span<const std::int64_t> rows);
double accuracy(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds,
                std::span<const std::int64_t> rows);
double mean_loss(const zoo::ModelSpec& spec, const zoo::Params& params, const data::Dataset& ds,
                 std::span<const std::int64_t> rows);

std::vector<std::int64_t> all_rows(const data::Dataset& ds);

}  // namespace gf
