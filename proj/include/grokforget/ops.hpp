#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "grokforget/graph.hpp"

namespace gf {

using Labels = std::vector<std::int32_t>;

// Differentiable primitives. Every op validates shapes (ShapeError) and
// rejects non-finite outputs (NumericError).

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, float s);
// x[m, n] + bias[n] broadcast over rows.
Var add_bias(Var x, Var bias);
Var relu(Var x);
// tanh approximation.
Var gelu(Var x);
Var sum(Var x);
Var mean(Var x);
// Mean over rows of -log softmax(logits)[label].
Var cross_entropy(Var logits, std::span<const std::int32_t> labels);
// Mean over rows of KL(softmax(p/T) || softmax(q/T)). Gradient flows into
// whichever of the two arguments requires it.
Var kl_divergence(Var p_logits, Var q_logits, float temperature = 1.0f);
// Rows of table[V, D] selected by ids.
Var embedding(Var table, std::span<const std::int32_t> ids);
Var layer_norm(Var x, Var gamma, Var beta, float eps = 1e-5f);
// qkv is [batch*seq, 3*dim] laid out as [q | k | v]; output [batch*seq, dim].
Var causal_attention(Var qkv, std::int64_t batch, std::int64_t seq, std::int64_t heads);
Var select_rows(Var x, std::span<const std::int64_t> rows);

struct ConvGeometry {
  std::int64_t in_channels = 1;
  std::int64_t height = 1;
  std::int64_t width = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel = 3;
  std::int64_t stride = 1;
  std::int64_t padding = 1;

  std::int64_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::int64_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
};

// x [B, Cin*H*W] (channel-major per row), weight [Cout, Cin*k*k], bias [Cout]
// -> [B, Cout*Ho*Wo].
Var conv2d(Var x, Var weight, Var bias, const ConvGeometry& geom);

// Non-recording helpers.
Tensor log_softmax_rows(const Tensor& logits, float temperature = 1.0f);
std::vector<double> per_example_cross_entropy(const Tensor& logits,
                                              std::span<const std::int32_t> labels);
std::vector<std::int32_t> argmax_rows(const Tensor& logits);
void validate_labels(std::span<const std::int32_t> labels, std::int64_t classes);

}  // namespace gf
