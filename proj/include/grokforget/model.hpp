#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "grokforget/grad_vector.hpp"
#include "grokforget/graph.hpp"
#include "grokforget/rng.hpp"
#include "grokforget/tensor.hpp"

namespace gf::zoo {

enum class Family { mlp, transformer_lite, cnn_lite };

std::string to_string(Family f);
Family family_from_string(const std::string& s);

struct ModelSpec {
  Family family = Family::mlp;

  // mlp: {input, hidden..., classes}.
  std::vector<std::int64_t> layer_sizes;

  // transformer_lite. Output logits range over the vocabulary.
  std::int64_t vocab_size = 0;
  std::int64_t seq_len = 0;
  std::int64_t embed_dim = 0;
  std::int64_t heads = 1;
  std::int64_t blocks = 1;
  std::int64_t mlp_dim = 0;  // 0 means 4 * embed_dim

  // cnn_lite: three 3x3 convs (strides 1, 2, 2) then two linear layers.
  std::int64_t channels = 1;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::int64_t> conv_channels{8, 16, 16};
  std::int64_t hidden = 32;
  std::int64_t classes = 0;

  std::uint64_t seed = 0;

  void validate() const;
  bool uses_relu() const { return family != Family::transformer_lite; }
  std::int64_t num_classes() const;
  // Width of one input row (tokens count as one column each).
  std::int64_t input_width() const;
  // Width of the representation feeding the classifier head.
  std::int64_t representation_width() const;
  std::int64_t resolved_mlp_dim() const { return mlp_dim > 0 ? mlp_dim : 4 * embed_dim; }

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Parameter layout a spec declares, in canonical order.
std::shared_ptr<const IndexMap> parameter_layout(const ModelSpec& spec);

/// Named parameter tensors stored as one flat buffer.
class Params {
 public:
  Params() = default;
  Params(std::shared_ptr<const IndexMap> layout, std::vector<float> values);

  const IndexMap& layout() const { return *layout_; }
  const std::shared_ptr<const IndexMap>& layout_ptr() const { return layout_; }
  std::int64_t total_count() const { return static_cast<std::int64_t>(values_.size()); }

  std::span<const float> flat() const { return values_; }
  std::span<float> flat() { return values_; }
  std::span<const float> view(const std::string& name) const;
  std::span<float> view(const std::string& name);
  Tensor tensor(const std::string& name) const;

  GradVector flatten() const { return GradVector(layout_, values_); }
  static Params unflatten(const GradVector& v) { return Params(v.index_map, v.values); }

  friend bool operator==(const Params& a, const Params& b) {
    return a.values_ == b.values_ && ((!a.layout_ && !b.layout_) || (a.layout_ && b.layout_ && *a.layout_ == *b.layout_));
  }

 private:
  std::shared_ptr<const IndexMap> layout_;
  std::vector<float> values_;
};

// Deterministic init: fan-in uniform for linear/conv weights and biases,
// N(0, 0.02^2) for embeddings, unit/zero for layer-norm affine terms.
Params build_model(const ModelSpec& spec, Rng rng);

/// Parameters recorded on a graph as leaves, in layout order.
struct BoundParams {
  std::shared_ptr<const IndexMap> layout;
  std::vector<Var> vars;
  Var get(const std::string& name) const;
};

BoundParams bind(Graph& g, const Params& params, bool requires_grad = true);
GradVector gradients(Graph& g, const BoundParams& bound);

struct ForwardTrace {
  std::vector<Tensor> relu_preactivations;  // one [batch, units] per ReLU layer
  Tensor penultimate;
};

// Builds the forward computation. For transformer_lite the input holds token
// ids as floats [batch, seq_len]; with all_positions the result is
// [batch*seq, vocab] next-token logits, otherwise last-position logits.
Var forward_graph(const ModelSpec& spec, const BoundParams& params, Var input, ForwardTrace* trace = nullptr,
                  bool all_positions = false);

// Inference over arbitrarily many rows, evaluated in fixed-size chunks.
Tensor forward(const ModelSpec& spec, const Params& params, const Tensor& batch);
Tensor forward_sequence(const ModelSpec& spec, const Params& params, const Tensor& tokens);
Tensor penultimate_activations(const ModelSpec& spec, const Params& params, const Tensor& inputs);
// Concatenated ReLU pre-activations per row: [rows, total hidden units].
Tensor relu_preactivations(const ModelSpec& spec, const Params& params, const Tensor& inputs);

// Rows per chunk used by the inference helpers above.
inline constexpr std::int64_t kEvalChunk = 1024;

}  // namespace gf::zoo
