#pragma once

#include <functional>
#include <vector>

#include "grokforget/tensor.hpp"

namespace gf {

class Graph;

/// Handle to a value recorded on a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

/// Single-use reverse-mode tape. Nodes are appended in evaluation order, so
/// reverse index order is a valid topological order for backward.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  // Records an op output. `fn` runs during backward only if the output
  // requires grad, which is true iff some parent does.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  // Gradient accumulator, zero-initialised on first access.
  Tensor& grad_buffer(int id);
  // Gradient after backward; zeros if nothing flowed into the node.
  const Tensor& grad(int id);

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Throws NumericError naming `op` if any element is NaN or Inf.
void check_finite(const Tensor& t, const char* op);

}  // namespace gf
