#include "grokforget/graph.hpp"

#include <cmath>

#include "grokforget/errors.hpp"

namespace gf {

const Tensor& Var::value() const { return graph->value(id); }
const Tensor& Var::grad() const { return graph->grad(id); }
bool Var::requires_grad() const { return graph->requires_grad(id); }

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
}

Var Graph::constant(Tensor value) {
  check_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::variable(Tensor value) {
  check_finite(value, "variable");
  nodes_.push_back(Node{std::move(value), {}, true, false, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  bool needs = false;
  for (const auto& p : parents) {
    if (p.graph != this) throw ContractError("op mixes vars from different graphs");
    needs = needs || requires_grad(p.id);
  }
  nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(fn) : BackwardFn{}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Graph::grad_buffer(int id) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0f);
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor& Graph::grad(int id) { return grad_buffer(id); }

void Graph::backward(Var loss) {
  if (loss.graph != this) throw ContractError("backward on a var from another graph");
  if (value(loss.id).numel() != 1) {
    throw ContractError("backward requires a scalar loss, got " + shape_str(value(loss.id).shape()));
  }
  if (backward_done_) throw ContractError("backward already run on this graph");
  backward_done_ = true;
  if (!requires_grad(loss.id)) return;
  grad_buffer(loss.id).fill(1.0f);
  for (int id = loss.id; id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
    check_finite(n.grad, "backward");
  }
}

}  // namespace gf
