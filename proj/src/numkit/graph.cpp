#include "vmoe/numkit/graph.hpp"

#include <stdexcept>

#include "vmoe/numkit/flops.hpp"

namespace vmoe::numkit {

const Tensor& Var::value() const { return graph_->value(*this); }
const Tensor& Var::grad() const { return graph_->grad(*this); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, false});
  return Var(this, nodes_.size() - 1);
}

Var Graph::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true, false});
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::span<const Var> parents, BackwardFn backward, const char* op) {
  value.require_finite(op);
  bool needs = false;
  for (const Var& p : parents) {
    if (p.graph_ != this) throw std::logic_error(std::string(op) + ": input from another graph");
    needs = needs || nodes_[p.id_].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, needs, false});
  return Var(this, nodes_.size() - 1);
}

Tensor* Graph::grad_sink(Var v) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return &n.grad;
}

const Tensor& Graph::grad(Var v) {
  Node& n = nodes_[v.id()];
  if (!n.has_grad && (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size())) {
    n.grad = Tensor(n.value.shape());
  }
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph_ != this) throw std::logic_error("backward: loss from another graph");
  if (nodes_[loss.id()].value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_string(nodes_[loss.id()].value.shape()));
  }
  Tensor* seed = grad_sink(loss);
  if (!seed) return;
  (*seed)[0] = 1.0;
  SuspendFlopCounting no_count;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.backward && n.has_grad) n.backward(*this, n.grad);
  }
}

}  // namespace vmoe::numkit
