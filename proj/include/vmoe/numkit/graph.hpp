#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "vmoe/numkit/tensor.hpp"

namespace vmoe::numkit {

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while its graph lives.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Tensor& grad() const;
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order, and backward() walks it in reverse exactly once.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);

  // Appends an op output. The backward closure runs only when at least one
  // parent requires a gradient.
  Var record(Tensor value, std::span<const Var> parents, BackwardFn backward, const char* op);
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward, const char* op) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward), op);
  }

  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  // Gradient buffer of v, allocated on first use; nullptr when v needs none.
  Tensor* grad_sink(Var v);

  void backward(Var loss);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  // Zero tensor when nothing flowed into v.
  const Tensor& grad(Var v);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
    bool has_grad = false;
  };
  std::deque<Node> nodes_;
};

}  // namespace vmoe::numkit
