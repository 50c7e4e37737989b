#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "unisa/tensor.hpp"

namespace unisa {

// A learnable tensor. grad accumulates across backward passes until zero_grad().
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)) {}
  void zero_grad() { grad = Tensor::zeros_like(value); }
};

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Tape of op records in creation order, which is a topological order.
class Graph {
 public:
  // Receives the gradient of the node output; pushes into inputs via add_grad().
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Leaf that owns its gradient (accumulates across backward calls).
  Var leaf(Tensor value);
  // One leaf per parameter per graph; gradients flow into Parameter::grad.
  Var param(Parameter& p);

  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  void backward(Var loss);
  void zero_leaf_grads();

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of an input inside a backward rule, or nullptr if it needs none.
  Tensor* grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
    Parameter* param = nullptr;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_ids_;
  bool grad_enabled_;
};

enum class Reduction { Mean, Sum };

// --- dense ops -------------------------------------------------------------

Var matmul(Var a, Var b);
// a · bᵀ
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_row(Var a, Var row);
Var scale(Var a, double c);
Var sum(Var a);
Var row_sum(Var a);
Var safe_div(Var num, Var den);
Var gelu(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var softmax_rows(Var a);
Var embedding(Var table, std::span<const int> ids);
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var gather_cols(Var a, std::span<const std::size_t> cols);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var replace_rows(Var a, Var row, std::span<const std::size_t> rows);
Var mean_rows(Var a, std::span<const std::size_t> rows);
Var pairwise_distance(Var a);
Var dropout(Var a, double rate, std::mt19937_64& rng);
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> targets,
                          Reduction reduction = Reduction::Mean);

// Plain (non-graph) helpers.
Tensor softmax_rows(const Tensor& a);

}  // namespace unisa
