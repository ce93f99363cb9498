#pragma once

// Fixed-operator computation graph with reverse-mode differentiation. The
// operator set is exactly what the classifier needs: conv2d (stride 1, zero
// pad), dense, relu, 2x2 average pool, global average pool, elementwise
// add/mul, and softmax cross-entropy. No dynamic shapes, no higher-order
// derivatives.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "katana/tensor.hpp"

namespace katana {

enum class Op : uint8_t {
  kInput,
  kParam,
  kConv2d,
  kDense,
  kRelu,
  kAvgPool2,
  kGlobalAvgPool,
  kAdd,
  kMul,
  kSoftmaxCrossEntropy,
};

const char* op_name(Op op);

struct GraphNode {
  Op op = Op::kInput;
  std::array<int, 3> in{-1, -1, -1};
  Shape shape;
};

// Static graph structure plus parameter values. Evaluation state lives in a
// Tape, so a const Graph can be shared across threads, each with its own tape.
template <typename T>
class Graph {
 public:
  int add_input(Shape shape);
  int add_param(Tensor<T> value);
  // Like a param but excluded from param_ids(): never touched by optimizers.
  int add_const(Tensor<T> value);

  int conv2d(int x, int w, int b);
  int dense(int x, int w, int b);
  int relu(int x);
  int avg_pool2(int x);
  int global_avg_pool(int x);
  int add(int a, int b);
  int mul(int a, int b);
  // Scalar loss; the class label is supplied per forward call.
  int softmax_cross_entropy(int logits);

  int node_count() const { return static_cast<int>(nodes_.size()); }
  const GraphNode& node(int id) const { return nodes_[id]; }
  const std::vector<int>& param_ids() const { return param_ids_; }
  const std::vector<int>& input_ids() const { return input_ids_; }

  Tensor<T>& param_value(int id);
  const Tensor<T>& param_value(int id) const;

  template <typename U>
  Graph<U> cast() const {
    Graph<U> g;
    g.nodes_ = nodes_;
    g.input_ids_ = input_ids_;
    g.param_ids_ = param_ids_;
    g.param_slot_ = param_slot_;
    g.params_.reserve(params_.size());
    for (const auto& p : params_) g.params_.push_back(p.template cast<U>());
    return g;
  }

 private:
  template <typename U>
  friend class Graph;

  int push(GraphNode n);
  int check_id(int id, const char* ctx) const;

  std::vector<GraphNode> nodes_;
  std::vector<Tensor<T>> params_;   // indexed by param_slot_[node]
  std::vector<int> param_slot_;     // -1 for non-param nodes
  std::vector<int> input_ids_;
  std::vector<int> param_ids_;
};

// Per-evaluation state: activations saved for backward, then gradients.
template <typename T>
struct Tape {
  std::vector<Tensor<T>> value;
  std::vector<Tensor<T>> grad;
  std::vector<char> needed;
  int out_node = -1;
  int label = -1;
  bool forward_done = false;
  bool backward_done = false;
};

using FeedList = std::vector<std::pair<int, const void*>>;

// Evaluates ancestors of `out` in topological order. `label` is consumed by
// softmax-cross-entropy nodes (-1 when the subgraph has none).
template <typename T>
const Tensor<T>& forward(const Graph<T>& g, int out,
                         const std::vector<std::pair<int, const Tensor<T>*>>& feeds, int label,
                         Tape<T>& tape);

// Reverse pass from a scalar output; fills tape.grad for every needed node.
// Attacks only consume input gradients, so parameter gradients can be skipped.
template <typename T>
void backward(const Graph<T>& g, Tape<T>& tape, bool param_grads = true);

// dLoss/dInput for an input node; runs backward() if it has not run yet.
template <typename T>
Tensor<T> grad_input(const Graph<T>& g, int input, Tape<T>& tape);

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  int checked = 0;
  // Coordinates where a relu pre-activation changed sign inside the stencil;
  // excluded from the max because the loss is not differentiable there.
  int excluded = 0;
};

// Central-difference check of grad_input. Forward-only on the perturbed
// points, so it is independent of the backward implementation.
template <typename T>
FiniteDiffReport finite_diff_check(const Graph<T>& g, int out, int input, const Tensor<T>& x,
                                   int label, T h);

}  // namespace katana
