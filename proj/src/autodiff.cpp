#include "katana/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "katana/kernels.hpp"

namespace katana {

const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kParam: return "param";
    case Op::kConv2d: return "conv2d";
    case Op::kDense: return "dense";
    case Op::kRelu: return "relu";
    case Op::kAvgPool2: return "avg_pool2";
    case Op::kGlobalAvgPool: return "global_avg_pool";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "?";
}

namespace {

[[noreturn]] void graph_error(const char* ctx, const std::string& msg) {
  throw std::invalid_argument(std::string("graph: ") + ctx + ": " + msg);
}

}  // namespace

template <typename T>
int Graph<T>::push(GraphNode n) {
  nodes_.push_back(std::move(n));
  param_slot_.push_back(-1);
  return static_cast<int>(nodes_.size()) - 1;
}

template <typename T>
int Graph<T>::check_id(int id, const char* ctx) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size()))
    graph_error(ctx, "node id " + std::to_string(id) + " out of range");
  return id;
}

template <typename T>
int Graph<T>::add_input(Shape shape) {
  const int id = push({Op::kInput, {-1, -1, -1}, std::move(shape)});
  input_ids_.push_back(id);
  return id;
}

template <typename T>
int Graph<T>::add_param(Tensor<T> value) {
  const int id = push({Op::kParam, {-1, -1, -1}, value.shape});
  param_slot_[id] = static_cast<int>(params_.size());
  params_.push_back(std::move(value));
  param_ids_.push_back(id);
  return id;
}

template <typename T>
int Graph<T>::add_const(Tensor<T> value) {
  const int id = push({Op::kParam, {-1, -1, -1}, value.shape});
  param_slot_[id] = static_cast<int>(params_.size());
  params_.push_back(std::move(value));
  return id;
}

template <typename T>
Tensor<T>& Graph<T>::param_value(int id) {
  check_id(id, "param_value");
  if (param_slot_[id] < 0) graph_error("param_value", "node is not a parameter");
  return params_[param_slot_[id]];
}

template <typename T>
const Tensor<T>& Graph<T>::param_value(int id) const {
  return const_cast<Graph<T>*>(this)->param_value(id);
}

template <typename T>
int Graph<T>::conv2d(int x, int w, int b) {
  check_id(x, "conv2d");
  check_id(w, "conv2d");
  check_id(b, "conv2d");
  const Shape& xs = nodes_[x].shape;
  const Shape& ws = nodes_[w].shape;
  const Shape& bs = nodes_[b].shape;
  if (xs.size() != 3) graph_error("conv2d", "input must be HxWxC, got " + shape_str(xs));
  if (ws.size() != 4) graph_error("conv2d", "weight must be KHxKWxCixCo, got " + shape_str(ws));
  if (ws[0] % 2 == 0 || ws[1] % 2 == 0) graph_error("conv2d", "kernel dims must be odd");
  if (ws[2] != xs[2])
    graph_error("conv2d", "input channels " + std::to_string(xs[2]) + " vs weight " +
                              std::to_string(ws[2]));
  if (bs.size() != 1 || bs[0] != ws[3])
    graph_error("conv2d", "bias shape " + shape_str(bs) + " must be (" + std::to_string(ws[3]) + ")");
  return push({Op::kConv2d, {x, w, b}, {xs[0], xs[1], ws[3]}});
}

template <typename T>
int Graph<T>::dense(int x, int w, int b) {
  check_id(x, "dense");
  check_id(w, "dense");
  check_id(b, "dense");
  const long long in = shape_numel(nodes_[x].shape);
  const Shape& ws = nodes_[w].shape;
  const Shape& bs = nodes_[b].shape;
  if (ws.size() != 2) graph_error("dense", "weight must be InxOut, got " + shape_str(ws));
  if (ws[0] != in)
    graph_error("dense", "input size " + std::to_string(in) + " vs weight rows " +
                             std::to_string(ws[0]));
  if (bs.size() != 1 || bs[0] != ws[1])
    graph_error("dense", "bias shape " + shape_str(bs) + " must be (" + std::to_string(ws[1]) + ")");
  return push({Op::kDense, {x, w, b}, {ws[1]}});
}

template <typename T>
int Graph<T>::relu(int x) {
  check_id(x, "relu");
  return push({Op::kRelu, {x, -1, -1}, nodes_[x].shape});
}

template <typename T>
int Graph<T>::avg_pool2(int x) {
  check_id(x, "avg_pool2");
  const Shape& xs = nodes_[x].shape;
  if (xs.size() != 3) graph_error("avg_pool2", "input must be HxWxC, got " + shape_str(xs));
  if (xs[0] % 2 || xs[1] % 2) graph_error("avg_pool2", "H and W must be even, got " + shape_str(xs));
  return push({Op::kAvgPool2, {x, -1, -1}, {xs[0] / 2, xs[1] / 2, xs[2]}});
}

template <typename T>
int Graph<T>::global_avg_pool(int x) {
  check_id(x, "global_avg_pool");
  const Shape& xs = nodes_[x].shape;
  if (xs.size() != 3) graph_error("global_avg_pool", "input must be HxWxC, got " + shape_str(xs));
  return push({Op::kGlobalAvgPool, {x, -1, -1}, {xs[2]}});
}

template <typename T>
int Graph<T>::add(int a, int b) {
  check_id(a, "add");
  check_id(b, "add");
  if (nodes_[a].shape != nodes_[b].shape)
    graph_error("add", "shape mismatch " + shape_str(nodes_[a].shape) + " vs " +
                           shape_str(nodes_[b].shape));
  return push({Op::kAdd, {a, b, -1}, nodes_[a].shape});
}

template <typename T>
int Graph<T>::mul(int a, int b) {
  check_id(a, "mul");
  check_id(b, "mul");
  if (nodes_[a].shape != nodes_[b].shape)
    graph_error("mul", "shape mismatch " + shape_str(nodes_[a].shape) + " vs " +
                           shape_str(nodes_[b].shape));
  return push({Op::kMul, {a, b, -1}, nodes_[a].shape});
}

template <typename T>
int Graph<T>::softmax_cross_entropy(int logits) {
  check_id(logits, "softmax_cross_entropy");
  const Shape& ls = nodes_[logits].shape;
  if (ls.size() != 1 || ls[0] < 2)
    graph_error("softmax_cross_entropy", "logits must be a vector of >= 2 classes, got " +
                                             shape_str(ls));
  return push({Op::kSoftmaxCrossEntropy, {logits, -1, -1}, {1}});
}

namespace {

template <typename T>
void mark_needed(const Graph<T>& g, int out, std::vector<char>& needed) {
  needed.assign(g.node_count(), 0);
  std::vector<int> stack{out};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    if (needed[id]) continue;
    needed[id] = 1;
    for (int in : g.node(id).in)
      if (in >= 0) stack.push_back(in);
  }
}

template <typename T>
void ensure_slot(Tensor<T>& t, const Shape& shape) {
  if (t.shape != shape) t = Tensor<T>(shape);
}

}  // namespace

template <typename T>
const Tensor<T>& forward(const Graph<T>& g, int out,
                         const std::vector<std::pair<int, const Tensor<T>*>>& feeds, int label,
                         Tape<T>& tape) {
  if (out < 0 || out >= g.node_count())
    throw std::invalid_argument("forward: output node out of range");
  tape.value.resize(g.node_count());
  tape.grad.resize(g.node_count());
  mark_needed(g, out, tape.needed);
  tape.out_node = out;
  tape.label = label;
  tape.forward_done = false;
  tape.backward_done = false;

  for (int id = 0; id <= out; ++id) {
    if (!tape.needed[id]) continue;
    const GraphNode& n = g.node(id);
    Tensor<T>& v = tape.value[id];
    switch (n.op) {
      case Op::kInput: {
        const Tensor<T>* fed = nullptr;
        for (const auto& [fid, t] : feeds)
          if (fid == id) fed = t;
        if (!fed) throw std::invalid_argument("forward: missing feed for input node " +
                                              std::to_string(id));
        if (fed->shape != n.shape)
          throw std::invalid_argument("forward: input node " + std::to_string(id) + " expects " +
                                      shape_str(n.shape) + ", got " + shape_str(fed->shape));
        v = *fed;
        break;
      }
      case Op::kParam:
        v = g.param_value(id);
        break;
      case Op::kConv2d: {
        const Tensor<T>& x = tape.value[n.in[0]];
        const Tensor<T>& w = tape.value[n.in[1]];
        const Tensor<T>& b = tape.value[n.in[2]];
        ensure_slot(v, n.shape);
        conv2d_forward(x.ptr(), x.shape[0], x.shape[1], x.shape[2], w.ptr(), w.shape[0],
                       w.shape[1], w.shape[3], b.ptr(), v.ptr());
        break;
      }
      case Op::kDense: {
        const Tensor<T>& x = tape.value[n.in[0]];
        const Tensor<T>& w = tape.value[n.in[1]];
        const Tensor<T>& b = tape.value[n.in[2]];
        ensure_slot(v, n.shape);
        dense_forward(x.ptr(), static_cast<int>(x.size()), w.ptr(), w.shape[1], b.ptr(), v.ptr());
        break;
      }
      case Op::kRelu: {
        const Tensor<T>& x = tape.value[n.in[0]];
        ensure_slot(v, n.shape);
        for (long long i = 0; i < x.size(); ++i) v.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
        break;
      }
      case Op::kAvgPool2: {
        const Tensor<T>& x = tape.value[n.in[0]];
        ensure_slot(v, n.shape);
        avgpool2_forward(x.ptr(), x.shape[0], x.shape[1], x.shape[2], v.ptr());
        break;
      }
      case Op::kGlobalAvgPool: {
        const Tensor<T>& x = tape.value[n.in[0]];
        ensure_slot(v, n.shape);
        global_avg_pool_forward(x.ptr(), x.shape[0], x.shape[1], x.shape[2], v.ptr());
        break;
      }
      case Op::kAdd: {
        const Tensor<T>& a = tape.value[n.in[0]];
        const Tensor<T>& b = tape.value[n.in[1]];
        ensure_slot(v, n.shape);
        for (long long i = 0; i < a.size(); ++i) v.data[i] = a.data[i] + b.data[i];
        break;
      }
      case Op::kMul: {
        const Tensor<T>& a = tape.value[n.in[0]];
        const Tensor<T>& b = tape.value[n.in[1]];
        ensure_slot(v, n.shape);
        for (long long i = 0; i < a.size(); ++i) v.data[i] = a.data[i] * b.data[i];
        break;
      }
      case Op::kSoftmaxCrossEntropy: {
        const Tensor<T>& l = tape.value[n.in[0]];
        const int classes = static_cast<int>(l.size());
        if (label < 0 || label >= classes)
          throw std::invalid_argument("forward: softmax_cross_entropy needs a label in [0," +
                                      std::to_string(classes) + "), got " + std::to_string(label));
        T mx = l.data[0];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, l.data[c]);
        T sum = T(0);
        for (int c = 0; c < classes; ++c) sum += std::exp(l.data[c] - mx);
        ensure_slot(v, n.shape);
        v.data[0] = mx + std::log(sum) - l.data[label];
        break;
      }
    }
  }
  tape.forward_done = true;
  return tape.value[out];
}

template <typename T>
void backward(const Graph<T>& g, Tape<T>& tape, bool param_grads) {
  if (!tape.forward_done) throw std::logic_error("backward: no forward pass on this tape");
  const int out = tape.out_node;
  if (shape_numel(g.node(out).shape) != 1)
    throw std::invalid_argument("backward: output of " + std::string(op_name(g.node(out).op)) +
                                " is not scalar");
  for (int id = 0; id <= out; ++id) {
    if (!tape.needed[id]) continue;
    ensure_slot(tape.grad[id], g.node(id).shape);
    tape.grad[id].fill(T(0));
  }
  tape.grad[out].data[0] = T(1);

  for (int id = out; id >= 0; --id) {
    if (!tape.needed[id]) continue;
    const GraphNode& n = g.node(id);
    const Tensor<T>& dv = tape.grad[id];
    switch (n.op) {
      case Op::kInput:
      case Op::kParam:
        break;
      case Op::kConv2d: {
        const Tensor<T>& x = tape.value[n.in[0]];
        const Tensor<T>& w = tape.value[n.in[1]];
        Tensor<T>& dx = tape.grad[n.in[0]];
        Tensor<T> dxt(x.shape), dwt, dbt;
        if (param_grads) {
          dwt = Tensor<T>(w.shape);
          dbt = Tensor<T>(Shape{w.shape[3]});
        }
        conv2d_backward(x.ptr(), x.shape[0], x.shape[1], x.shape[2], w.ptr(), w.shape[0],
                        w.shape[1], w.shape[3], dv.ptr(), dxt.ptr(),
                        param_grads ? dwt.ptr() : nullptr, param_grads ? dbt.ptr() : nullptr);
        for (long long i = 0; i < dx.size(); ++i) dx.data[i] += dxt.data[i];
        if (param_grads) {
          Tensor<T>& dw = tape.grad[n.in[1]];
          Tensor<T>& db = tape.grad[n.in[2]];
          for (long long i = 0; i < dw.size(); ++i) dw.data[i] += dwt.data[i];
          for (long long i = 0; i < db.size(); ++i) db.data[i] += dbt.data[i];
        }
        break;
      }
      case Op::kDense: {
        const Tensor<T>& x = tape.value[n.in[0]];
        const Tensor<T>& w = tape.value[n.in[1]];
        Tensor<T>& dx = tape.grad[n.in[0]];
        Tensor<T> dxt(x.shape), dwt, dbt;
        if (param_grads) {
          dwt = Tensor<T>(w.shape);
          dbt = Tensor<T>(Shape{w.shape[1]});
        }
        dense_backward(x.ptr(), static_cast<int>(x.size()), w.ptr(), w.shape[1], dv.ptr(),
                       dxt.ptr(), param_grads ? dwt.ptr() : nullptr,
                       param_grads ? dbt.ptr() : nullptr);
        for (long long i = 0; i < dx.size(); ++i) dx.data[i] += dxt.data[i];
        if (param_grads) {
          Tensor<T>& dw = tape.grad[n.in[1]];
          Tensor<T>& db = tape.grad[n.in[2]];
          for (long long i = 0; i < dw.size(); ++i) dw.data[i] += dwt.data[i];
          for (long long i = 0; i < db.size(); ++i) db.data[i] += dbt.data[i];
        }
        break;
      }
      case Op::kRelu: {
        const Tensor<T>& x = tape.value[n.in[0]];
        Tensor<T>& dx = tape.grad[n.in[0]];
        // subgradient at 0 taken as 0
        for (long long i = 0; i < x.size(); ++i)
          if (x.data[i] > T(0)) dx.data[i] += dv.data[i];
        break;
      }
      case Op::kAvgPool2: {
        const Tensor<T>& x = tape.value[n.in[0]];
        Tensor<T>& dx = tape.grad[n.in[0]];
        Tensor<T> dxt(x.shape);
        avgpool2_backward(dv.ptr(), x.shape[0], x.shape[1], x.shape[2], dxt.ptr());
        for (long long i = 0; i < dx.size(); ++i) dx.data[i] += dxt.data[i];
        break;
      }
      case Op::kGlobalAvgPool: {
        const Tensor<T>& x = tape.value[n.in[0]];
        Tensor<T>& dx = tape.grad[n.in[0]];
        Tensor<T> dxt(x.shape);
        global_avg_pool_backward(dv.ptr(), x.shape[0], x.shape[1], x.shape[2], dxt.ptr());
        for (long long i = 0; i < dx.size(); ++i) dx.data[i] += dxt.data[i];
        break;
      }
      case Op::kAdd: {
        Tensor<T>& da = tape.grad[n.in[0]];
        Tensor<T>& db = tape.grad[n.in[1]];
        for (long long i = 0; i < dv.size(); ++i) {
          da.data[i] += dv.data[i];
          db.data[i] += dv.data[i];
        }
        break;
      }
      case Op::kMul: {
        const Tensor<T>& a = tape.value[n.in[0]];
        const Tensor<T>& b = tape.value[n.in[1]];
        Tensor<T>& da = tape.grad[n.in[0]];
        Tensor<T>& db = tape.grad[n.in[1]];
        for (long long i = 0; i < dv.size(); ++i) {
          da.data[i] += dv.data[i] * b.data[i];
          db.data[i] += dv.data[i] * a.data[i];
        }
        break;
      }
      case Op::kSoftmaxCrossEntropy: {
        const Tensor<T>& l = tape.value[n.in[0]];
        Tensor<T>& dl = tape.grad[n.in[0]];
        const int classes = static_cast<int>(l.size());
        T mx = l.data[0];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, l.data[c]);
        T sum = T(0);
        for (int c = 0; c < classes; ++c) sum += std::exp(l.data[c] - mx);
        const T g0 = dv.data[0];
        for (int c = 0; c < classes; ++c) {
          T p = std::exp(l.data[c] - mx) / sum;
          if (c == tape.label) p -= T(1);
          dl.data[c] += g0 * p;
        }
        break;
      }
    }
  }
  tape.backward_done = true;
}

template <typename T>
Tensor<T> grad_input(const Graph<T>& g, int input, Tape<T>& tape) {
  if (!tape.forward_done) throw std::logic_error("grad_input: no forward pass on this tape");
  if (!tape.backward_done) backward(g, tape);
  if (input < 0 || input >= g.node_count() || !tape.needed[input])
    throw std::invalid_argument("grad_input: node " + std::to_string(input) +
                                " is not part of the evaluated subgraph");
  return tape.grad[input];
}

template <typename T>
FiniteDiffReport finite_diff_check(const Graph<T>& g, int out, int input, const Tensor<T>& x,
                                   int label, T h) {
  if (!(h > T(0))) throw std::invalid_argument("finite_diff_check: h must be positive");
  Tape<T> tape;
  forward(g, out, {{input, &x}}, label, tape);
  const Tensor<T> analytic = grad_input(g, input, tape);

  // relu pre-activation sign snapshot (-1, 0, +1) for the center point
  std::vector<int> relu_nodes;
  for (int id = 0; id <= out; ++id)
    if (tape.needed[id] && g.node(id).op == Op::kRelu) relu_nodes.push_back(g.node(id).in[0]);
  auto relu_signs = [&](const Tape<T>& t, std::vector<int8_t>& sig) {
    sig.clear();
    for (int rid : relu_nodes)
      for (const T v : t.value[rid].data)
        sig.push_back(v > T(0) ? 1 : (v < T(0) ? -1 : 0));
  };
  std::vector<int8_t> sig_c, sig_p, sig_m;
  relu_signs(tape, sig_c);

  FiniteDiffReport rep;
  Tensor<T> xp = x, xm = x;
  Tape<T> tp, tm;
  for (long long i = 0; i < x.size(); ++i) {
    xp.data[i] = x.data[i] + h;
    xm.data[i] = x.data[i] - h;
    const T lp = forward(g, out, {{input, &xp}}, label, tp).data[0];
    const T lm = forward(g, out, {{input, &xm}}, label, tm).data[0];
    xp.data[i] = x.data[i];
    xm.data[i] = x.data[i];
    relu_signs(tp, sig_p);
    relu_signs(tm, sig_m);
    if (sig_p != sig_c || sig_m != sig_c) {
      ++rep.excluded;
      continue;
    }
    const double fd = (static_cast<double>(lp) - static_cast<double>(lm)) / (2.0 * h);
    const double an = static_cast<double>(analytic.data[i]);
    const double rel = std::abs(an - fd) / (std::abs(an) + 1e-8);
    rep.max_rel_error = std::max(rep.max_rel_error, rel);
    ++rep.checked;
  }
  return rep;
}

template class Graph<float>;
template class Graph<double>;

template const Tensor<float>& forward(const Graph<float>&, int,
                                      const std::vector<std::pair<int, const Tensor<float>*>>&,
                                      int, Tape<float>&);
template const Tensor<double>& forward(const Graph<double>&, int,
                                       const std::vector<std::pair<int, const Tensor<double>*>>&,
                                       int, Tape<double>&);
template void backward(const Graph<float>&, Tape<float>&, bool);
template void backward(const Graph<double>&, Tape<double>&, bool);
template Tensor<float> grad_input(const Graph<float>&, int, Tape<float>&);
template Tensor<double> grad_input(const Graph<double>&, int, Tape<double>&);
template FiniteDiffReport finite_diff_check(const Graph<float>&, int, int, const Tensor<float>&,
                                            int, float);
template FiniteDiffReport finite_diff_check(const Graph<double>&, int, int, const Tensor<double>&,
                                            int, double);

}  // namespace katana
