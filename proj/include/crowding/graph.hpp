#pragma once

// Tape-based reverse-mode differentiation over 2-D tensors.
//
// A Graph records every op in construction order, which is a valid
// topological order by construction. backward() walks the tape in reverse and
// adds dLoss/dParam into each Param's grad slot; repeated calls accumulate
// until Param::zero_grad().

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "crowding/tensor.hpp"

namespace crowding {

struct Param {
  Param(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;
  bool requires_grad = true;

  void zero_grad() { grad.fill(0.0); }
};

using ParamPtr = std::shared_ptr<Param>;

ParamPtr make_param(std::string name, Tensor value);

// Handle to a node on one Graph.
struct Var {
  std::size_t id = 0;
};

// Number of probabilities pushed to the clamp bounds inside log_clamped.
struct ClampStats {
  std::size_t count = 0;
};

class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Var param(const ParamPtr& p);
  Var constant(Tensor t);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  // Gradient of the last backward() loss w.r.t. v; empty if v was unreached.
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  // a (B x N) + bias (1 x N or N), broadcast over rows.
  Var add_bias(Var a, Var bias);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var softmax_rows(Var a);
  Var log_softmax_rows(Var a);
  // log(clamp(a, lo, hi)); gradient is zero where the clamp is active.
  Var log_clamped(Var a, double lo, double hi, ClampStats* stats = nullptr);
  Var concat_cols(std::span<const Var> parts);
  Var reshape(Var a, std::size_t rows, std::size_t cols);
  // out[b] = a[b, index[b]] as a (B x 1) column.
  Var pick(Var a, std::span<const std::size_t> index);
  // out[b, :] = a[index[b], :].
  Var gather_rows(Var a, std::span<const std::size_t> index);
  Var sum(Var a);
  Var mean(Var a);
  // sum_i weights[i] * a[i]; weights is a constant of a's size.
  Var weighted_sum(Var a, const Tensor& weights);
  // out[b] = u[b]^T * stack[cls[b]] * v[b] where stack is (C*m x m), one
  // m x m block per class.
  Var bilinear_select(Var u, Var stack, Var v, std::span<const std::size_t> cls);
  // out[b, :] = z[b, :] * stack[which[b]] where stack is (R*C x C).
  Var select_matmul(Var z, Var stack, std::span<const std::size_t> which);

  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Graph&, const Node&)> backprop;
    Param* param = nullptr;
  };

  Var push(Tensor value, bool requires_grad,
           std::function<void(Graph&, const Node&)> backprop);
  bool needs(Var v) const { return grad_enabled_ && nodes_[v.id].requires_grad; }
  Tensor& grad_slot(Var v);

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

}  // namespace crowding
