#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "cgsa/tensor.hpp"

namespace cgsa {

// Handle to one node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-accumulation gradient tape. Operations evaluate eagerly and record
// a backward closure; creation order is the topological order, so backward()
// is a single reverse sweep that visits each node exactly once. Scalars are
// rank-1 tensors of one element.
class Tape {
 public:
  Tape();

  // Leaves.
  Var leaf(const Tensor& value, bool requires_grad = true);
  Var constant(const Tensor& value);
  Var constant_scalar(double value);

  // Elementwise, shapes must match.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var min_elem(Var a, Var b);
  Var max_elem(Var a, Var b);

  // Elementwise unary.
  Var neg(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var sqrt(Var a);
  Var square(Var a);
  Var abs(Var a);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var relu(Var a);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);

  // Linear algebra.
  Var matmul(Var a, Var b);     // (p x q) * (q x r)
  Var matmul_nt(Var a, Var b);  // a * b^T : (p x q) * (r x q) -> p x r
  Var transpose(Var a);
  Var dot(Var a, Var b);  // sum of elementwise product -> scalar

  // Broadcast: each row of m plus / times the vector row.
  Var add_row(Var m, Var row);
  Var mul_row(Var m, Var row);

  // Reductions.
  Var sum(Var a);       // scalar
  Var sum_rows(Var a);  // (m x n) -> (m x 1)
  Var sum_cols(Var a);  // (m x n) -> (1 x n)

  // Row/column softmax and row normalization (rows must sum > 0).
  Var softmax_rows(Var a);
  Var softmax_cols(Var a);
  Var normalize_rows(Var a);

  // Shape ops.
  Var reshape(Var a, std::vector<std::size_t> shape);
  Var slice_rows(Var a, std::size_t start, std::size_t count);
  Var concat_rows(const std::vector<Var>& parts);
  Var select_rows(Var a, const std::vector<std::size_t>& indices);
  Var entry(Var a, std::size_t r, std::size_t c);  // scalar

  // Spatial-broadcast helper: slot k copied to every one of n_positions rows,
  // concatenated with a constant positional code (n_positions x p), giving
  // (K * n_positions) x (d + p).
  Var broadcast_slots_concat(Var slots, const Tensor& positional);

  // out[i,:] = sum_k masks[k,i] * per_slot[k*n + i, :], the masked mixture
  // of per-slot reconstructions.
  Var mask_combine(Var per_slot, Var masks, std::size_t n_tokens);

  // Values and gradients.
  const Tensor& value(Var v) const;
  double scalar(Var v) const;
  void backward(Var output);  // output must be scalar
  const Tensor& grad(Var v) const;
  bool has_grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    mutable Tensor grad;
    bool needs_grad = false;
    mutable bool grad_alloc = false;
    std::function<void(Tape&)> backward;
  };

  std::vector<Node> nodes_;
  bool ran_backward_ = false;

  int push(Tensor value, bool needs_grad, std::function<void(Tape&)> bwd);
  Tensor& grad_ref(int id);
  void accumulate(int id, const Tensor& g);
  const Tensor& val(int id) const { return nodes_[id].value; }
  void check(Var v, const char* op) const;
};

}  // namespace cgsa
