#pragma once

#include <functional>
#include <vector>

#include "cgsa/tensor.hpp"

namespace cgsa {

// Max-stabilized softmax of a vector; rejects empty input.
std::vector<double> softmax(const std::vector<double>& v);

// Softmax along one axis of a matrix. axis 0 normalizes each column (over
// rows), axis 1 normalizes each row (over columns).
Tensor softmax_axis(const Tensor& m, int axis);

// Cosine similarity in [-1, 1]; throws on length mismatch or zero norm.
double cosine_similarity(const std::vector<double>& a,
                         const std::vector<double>& b);
// Variant that reports zero-norm pairs as 0 instead of throwing; used where
// the caller has a defined fallback (slot-query matching).
double cosine_similarity_or_zero(const std::vector<double>& a,
                                 const std::vector<double>& b);

double dot(const std::vector<double>& a, const std::vector<double>& b);
double norm2(const std::vector<double>& a);

// Shared weights of one gated recurrent cell acting on d-dim vectors.
// update/reset/candidate each have an input matrix (d x d), a hidden matrix
// (d x d) and a bias (d).
struct GruParams {
  Tensor w_update, u_update, b_update;
  Tensor w_reset, u_reset, b_reset;
  Tensor w_cand, u_cand, b_cand;

  static GruParams zeros(std::size_t d);
};

// h' = (1 - u) .* h + u .* tanh(Wc x + Uc (r .* h) + bc), with update gate
// u = sigmoid(Wu x + Uu h + bu) and reset gate r = sigmoid(Wr x + Ur h + br).
std::vector<double> gru_cell(const std::vector<double>& input,
                             const std::vector<double>& hidden,
                             const GruParams& params);

// Central difference (f(x+h e_i) - f(x-h e_i)) / (2h) per coordinate.
std::vector<double> finite_diff_grad(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& x, double step);

// p <- p - lr * g, elementwise; shapes must match.
void sgd_update(Tensor& params, const Tensor& grads, double lr);

double sigmoid(double x);

}  // namespace cgsa
