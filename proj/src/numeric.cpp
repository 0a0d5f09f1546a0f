#include "cgsa/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cgsa {

std::vector<double> softmax(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("softmax: empty input");
  double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (auto& o : out) o /= sum;
  return out;
}

Tensor softmax_axis(const Tensor& m, int axis) {
  if (m.rank() != 2) throw std::invalid_argument("softmax_axis: rank-2 input required");
  if (axis != 0 && axis != 1) throw std::invalid_argument("softmax_axis: axis must be 0 or 1");
  const std::size_t r = m.rows(), c = m.cols();
  if (r == 0 || c == 0) throw std::invalid_argument("softmax_axis: empty axis");
  Tensor out(r, c);
  if (axis == 1) {
    for (std::size_t i = 0; i < r; ++i) {
      double mx = m.at(i, 0);
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, m.at(i, j));
      double sum = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        out.at(i, j) = std::exp(m.at(i, j) - mx);
        sum += out.at(i, j);
      }
      for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= sum;
    }
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      double mx = m.at(0, j);
      for (std::size_t i = 1; i < r; ++i) mx = std::max(mx, m.at(i, j));
      double sum = 0.0;
      for (std::size_t i = 0; i < r; ++i) {
        out.at(i, j) = std::exp(m.at(i, j) - mx);
        sum += out.at(i, j);
      }
      for (std::size_t i = 0; i < r; ++i) out.at(i, j) /= sum;
    }
  }
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

double cosine_similarity(const std::vector<double>& a,
                         const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_similarity: length mismatch");
  double na = norm2(a), nb = norm2(b);
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("cosine_similarity: zero-norm vector");
  double c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

double cosine_similarity_or_zero(const std::vector<double>& a,
                                 const std::vector<double>& b) {
  double na = norm2(a), nb = norm2(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

GruParams GruParams::zeros(std::size_t d) {
  GruParams p;
  p.w_update = Tensor(d, d);
  p.u_update = Tensor(d, d);
  p.b_update = Tensor(std::vector<double>(d, 0.0));
  p.w_reset = Tensor(d, d);
  p.u_reset = Tensor(d, d);
  p.b_reset = Tensor(std::vector<double>(d, 0.0));
  p.w_cand = Tensor(d, d);
  p.u_cand = Tensor(d, d);
  p.b_cand = Tensor(std::vector<double>(d, 0.0));
  return p;
}

namespace {
// y = x * W + b for a row vector x.
std::vector<double> affine(const std::vector<double>& x, const Tensor& w,
                           const Tensor& b) {
  const std::size_t d_in = x.size(), d_out = w.cols();
  if (w.rows() != d_in || b.numel() != d_out)
    throw std::invalid_argument("gru_cell: parameter shape mismatch");
  std::vector<double> y(d_out);
  for (std::size_t j = 0; j < d_out; ++j) {
    double s = b.at(j);
    for (std::size_t i = 0; i < d_in; ++i) s += x[i] * w.at(i, j);
    y[j] = s;
  }
  return y;
}
}  // namespace

std::vector<double> gru_cell(const std::vector<double>& input,
                             const std::vector<double>& hidden,
                             const GruParams& params) {
  const std::size_t d = hidden.size();
  if (input.size() != d)
    throw std::invalid_argument("gru_cell: input/hidden length mismatch");
  auto wu = affine(input, params.w_update, params.b_update);
  auto uu = affine(hidden, params.u_update, Tensor(std::vector<double>(d, 0.0)));
  auto wr = affine(input, params.w_reset, params.b_reset);
  auto ur = affine(hidden, params.u_reset, Tensor(std::vector<double>(d, 0.0)));
  std::vector<double> u(d), r(d);
  for (std::size_t i = 0; i < d; ++i) {
    u[i] = sigmoid(wu[i] + uu[i]);
    r[i] = sigmoid(wr[i] + ur[i]);
  }
  std::vector<double> rh(d);
  for (std::size_t i = 0; i < d; ++i) rh[i] = r[i] * hidden[i];
  auto wc = affine(input, params.w_cand, params.b_cand);
  auto uc = affine(rh, params.u_cand, Tensor(std::vector<double>(d, 0.0)));
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d; ++i) {
    double cand = std::tanh(wc[i] + uc[i]);
    out[i] = (1.0 - u[i]) * hidden[i] + u[i] * cand;
  }
  return out;
}

std::vector<double> finite_diff_grad(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& x, double step) {
  if (step <= 0.0) throw std::invalid_argument("finite_diff_grad: step must be > 0");
  std::vector<double> g(x.size());
  std::vector<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    double hi = f(probe);
    probe[i] = x[i] - step;
    double lo = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(hi) || !std::isfinite(lo))
      throw std::invalid_argument("finite_diff_grad: non-finite evaluation");
    g[i] = (hi - lo) / (2.0 * step);
  }
  return g;
}

void sgd_update(Tensor& params, const Tensor& grads, double lr) {
  if (!params.same_shape(grads))
    throw std::invalid_argument("sgd_update: shape mismatch");
  if (lr <= 0.0) throw std::invalid_argument("sgd_update: lr must be > 0");
  for (std::size_t i = 0; i < params.data.size(); ++i)
    params.data[i] -= lr * grads.data[i];
}

}  // namespace cgsa
