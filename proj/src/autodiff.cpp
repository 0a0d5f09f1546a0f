#include "cgsa/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cgsa {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Tensor scalar_tensor(double v) { return Tensor(std::vector<double>{v}); }

}  // namespace

Tape::Tape() { nodes_.reserve(1024); }

int Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&)> bwd) {
  require(value.all_finite(), "Tape: operation produced a non-finite value");
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.backward = std::move(bwd);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check(Var v, const char* op) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument(std::string(op) + ": invalid Var handle");
}

Tensor& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (!n.grad_alloc) {
    n.grad = zeros_like(n.value);
    n.grad_alloc = true;
  }
  return n.grad;
}

void Tape::accumulate(int id, const Tensor& g) {
  if (!nodes_[id].needs_grad) return;
  Tensor& dst = grad_ref(id);
  for (std::size_t i = 0; i < g.data.size(); ++i) dst.data[i] += g.data[i];
}

Var Tape::leaf(const Tensor& value, bool requires_grad) {
  value.validate("Tape::leaf");
  return Var{push(value, requires_grad, nullptr)};
}

Var Tape::constant(const Tensor& value) { return leaf(value, false); }

Var Tape::constant_scalar(double v) { return constant(scalar_tensor(v)); }

const Tensor& Tape::value(Var v) const {
  check(v, "value");
  return nodes_[v.id].value;
}

double Tape::scalar(Var v) const {
  check(v, "scalar");
  require(nodes_[v.id].value.numel() == 1, "scalar: Var is not a scalar");
  return nodes_[v.id].value.data[0];
}

const Tensor& Tape::grad(Var v) const {
  check(v, "grad");
  require(ran_backward_, "grad: backward() has not run");
  const Node& n = nodes_[v.id];
  require(n.needs_grad, "grad: node does not track gradients");
  if (!n.grad_alloc) {
    // Never touched by the sweep: gradient is identically zero.
    n.grad = zeros_like(n.value);
    n.grad_alloc = true;
  }
  return n.grad;
}

bool Tape::has_grad(Var v) const {
  check(v, "has_grad");
  return nodes_[v.id].needs_grad;
}

void Tape::backward(Var output) {
  check(output, "backward");
  require(nodes_[output.id].value.numel() == 1,
          "backward: output must be scalar");
  grad_ref(output.id).data[0] = 1.0;
  ran_backward_ = true;
  for (int id = output.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || !n.grad_alloc || !n.backward) continue;
    n.backward(*this);
  }
}

// ---- elementwise binary ----

#define CGSA_BINARY_PROLOG(name)                                       \
  check(a, name);                                                      \
  check(b, name);                                                      \
  const Tensor& av = val(a.id);                                        \
  const Tensor& bv = val(b.id);                                        \
  require(av.same_shape(bv), name ": shape mismatch");                 \
  bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;        \
  Tensor out = av;

Var Tape::add(Var a, Var b) {
  CGSA_BINARY_PROLOG("add")
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
  int ai = a.id, bi = b.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ai, bi](Tape& t) {
    t.accumulate(ai, t.nodes_[id].grad);
    t.accumulate(bi, t.nodes_[id].grad);
  };
  return Var{id};
}

Var Tape::sub(Var a, Var b) {
  CGSA_BINARY_PROLOG("sub")
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];
  int ai = a.id, bi = b.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ai, bi](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;
    t.accumulate(ai, g);
    if (t.nodes_[bi].needs_grad) {
      Tensor neg = g;
      for (auto& v : neg.data) v = -v;
      t.accumulate(bi, neg);
    }
  };
  return Var{id};
}

Var Tape::mul(Var a, Var b) {
  CGSA_BINARY_PROLOG("mul")
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
  int ai = a.id, bi = b.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ai, bi](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;
    if (t.nodes_[ai].needs_grad) {
      Tensor da = g;
      const Tensor& bv2 = t.val(bi);
      for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] *= bv2.data[i];
      t.accumulate(ai, da);
    }
    if (t.nodes_[bi].needs_grad) {
      Tensor db = g;
      const Tensor& av2 = t.val(ai);
      for (std::size_t i = 0; i < db.data.size(); ++i) db.data[i] *= av2.data[i];
      t.accumulate(bi, db);
    }
  };
  return Var{id};
}

Var Tape::div(Var a, Var b) {
  CGSA_BINARY_PROLOG("div")
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] /= bv.data[i];
  int ai = a.id, bi = b.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ai, bi](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& av2 = t.val(ai);
    const Tensor& bv2 = t.val(bi);
    if (t.nodes_[ai].needs_grad) {
      Tensor da = g;
      for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] /= bv2.data[i];
      t.accumulate(ai, da);
    }
    if (t.nodes_[bi].needs_grad) {
      Tensor db = g;
      for (std::size_t i = 0; i < db.data.size(); ++i)
        db.data[i] *= -av2.data[i] / (bv2.data[i] * bv2.data[i]);
      t.accumulate(bi, db);
    }
  };
  return Var{id};
}

Var Tape::min_elem(Var a, Var b) {
  CGSA_BINARY_PROLOG("min_elem")
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = std::min(out.data[i], bv.data[i]);
  int ai = a.id, bi = b.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ai, bi](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& av2 = t.val(ai);
    const Tensor& bv2 = t.val(bi);
    Tensor da = zeros_like(av2), db = zeros_like(bv2);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      // Ties route the subgradient to the first argument.
      if (av2.data[i] <= bv2.data[i]) da.data[i] = g.data[i];
      else db.data[i] = g.data[i];
    }
    t.accumulate(ai, da);
    t.accumulate(bi, db);
  };
  return Var{id};
}

Var Tape::max_elem(Var a, Var b) {
  CGSA_BINARY_PROLOG("max_elem")
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = std::max(out.data[i], bv.data[i]);
  int ai = a.id, bi = b.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ai, bi](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& av2 = t.val(ai);
    const Tensor& bv2 = t.val(bi);
    Tensor da = zeros_like(av2), db = zeros_like(bv2);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
      if (av2.data[i] >= bv2.data[i]) da.data[i] = g.data[i];
      else db.data[i] = g.data[i];
    }
    t.accumulate(ai, da);
    t.accumulate(bi, db);
  };
  return Var{id};
}

#undef CGSA_BINARY_PROLOG

// ---- elementwise unary ----

Var Tape::neg(Var a) { return scale(a, -1.0); }

#define CGSA_UNARY(name, fwd_expr, grad_expr)                           \
  Var Tape::name(Var a) {                                               \
    check(a, #name);                                                    \
    const Tensor& av = val(a.id);                                       \
    Tensor out = av;                                                    \
    for (auto& x : out.data) {                                          \
      x = (fwd_expr);                                                   \
    }                                                                   \
    bool ng = nodes_[a.id].needs_grad;                                  \
    int ai = a.id;                                                      \
    int id = push(std::move(out), ng, nullptr);                         \
    nodes_[id].backward = [id, ai](Tape& t) {                           \
      const Tensor& g = t.nodes_[id].grad;                              \
      const Tensor& xv = t.val(ai);                                     \
      const Tensor& yv = t.val(id);                                     \
      (void)xv;                                                         \
      (void)yv;                                                         \
      Tensor da = zeros_like(xv);                                       \
      for (std::size_t i = 0; i < g.data.size(); ++i) {                 \
        double x = xv.data[i], y = yv.data[i];                          \
        (void)x;                                                        \
        (void)y;                                                        \
        da.data[i] = g.data[i] * (grad_expr);                           \
      }                                                                 \
      t.accumulate(ai, da);                                             \
    };                                                                  \
    return Var{id};                                                     \
  }

CGSA_UNARY(exp, std::exp(x), y)
CGSA_UNARY(log, std::log(x), 1.0 / x)
CGSA_UNARY(sqrt, std::sqrt(x), 0.5 / y)
CGSA_UNARY(square, x* x, 2.0 * x)
CGSA_UNARY(abs, std::fabs(x), (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0)))
CGSA_UNARY(tanh, std::tanh(x), 1.0 - y * y)
CGSA_UNARY(sigmoid, 1.0 / (1.0 + std::exp(-x)), y*(1.0 - y))
CGSA_UNARY(relu, x > 0.0 ? x : 0.0, (x > 0.0 ? 1.0 : 0.0))

#undef CGSA_UNARY

Var Tape::scale(Var a, double c) {
  check(a, "scale");
  Tensor out = val(a.id);
  for (auto& x : out.data) x *= c;
  bool ng = nodes_[a.id].needs_grad;
  int ai = a.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ai, c](Tape& t) {
    Tensor da = t.nodes_[id].grad;
    for (auto& x : da.data) x *= c;
    t.accumulate(ai, da);
  };
  return Var{id};
}

Var Tape::add_scalar(Var a, double c) {
  check(a, "add_scalar");
  Tensor out = val(a.id);
  for (auto& x : out.data) x += c;
  bool ng = nodes_[a.id].needs_grad;
  int ai = a.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ai](Tape& t) {
    t.accumulate(ai, t.nodes_[id].grad);
  };
  return Var{id};
}

// ---- linear algebra ----

namespace {
// C (p x r) = A (p x q) * B (q x r), accumulated into zero-initialized out.
void matmul_raw(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < q; ++k) {
      const double av = a.data[i * q + k];
      if (av == 0.0) continue;
      const double* brow = &b.data[k * r];
      double* orow = &out.data[i * r];
      for (std::size_t j = 0; j < r; ++j) orow[j] += av * brow[j];
    }
  }
}

// C (p x r) = A (p x q) * B^T with B (r x q).
void matmul_nt_raw(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t p = a.rows(), q = a.cols(), r = b.rows();
  for (std::size_t i = 0; i < p; ++i) {
    const double* arow = &a.data[i * q];
    for (std::size_t j = 0; j < r; ++j) {
      const double* brow = &b.data[j * q];
      double s = 0.0;
      for (std::size_t k = 0; k < q; ++k) s += arow[k] * brow[k];
      out.data[i * r + j] = s;
    }
  }
}

// C (p x r) = A^T (p x q stored as q x p) * B (q x r).
void matmul_tn_raw(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t q = a.rows(), p = a.cols(), r = b.cols();
  for (std::size_t k = 0; k < q; ++k) {
    const double* arow = &a.data[k * p];
    const double* brow = &b.data[k * r];
    for (std::size_t i = 0; i < p; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* orow = &out.data[i * r];
      for (std::size_t j = 0; j < r; ++j) orow[j] += av * brow[j];
    }
  }
}
}  // namespace

Var Tape::matmul(Var a, Var b) {
  check(a, "matmul");
  check(b, "matmul");
  const Tensor& av = val(a.id);
  const Tensor& bv = val(b.id);
  require(av.cols() == bv.rows(), "matmul: inner dimension mismatch");
  Tensor out(av.rows(), bv.cols());
  matmul_raw(av, bv, out);
  bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  int ai = a.id, bi = b.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ai, bi](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& av2 = t.val(ai);
    const Tensor& bv2 = t.val(bi);
    if (t.nodes_[ai].needs_grad) {
      Tensor da(av2.rows(), av2.cols());
      matmul_nt_raw(g, bv2, da);  // dA = G * B^T
      t.accumulate(ai, da);
    }
    if (t.nodes_[bi].needs_grad) {
      Tensor db(bv2.rows(), bv2.cols());
      matmul_tn_raw(av2, g, db);  // dB = A^T * G
      t.accumulate(bi, db);
    }
  };
  return Var{id};
}

Var Tape::matmul_nt(Var a, Var b) {
  check(a, "matmul_nt");
  check(b, "matmul_nt");
  const Tensor& av = val(a.id);
  const Tensor& bv = val(b.id);
  require(av.cols() == bv.cols(), "matmul_nt: inner dimension mismatch");
  Tensor out(av.rows(), bv.rows());
  matmul_nt_raw(av, bv, out);
  bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  int ai = a.id, bi = b.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ai, bi](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;  // p x r
    const Tensor& av2 = t.val(ai);        // p x q
    const Tensor& bv2 = t.val(bi);        // r x q
    if (t.nodes_[ai].needs_grad) {
      Tensor da(av2.rows(), av2.cols());
      matmul_raw(g, bv2, da);  // dA = G * B
      t.accumulate(ai, da);
    }
    if (t.nodes_[bi].needs_grad) {
      Tensor db(bv2.rows(), bv2.cols());
      matmul_tn_raw(g, av2, db);  // dB = G^T * A
      t.accumulate(bi, db);
    }
  };
  return Var{id};
}

Var Tape::transpose(Var a) {
  check(a, "transpose");
  const Tensor& av = val(a.id);
  Tensor out(av.cols(), av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out.at(j, i) = av.at(i, j);
  bool ng = nodes_[a.id].needs_grad;
  int ai = a.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ai](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;
    Tensor da(g.cols(), g.rows());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) da.at(j, i) = g.at(i, j);
    t.accumulate(ai, da);
  };
  return Var{id};
}

Var Tape::dot(Var a, Var b) {
  check(a, "dot");
  check(b, "dot");
  const Tensor& av = val(a.id);
  const Tensor& bv = val(b.id);
  require(av.numel() == bv.numel(), "dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < av.data.size(); ++i) s += av.data[i] * bv.data[i];
  bool ng = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  int ai = a.id, bi = b.id;
  int id = push(scalar_tensor(s), ng, nullptr);
  nodes_[id].backward = [id, ai, bi](Tape& t) {
    double g = t.nodes_[id].grad.data[0];
    const Tensor& av2 = t.val(ai);
    const Tensor& bv2 = t.val(bi);
    if (t.nodes_[ai].needs_grad) {
      Tensor da = bv2;
      for (auto& x : da.data) x *= g;
      da.shape = av2.shape;
      t.accumulate(ai, da);
    }
    if (t.nodes_[bi].needs_grad) {
      Tensor db = av2;
      for (auto& x : db.data) x *= g;
      db.shape = bv2.shape;
      t.accumulate(bi, db);
    }
  };
  return Var{id};
}

Var Tape::add_row(Var m, Var row) {
  check(m, "add_row");
  check(row, "add_row");
  const Tensor& mv = val(m.id);
  const Tensor& rv = val(row.id);
  require(rv.numel() == mv.cols(), "add_row: row length mismatch");
  Tensor out = mv;
  const std::size_t r = mv.rows(), c = mv.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] += rv.data[j];
  bool ng = nodes_[m.id].needs_grad || nodes_[row.id].needs_grad;
  int mi = m.id, ri = row.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, mi, ri](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;
    t.accumulate(mi, g);
    if (t.nodes_[ri].needs_grad) {
      const Tensor& rv2 = t.val(ri);
      Tensor dr = zeros_like(rv2);
      const std::size_t r2 = g.rows(), c2 = g.cols();
      for (std::size_t i = 0; i < r2; ++i)
        for (std::size_t j = 0; j < c2; ++j) dr.data[j] += g.data[i * c2 + j];
      t.accumulate(ri, dr);
    }
  };
  return Var{id};
}

Var Tape::mul_row(Var m, Var row) {
  check(m, "mul_row");
  check(row, "mul_row");
  const Tensor& mv = val(m.id);
  const Tensor& rv = val(row.id);
  require(rv.numel() == mv.cols(), "mul_row: row length mismatch");
  Tensor out = mv;
  const std::size_t r = mv.rows(), c = mv.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] *= rv.data[j];
  bool ng = nodes_[m.id].needs_grad || nodes_[row.id].needs_grad;
  int mi = m.id, ri = row.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, mi, ri](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& mv2 = t.val(mi);
    const Tensor& rv2 = t.val(ri);
    const std::size_t r2 = mv2.rows(), c2 = mv2.cols();
    if (t.nodes_[mi].needs_grad) {
      Tensor dm = g;
      for (std::size_t i = 0; i < r2; ++i)
        for (std::size_t j = 0; j < c2; ++j) dm.data[i * c2 + j] *= rv2.data[j];
      t.accumulate(mi, dm);
    }
    if (t.nodes_[ri].needs_grad) {
      Tensor dr = zeros_like(rv2);
      for (std::size_t i = 0; i < r2; ++i)
        for (std::size_t j = 0; j < c2; ++j)
          dr.data[j] += g.data[i * c2 + j] * mv2.data[i * c2 + j];
      t.accumulate(ri, dr);
    }
  };
  return Var{id};
}

// ---- reductions ----

Var Tape::sum(Var a) {
  check(a, "sum");
  const Tensor& av = val(a.id);
  double s = 0.0;
  for (double x : av.data) s += x;
  bool ng = nodes_[a.id].needs_grad;
  int ai = a.id;
  int id = push(scalar_tensor(s), ng, nullptr);
  nodes_[id].backward = [id, ai](Tape& t) {
    double g = t.nodes_[id].grad.data[0];
    Tensor da = zeros_like(t.val(ai));
    for (auto& x : da.data) x = g;
    t.accumulate(ai, da);
  };
  return Var{id};
}

Var Tape::sum_rows(Var a) {
  check(a, "sum_rows");
  const Tensor& av = val(a.id);
  Tensor out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) s += av.at(i, j);
    out.at(i, 0) = s;
  }
  bool ng = nodes_[a.id].needs_grad;
  int ai = a.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ai](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& av2 = t.val(ai);
    Tensor da = zeros_like(av2);
    for (std::size_t i = 0; i < av2.rows(); ++i)
      for (std::size_t j = 0; j < av2.cols(); ++j) da.at(i, j) = g.at(i, 0);
    t.accumulate(ai, da);
  };
  return Var{id};
}

Var Tape::sum_cols(Var a) {
  check(a, "sum_cols");
  const Tensor& av = val(a.id);
  Tensor out(1, av.cols());
  for (std::size_t j = 0; j < av.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < av.rows(); ++i) s += av.at(i, j);
    out.at(0, j) = s;
  }
  bool ng = nodes_[a.id].needs_grad;
  int ai = a.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ai](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& av2 = t.val(ai);
    Tensor da = zeros_like(av2);
    for (std::size_t i = 0; i < av2.rows(); ++i)
      for (std::size_t j = 0; j < av2.cols(); ++j) da.at(i, j) = g.at(0, j);
    t.accumulate(ai, da);
  };
  return Var{id};
}

// ---- softmax / normalization ----

Var Tape::softmax_rows(Var a) {
  check(a, "softmax_rows");
  const Tensor& av = val(a.id);
  require(av.rank() == 2 && av.cols() > 0, "softmax_rows: empty axis");
  Tensor out = av;
  const std::size_t r = av.rows(), c = av.cols();
  for (std::size_t i = 0; i < r; ++i) {
    double mx = out.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, out.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out.at(i, j) = std::exp(out.at(i, j) - mx);
      s += out.at(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= s;
  }
  bool ng = nodes_[a.id].needs_grad;
  int ai = a.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ai](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& y = t.val(id);
    Tensor da = zeros_like(y);
    const std::size_t r2 = y.rows(), c2 = y.cols();
    for (std::size_t i = 0; i < r2; ++i) {
      double gy = 0.0;
      for (std::size_t j = 0; j < c2; ++j) gy += g.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < c2; ++j)
        da.at(i, j) = y.at(i, j) * (g.at(i, j) - gy);
    }
    t.accumulate(ai, da);
  };
  return Var{id};
}

Var Tape::softmax_cols(Var a) {
  check(a, "softmax_cols");
  const Tensor& av = val(a.id);
  require(av.rank() == 2 && av.rows() > 0, "softmax_cols: empty axis");
  Tensor out = av;
  const std::size_t r = av.rows(), c = av.cols();
  for (std::size_t j = 0; j < c; ++j) {
    double mx = out.at(0, j);
    for (std::size_t i = 1; i < r; ++i) mx = std::max(mx, out.at(i, j));
    double s = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      out.at(i, j) = std::exp(out.at(i, j) - mx);
      s += out.at(i, j);
    }
    for (std::size_t i = 0; i < r; ++i) out.at(i, j) /= s;
  }
  bool ng = nodes_[a.id].needs_grad;
  int ai = a.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ai](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& y = t.val(id);
    Tensor da = zeros_like(y);
    const std::size_t r2 = y.rows(), c2 = y.cols();
    for (std::size_t j = 0; j < c2; ++j) {
      double gy = 0.0;
      for (std::size_t i = 0; i < r2; ++i) gy += g.at(i, j) * y.at(i, j);
      for (std::size_t i = 0; i < r2; ++i)
        da.at(i, j) = y.at(i, j) * (g.at(i, j) - gy);
    }
    t.accumulate(ai, da);
  };
  return Var{id};
}

Var Tape::normalize_rows(Var a) {
  check(a, "normalize_rows");
  const Tensor& av = val(a.id);
  Tensor out = av;
  const std::size_t r = av.rows(), c = av.cols();
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += out.at(i, j);
    require(s > 0.0, "normalize_rows: nonpositive row sum");
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= s;
  }
  bool ng = nodes_[a.id].needs_grad;
  int ai = a.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ai](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& x = t.val(ai);
    const Tensor& y = t.val(id);
    Tensor da = zeros_like(x);
    const std::size_t r2 = x.rows(), c2 = x.cols();
    for (std::size_t i = 0; i < r2; ++i) {
      double s = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < c2; ++j) {
        s += x.at(i, j);
        gy += g.at(i, j) * y.at(i, j);
      }
      for (std::size_t j = 0; j < c2; ++j)
        da.at(i, j) = (g.at(i, j) - gy) / s;
    }
    t.accumulate(ai, da);
  };
  return Var{id};
}

// ---- shape ops ----

Var Tape::reshape(Var a, std::vector<std::size_t> shape) {
  check(a, "reshape");
  const Tensor& av = val(a.id);
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  require(n == av.numel(), "reshape: element count mismatch");
  Tensor out = av;
  out.shape = shape;
  bool ng = nodes_[a.id].needs_grad;
  int ai = a.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ai](Tape& t) {
    Tensor da = t.nodes_[id].grad;
    da.shape = t.val(ai).shape;
    t.accumulate(ai, da);
  };
  return Var{id};
}

Var Tape::slice_rows(Var a, std::size_t start, std::size_t count) {
  check(a, "slice_rows");
  const Tensor& av = val(a.id);
  require(start + count <= av.rows(), "slice_rows: out of range");
  const std::size_t c = av.cols();
  Tensor out(count, c);
  std::copy(av.data.begin() + start * c, av.data.begin() + (start + count) * c,
            out.data.begin());
  bool ng = nodes_[a.id].needs_grad;
  int ai = a.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ai, start, count](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& av2 = t.val(ai);
    Tensor da = zeros_like(av2);
    const std::size_t c2 = av2.cols();
    std::copy(g.data.begin(), g.data.end(), da.data.begin() + start * c2);
    (void)count;
    t.accumulate(ai, da);
  };
  return Var{id};
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no parts");
  std::size_t rows = 0;
  const std::size_t c = val(parts[0].id).cols();
  bool ng = false;
  for (Var p : parts) {
    check(p, "concat_rows");
    require(val(p.id).cols() == c, "concat_rows: column mismatch");
    rows += val(p.id).rows();
    ng = ng || nodes_[p.id].needs_grad;
  }
  Tensor out(rows, c);
  std::size_t r0 = 0;
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  for (Var p : parts) {
    const Tensor& pv = val(p.id);
    std::copy(pv.data.begin(), pv.data.end(), out.data.begin() + r0 * c);
    ids.push_back(p.id);
    offsets.push_back(r0);
    r0 += pv.rows();
  }
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ids, offsets](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;
    const std::size_t c2 = g.cols();
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.nodes_[ids[k]].needs_grad) continue;
      const Tensor& pv = t.val(ids[k]);
      Tensor dp(pv.rows(), pv.cols());
      std::copy(g.data.begin() + offsets[k] * c2,
                g.data.begin() + (offsets[k] + pv.rows()) * c2,
                dp.data.begin());
      dp.shape = pv.shape;
      t.accumulate(ids[k], dp);
    }
  };
  return Var{id};
}

Var Tape::select_rows(Var a, const std::vector<std::size_t>& indices) {
  check(a, "select_rows");
  const Tensor& av = val(a.id);
  const std::size_t c = av.cols();
  Tensor out(indices.size(), c);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < av.rows(), "select_rows: index out of range");
    std::copy(av.data.begin() + indices[i] * c,
              av.data.begin() + (indices[i] + 1) * c, out.data.begin() + i * c);
  }
  bool ng = nodes_[a.id].needs_grad;
  int ai = a.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, ai, indices](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& av2 = t.val(ai);
    Tensor da = zeros_like(av2);
    const std::size_t c2 = av2.cols();
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (std::size_t j = 0; j < c2; ++j)
        da.data[indices[i] * c2 + j] += g.data[i * c2 + j];
    t.accumulate(ai, da);
  };
  return Var{id};
}

Var Tape::entry(Var a, std::size_t r, std::size_t c) {
  check(a, "entry");
  const Tensor& av = val(a.id);
  require(r < av.rows() && c < av.cols(), "entry: out of range");
  bool ng = nodes_[a.id].needs_grad;
  int ai = a.id;
  const std::size_t flat = r * av.cols() + c;
  int id = push(scalar_tensor(av.data[flat]), ng, nullptr);
  nodes_[id].backward = [id, ai, flat](Tape& t) {
    const Tensor& av2 = t.val(ai);
    Tensor da = zeros_like(av2);
    da.data[flat] = t.nodes_[id].grad.data[0];
    t.accumulate(ai, da);
  };
  return Var{id};
}

// ---- model composites ----

Var Tape::broadcast_slots_concat(Var slots, const Tensor& positional) {
  check(slots, "broadcast_slots_concat");
  const Tensor& sv = val(slots.id);
  positional.validate("broadcast_slots_concat: positional");
  const std::size_t k = sv.rows(), d = sv.cols();
  const std::size_t n = positional.rows(), p = positional.cols();
  Tensor out(k * n, d + p);
  for (std::size_t s = 0; s < k; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      double* row = &out.data[(s * n + i) * (d + p)];
      for (std::size_t j = 0; j < d; ++j) row[j] = sv.at(s, j);
      for (std::size_t j = 0; j < p; ++j) row[d + j] = positional.at(i, j);
    }
  }
  bool ng = nodes_[slots.id].needs_grad;
  int si = slots.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, si, n, d](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;
    const Tensor& sv2 = t.val(si);
    Tensor da = zeros_like(sv2);
    const std::size_t k2 = sv2.rows(), w = g.cols();
    for (std::size_t s = 0; s < k2; ++s)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
          da.at(s, j) += g.data[(s * n + i) * w + j];
    t.accumulate(si, da);
  };
  return Var{id};
}

Var Tape::mask_combine(Var per_slot, Var masks, std::size_t n_tokens) {
  check(per_slot, "mask_combine");
  check(masks, "mask_combine");
  const Tensor& pv = val(per_slot.id);  // (K*N) x d
  const Tensor& mv = val(masks.id);     // K x N
  const std::size_t k = mv.rows(), n = n_tokens, d = pv.cols();
  require(mv.cols() == n, "mask_combine: mask width mismatch");
  require(pv.rows() == k * n, "mask_combine: per-slot row count mismatch");
  Tensor out(n, d);
  for (std::size_t s = 0; s < k; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      const double m = mv.at(s, i);
      const double* src = &pv.data[(s * n + i) * d];
      double* dst = &out.data[i * d];
      for (std::size_t j = 0; j < d; ++j) dst[j] += m * src[j];
    }
  }
  bool ng = nodes_[per_slot.id].needs_grad || nodes_[masks.id].needs_grad;
  int pi = per_slot.id, mi = masks.id;
  int id = push(std::move(out), ng, nullptr);
  nodes_[id].backward = [id, pi, mi, n](Tape& t) {
    const Tensor& g = t.nodes_[id].grad;  // n x d
    const Tensor& pv2 = t.val(pi);
    const Tensor& mv2 = t.val(mi);
    const std::size_t k2 = mv2.rows(), d2 = pv2.cols();
    if (t.nodes_[pi].needs_grad) {
      Tensor dp = zeros_like(pv2);
      for (std::size_t s = 0; s < k2; ++s)
        for (std::size_t i = 0; i < n; ++i) {
          const double m = mv2.at(s, i);
          const double* grow = &g.data[i * d2];
          double* drow = &dp.data[(s * n + i) * d2];
          for (std::size_t j = 0; j < d2; ++j) drow[j] = m * grow[j];
        }
      t.accumulate(pi, dp);
    }
    if (t.nodes_[mi].needs_grad) {
      Tensor dm = zeros_like(mv2);
      for (std::size_t s = 0; s < k2; ++s)
        for (std::size_t i = 0; i < n; ++i) {
          const double* grow = &g.data[i * d2];
          const double* prow = &pv2.data[(s * n + i) * d2];
          double acc = 0.0;
          for (std::size_t j = 0; j < d2; ++j) acc += grow[j] * prow[j];
          dm.at(s, i) = acc;
        }
      t.accumulate(mi, dm);
    }
  };
  return Var{id};
}

}  // namespace cgsa
