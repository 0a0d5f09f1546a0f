#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "cgsa/autodiff.hpp"
#include "cgsa/rng.hpp"
#include "cgsa/tensor.hpp"

namespace cgsa {

// Named parameter arrays with deterministic (lexicographic) iteration order.
// One store per network role; the teacher is a second store with identical
// names and shapes.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor init);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;

  // Marks a parameter as excluded from gradient updates (still serialized).
  void freeze(const std::string& name);
  bool frozen(const std::string& name) const;

  std::vector<std::string> names() const;
  std::size_t count() const { return params_.size(); }

  // Registers every non-frozen parameter as a tape leaf; returns the handles
  // keyed by name so a later SGD step can fetch gradients.
  std::map<std::string, Var> bind(Tape& tape) const;

  // Gradient-free binding for teacher forwards and evaluation.
  std::map<std::string, Var> bind_const(Tape& tape) const;

  // p <- p - lr * lr_scale(name) * grad for every bound, non-frozen
  // parameter; a null scale function means 1 everywhere.
  void apply_sgd(const Tape& tape, const std::map<std::string, Var>& bound,
                 double lr,
                 const std::function<double(const std::string&)>& lr_scale = {});

  // this <- gamma * this + (1 - gamma) * other, elementwise over all params.
  void ema_from(const ParameterStore& other, double gamma);

  bool same_shapes(const ParameterStore& other) const;

  const std::map<std::string, Tensor>& raw() const { return params_; }
  std::map<std::string, Tensor>& raw() { return params_; }

 private:
  std::map<std::string, Tensor> params_;
  std::set<std::string> frozen_;
};

// Xavier/Glorot uniform fan-in/fan-out init for a rows x cols matrix.
Tensor xavier_init(Rng& rng, std::size_t rows, std::size_t cols);
Tensor normal_init(Rng& rng, std::size_t rows, std::size_t cols, double stddev);

}  // namespace cgsa
