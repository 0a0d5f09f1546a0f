#include "cgsa/params.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

namespace cgsa {

Tensor& ParameterStore::add(const std::string& name, Tensor init) {
  if (params_.count(name))
    throw std::invalid_argument("ParameterStore: duplicate parameter " + name);
  init.validate("parameter " + name);
  return params_[name] = std::move(init);
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end())
    throw std::invalid_argument("ParameterStore: unknown parameter " + name);
  return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end())
    throw std::invalid_argument("ParameterStore: unknown parameter " + name);
  return it->second;
}

bool ParameterStore::has(const std::string& name) const {
  return params_.count(name) != 0;
}

void ParameterStore::freeze(const std::string& name) {
  get(name);
  frozen_.insert(name);
}

bool ParameterStore::frozen(const std::string& name) const {
  return frozen_.count(name) != 0;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

std::map<std::string, Var> ParameterStore::bind(Tape& tape) const {
  std::map<std::string, Var> bound;
  for (const auto& [name, tensor] : params_) {
    bound[name] = tape.leaf(tensor, !frozen(name));
  }
  return bound;
}

std::map<std::string, Var> ParameterStore::bind_const(Tape& tape) const {
  std::map<std::string, Var> bound;
  for (const auto& [name, tensor] : params_) bound[name] = tape.constant(tensor);
  return bound;
}

void ParameterStore::apply_sgd(
    const Tape& tape, const std::map<std::string, Var>& bound, double lr,
    const std::function<double(const std::string&)>& lr_scale) {
  for (const auto& [name, var] : bound) {
    if (frozen(name)) continue;
    Tensor& p = get(name);
    const Tensor& g = tape.grad(var);
    if (!p.same_shape(g))
      throw std::invalid_argument("apply_sgd: shape mismatch for " + name);
    const double eff = lr_scale ? lr * lr_scale(name) : lr;
    for (std::size_t i = 0; i < p.data.size(); ++i)
      p.data[i] -= eff * g.data[i];
  }
}

void ParameterStore::ema_from(const ParameterStore& other, double gamma) {
  if (!same_shapes(other))
    throw std::invalid_argument("ema_from: parameter shape mismatch");
  auto it = params_.begin();
  auto jt = other.params_.begin();
  for (; it != params_.end(); ++it, ++jt) {
    Tensor& t = it->second;
    const Tensor& s = jt->second;
    for (std::size_t i = 0; i < t.data.size(); ++i)
      t.data[i] = gamma * t.data[i] + (1.0 - gamma) * s.data[i];
  }
}

bool ParameterStore::same_shapes(const ParameterStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  auto it = params_.begin();
  auto jt = other.params_.begin();
  for (; it != params_.end(); ++it, ++jt) {
    if (it->first != jt->first || !it->second.same_shape(jt->second))
      return false;
  }
  return true;
}

Tensor xavier_init(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor t(rows, cols);
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (auto& v : t.data) v = rng.uniform(-limit, limit);
  return t;
}

Tensor normal_init(Rng& rng, std::size_t rows, std::size_t cols,
                   double stddev) {
  Tensor t(rows, cols);
  for (auto& v : t.data) v = rng.normal(0.0, stddev);
  return t;
}

}  // namespace cgsa
