#include "cgsa/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace cgsa {

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values) {
  if (values.size() != rows * cols) {
    throw std::invalid_argument("Tensor::matrix: got " +
                                std::to_string(values.size()) +
                                " values for a " + std::to_string(rows) + "x" +
                                std::to_string(cols) + " matrix");
  }
  Tensor t;
  t.shape = {rows, cols};
  t.data = std::move(values);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::validate(const std::string& what) const {
  std::size_t expect = 1;
  for (std::size_t d : shape) expect *= d;
  if (shape.empty()) expect = 0;
  if (expect != data.size()) {
    throw std::invalid_argument(what + ": data length " +
                                std::to_string(data.size()) +
                                " does not match shape " + shape_str());
  }
  if (!all_finite()) {
    throw std::invalid_argument(what + ": non-finite value");
  }
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Tensor zeros_like(const Tensor& t) {
  Tensor z;
  z.shape = t.shape;
  z.data.assign(t.data.size(), 0.0);
  return z;
}

}  // namespace cgsa
