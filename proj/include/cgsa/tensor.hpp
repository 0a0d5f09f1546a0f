#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace cgsa {

// Dense row-major tensor of doubles. Rank 1 (vectors) and rank 2 (matrices)
// cover everything in this project; per-slot feature stacks are stored as
// (K*N)xD matrices.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : shape{rows, cols}, data(rows * cols, fill) {}
  explicit Tensor(std::vector<double> values)
      : shape{values.size()}, data(std::move(values)) {}

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values);
  static Tensor vector(std::vector<double> values) {
    return Tensor(std::move(values));
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  // Matrix view: rank-1 tensors count as a single row.
  std::size_t rows() const { return rank() <= 1 ? (numel() ? 1 : 0) : shape[0]; }
  std::size_t cols() const { return rank() <= 1 ? numel() : shape[1]; }

  double& at(std::size_t i) { return data[i]; }
  double at(std::size_t i) const { return data[i]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;

  // Throws std::invalid_argument when the shape/data invariant or finiteness
  // is violated; `what` names the offending tensor in the message.
  void validate(const std::string& what) const;

  std::string shape_str() const;
};

Tensor zeros_like(const Tensor& t);

}  // namespace cgsa
