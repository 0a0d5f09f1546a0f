#pragma once

#include <cstddef>
#include <vector>

#include "cgsa/tensor.hpp"

namespace cgsa {

// One-to-one row -> column assignment with its total score.
struct Assignment {
  std::vector<std::size_t> column_of_row;  // size K, injective
  double total = 0.0;
};

// Maximizes the total score of an injective row->column map over a K x M
// score matrix, K <= M. O(n^3) augmenting-path solver; the rectangular case
// is squared up by padding rows with a score strictly below the minimum
// entry so padding never displaces a real match.
Assignment hungarian_assign(const Tensor& score);

}  // namespace cgsa
