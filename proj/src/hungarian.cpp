#include "cgsa/hungarian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cgsa {

namespace {

// Shortest-augmenting-path assignment on a square cost matrix (minimize).
// Classic 1-indexed potential formulation; returns column per row.
std::vector<std::size_t> solve_min_square(const std::vector<double>& cost,
                                          std::size_t n) {
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      std::size_t i0 = p[j0], j1 = 0;
      double delta = kInf;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col_of_row(n, 0);
  for (std::size_t j = 1; j <= n; ++j) {
    if (p[j] != 0) col_of_row[p[j] - 1] = j - 1;
  }
  return col_of_row;
}

}  // namespace

Assignment hungarian_assign(const Tensor& score) {
  if (score.rank() != 2)
    throw std::invalid_argument("hungarian_assign: rank-2 score matrix required");
  const std::size_t k = score.rows(), m = score.cols();
  if (k == 0 || m == 0)
    throw std::invalid_argument("hungarian_assign: empty score matrix");
  if (k > m)
    throw std::invalid_argument("hungarian_assign: more rows than columns (K > M)");
  if (!score.all_finite())
    throw std::invalid_argument("hungarian_assign: non-finite score entry");

  double lo = score.data[0];
  for (double s : score.data) lo = std::min(lo, s);
  const double pad = lo - 1.0;

  // Square up with padding rows, negate to minimize.
  std::vector<double> cost(m * m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      cost[i * m + j] = -(i < k ? score.at(i, j) : pad);
    }
  }
  auto cols = solve_min_square(cost, m);

  Assignment out;
  out.column_of_row.assign(cols.begin(), cols.begin() + k);
  for (std::size_t i = 0; i < k; ++i) out.total += score.at(i, out.column_of_row[i]);
  return out;
}

}  // namespace cgsa
