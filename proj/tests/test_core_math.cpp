#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cgsa/hungarian.hpp"
#include "cgsa/numeric.hpp"
#include "cgsa/rng.hpp"
#include "grad_check.hpp"
#include "op_battery.hpp"

using namespace cgsa;
using cgsa_test::check_gradients;
using cgsa_test::random_tensor;

TEST_CASE("tensor invariants") {
  Tensor t(2, 3, 1.0);
  CHECK(t.numel() == 6);
  CHECK_NOTHROW(t.validate("t"));
  t.data[0] = std::nan("");
  CHECK_THROWS(t.validate("t"));
  Tensor bad;
  bad.shape = {2, 2};
  bad.data = {1.0};
  CHECK_THROWS(bad.validate("bad"));
}

TEST_CASE("rng stream is reproducible and counter-resumable") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(7);
  for (int i = 0; i < 17; ++i) c.uniform();
  Rng resumed(7, c.counter());
  for (int i = 0; i < 100; ++i) CHECK(c.next_u64() == resumed.next_u64());
}

TEST_CASE("rng normal matches a straight-line Box-Muller evaluation") {
  Rng r(42);
  Rng mirror(42);
  for (int i = 0; i < 50; ++i) {
    double u1 = 1.0 - mirror.uniform();
    double u2 = mirror.uniform();
    double expected = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    CHECK(r.normal() == expected);
  }
}

TEST_CASE("softmax trivial and derived values") {
  auto u = softmax({0.0, 0.0, 0.0});
  for (double v : u) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // Shift invariance.
  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> v(4);
    for (auto& x : v) x = rng.uniform(-3.0, 3.0);
    double c = rng.uniform(-5.0, 5.0);
    auto a = softmax(v);
    for (auto& x : v) x += c;
    auto b = softmax(v);
    for (std::size_t i = 0; i < v.size(); ++i)
      CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  }

  // Direct exp/sum oracle for [1,2,3], frozen to the reference digits.
  {
    long double e1 = expl(1.0L), e2 = expl(2.0L), e3 = expl(3.0L);
    long double z = e1 + e2 + e3;
    auto got = softmax({1.0, 2.0, 3.0});
    CHECK(got[0] == doctest::Approx((double)(e1 / z)).epsilon(1e-14));
    CHECK(got[1] == doctest::Approx((double)(e2 / z)).epsilon(1e-14));
    CHECK(got[2] == doctest::Approx((double)(e3 / z)).epsilon(1e-14));
    CHECK(got[0] == doctest::Approx(0.09003057).epsilon(1e-6));
    CHECK(got[1] == doctest::Approx(0.24472847).epsilon(1e-6));
    CHECK(got[2] == doctest::Approx(0.66524096).epsilon(1e-6));
  }
}

TEST_CASE("softmax stays normalized at extreme magnitudes") {
  Rng rng(11);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> v(5);
    for (auto& x : v) x = rng.uniform(-1e4, 1e4);
    auto p = softmax(v);
    double sum = 0.0;
    for (double x : p) {
      CHECK(x >= 0.0);
      sum += x;
    }
    CHECK(std::fabs(sum - 1.0) <= 1e-6);
  }
  CHECK_THROWS(softmax({}));
}

TEST_CASE("cosine similarity") {
  std::vector<double> v{1.0, 2.0, -0.5};
  CHECK(cosine_similarity(v, v) == doctest::Approx(1.0));
  std::vector<double> nv{-1.0, -2.0, 0.5};
  CHECK(cosine_similarity(v, nv) == doctest::Approx(-1.0));
  CHECK(cosine_similarity({1.0, 0.0}, {0.0, 1.0}) == doctest::Approx(0.0));
  CHECK_THROWS(cosine_similarity({0.0, 0.0}, {1.0, 0.0}));
  CHECK_THROWS(cosine_similarity({1.0}, {1.0, 2.0}));

  // Symmetry and scale invariance.
  Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> a(4), b(4);
    for (auto& x : a) x = rng.uniform(-1.0, 1.0) + 0.01;
    for (auto& x : b) x = rng.uniform(-1.0, 1.0) + 0.01;
    double s = rng.uniform(0.1, 10.0);
    std::vector<double> sa = a;
    for (auto& x : sa) x *= s;
    CHECK(cosine_similarity(a, b) == doctest::Approx(cosine_similarity(b, a)));
    CHECK(cosine_similarity(sa, b) ==
          doctest::Approx(cosine_similarity(a, b)).epsilon(1e-12));
    CHECK(cosine_similarity(a, b) <= 1.0);
    CHECK(cosine_similarity(a, b) >= -1.0);
  }
}

namespace {
// Independent straight-line evaluation of the gated update, scalar by scalar.
std::vector<double> gru_oracle(const std::vector<double>& x,
                               const std::vector<double>& h,
                               const GruParams& p) {
  const std::size_t d = h.size();
  std::vector<double> u(d), r(d);
  for (std::size_t i = 0; i < d; ++i) {
    double zu = p.b_update.at(i), zr = p.b_reset.at(i);
    for (std::size_t j = 0; j < d; ++j) {
      zu += x[j] * p.w_update.at(j, i) + h[j] * p.u_update.at(j, i);
      zr += x[j] * p.w_reset.at(j, i) + h[j] * p.u_reset.at(j, i);
    }
    u[i] = 1.0 / (1.0 + std::exp(-zu));
    r[i] = 1.0 / (1.0 + std::exp(-zr));
  }
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d; ++i) {
    double zc = p.b_cand.at(i);
    for (std::size_t j = 0; j < d; ++j)
      zc += x[j] * p.w_cand.at(j, i) + r[j] * h[j] * p.u_cand.at(j, i);
    out[i] = (1.0 - u[i]) * h[i] + u[i] * std::tanh(zc);
  }
  return out;
}
}  // namespace

TEST_CASE("gru_cell trivial and oracle cases") {
  const std::size_t d = 3;
  GruParams zero = GruParams::zeros(d);
  auto out = gru_cell({0, 0, 0}, {0, 0, 0}, zero);
  for (double v : out) CHECK(v == 0.0);

  // Candidate forced to the hidden state: bias = atanh(h), all matrices zero.
  std::vector<double> h{0.3, -0.2, 0.5};
  GruParams fixed = GruParams::zeros(d);
  for (std::size_t i = 0; i < d; ++i) fixed.b_cand.at(i) = std::atanh(h[i]);
  auto fp = gru_cell({0.7, -0.1, 0.4}, h, fixed);
  for (std::size_t i = 0; i < d; ++i)
    CHECK(fp[i] == doctest::Approx(h[i]).epsilon(1e-12));

  // Random case against the straight-line oracle.
  Rng rng(17);
  GruParams p = GruParams::zeros(d);
  for (auto* m : {&p.w_update, &p.u_update, &p.w_reset, &p.u_reset, &p.w_cand,
                  &p.u_cand})
    for (auto& v : m->data) v = rng.uniform(-0.8, 0.8);
  for (auto* b : {&p.b_update, &p.b_reset, &p.b_cand})
    for (auto& v : b->data) v = rng.uniform(-0.5, 0.5);
  std::vector<double> x{0.2, -0.7, 0.1}, hh{0.4, 0.3, -0.6};
  auto got = gru_cell(x, hh, p);
  auto want = gru_oracle(x, hh, p);
  for (std::size_t i = 0; i < d; ++i)
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));

  CHECK_THROWS(gru_cell({1.0}, {1.0, 2.0}, zero));
}

namespace {
double brute_force_best(const Tensor& score) {
  const std::size_t k = score.rows(), m = score.cols();
  std::vector<std::size_t> cols(m);
  for (std::size_t i = 0; i < m; ++i) cols[i] = i;
  double best = -1e300;
  // All injections: permutations of columns, first k entries matter.
  std::sort(cols.begin(), cols.end());
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) total += score.at(i, cols[i]);
    best = std::max(best, total);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}
}  // namespace

TEST_CASE("hungarian_assign trivial cases") {
  Tensor diag(3, 3);
  for (std::size_t i = 0; i < 3; ++i) diag.at(i, i) = 1.0;
  auto a = hungarian_assign(diag);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a.column_of_row[i] == i);
  CHECK(a.total == doctest::Approx(3.0));

  Tensor two = Tensor::matrix(2, 2, {1, 2, 2, 4});
  auto b = hungarian_assign(two);
  CHECK(b.column_of_row[0] == 0);
  CHECK(b.column_of_row[1] == 1);
  CHECK(b.total == doctest::Approx(5.0));

  Tensor wide(2, 3, 0.0);
  CHECK_NOTHROW(hungarian_assign(wide));
  Tensor tall(3, 2, 0.0);
  CHECK_THROWS(hungarian_assign(tall));
  Tensor inf(2, 2, 0.0);
  inf.data[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS(hungarian_assign(inf));
}

TEST_CASE("hungarian_assign equals exhaustive search") {
  Rng rng(99);
  for (int rep = 0; rep < 300; ++rep) {
    std::size_t k = 1 + rng.uniform_index(6);
    std::size_t m = k + rng.uniform_index(7 - k);
    Tensor score(k, m);
    for (auto& v : score.data) v = rng.uniform(-5.0, 5.0);
    auto a = hungarian_assign(score);
    CHECK(a.total == doctest::Approx(brute_force_best(score)).epsilon(1e-12));
    std::vector<bool> used(m, false);
    double recomputed = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      CHECK(!used[a.column_of_row[i]]);
      used[a.column_of_row[i]] = true;
      recomputed += score.at(i, a.column_of_row[i]);
    }
    CHECK(recomputed == doctest::Approx(a.total));
  }
}

TEST_CASE("finite_diff_grad analytic cases") {
  auto sq = [](const std::vector<double>& x) { return x[0] * x[0]; };
  auto g = finite_diff_grad(sq, {3.0}, 1e-5);
  CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-6));

  auto constant = [](const std::vector<double>&) { return 4.2; };
  auto gz = finite_diff_grad(constant, {1.0, 2.0}, 1e-4);
  CHECK(gz[0] == 0.0);
  CHECK(gz[1] == 0.0);

  auto ex = [](const std::vector<double>& x) { return std::exp(x[0]); };
  auto ge = finite_diff_grad(ex, {0.0}, 1e-5);
  CHECK(ge[0] == doctest::Approx(1.0).epsilon(1e-8));

  CHECK_THROWS(finite_diff_grad(sq, {1.0}, 0.0));
}

TEST_CASE("sgd_update") {
  Tensor p(1, 1, 1.0), g(1, 1, 1.0);
  sgd_update(p, g, 0.1);
  CHECK(p.data[0] == doctest::Approx(0.9));

  Tensor p2(2, 2, 3.0), g2(2, 2, 0.0);
  sgd_update(p2, g2, 0.5);
  for (double v : p2.data) CHECK(v == 3.0);

  Tensor p3(1, 3, 1.0);
  Tensor g3 = Tensor::matrix(1, 3, {1.0, -2.0, 0.5});
  sgd_update(p3, g3, 0.1);
  CHECK(p3.data[0] == doctest::Approx(0.9));
  CHECK(p3.data[1] == doctest::Approx(1.2));
  CHECK(p3.data[2] == doctest::Approx(0.95));

  Tensor bad(2, 1, 0.0);
  CHECK_THROWS(sgd_update(p3, bad, 0.1));
  CHECK_THROWS(sgd_update(p3, g3, 0.0));
}

TEST_CASE("backward on trivial graphs") {
  // Linear map: gradient of sum is all ones.
  {
    Tape t;
    Var x = t.leaf(Tensor::matrix(1, 3, {1.0, -2.0, 5.0}), true);
    Var out = t.sum(x);
    t.backward(out);
    for (double g : t.grad(x).data) CHECK(g == 1.0);
  }
  // Quadratic form <x, x> at [1, 2] -> [2, 4].
  {
    Tape t;
    Var x = t.leaf(Tensor::matrix(1, 2, {1.0, 2.0}), true);
    Var out = t.dot(x, x);
    t.backward(out);
    CHECK(t.grad(x).data[0] == doctest::Approx(2.0));
    CHECK(t.grad(x).data[1] == doctest::Approx(4.0));
  }
  // Non-scalar output is rejected.
  {
    Tape t;
    Var x = t.leaf(Tensor(2, 2, 1.0), true);
    CHECK_THROWS(t.backward(x));
  }
}

TEST_CASE("backward matches finite differences on a softmax-dot-log chain") {
  Rng rng(123);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x = random_tensor(rng, 2, 4);
    Tensor w = random_tensor(rng, 2, 4, 0.1, 1.0);
    auto build = [&w](Tape& t, const std::vector<Var>& v) {
      Var sm = t.softmax_rows(v[0]);
      Var d = t.dot(sm, t.constant(w));
      return t.log(d);
    };
    auto res = check_gradients(build, {x}, 1e-4, 1e-4);
    CHECK(res.pass);
  }
}

TEST_CASE("gradient battery over every tape operation") {
  auto outcome = cgsa_test::run_grad_battery(10);
  INFO("max relative error ", outcome.max_err);
  for (const auto& f : outcome.failures) INFO("failed: ", f);
  CHECK(outcome.pass);
  CHECK(outcome.ops >= 30);
}
