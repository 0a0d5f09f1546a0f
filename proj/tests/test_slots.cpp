#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cgsa/numeric.hpp"
#include "cgsa/slots.hpp"
#include "grad_check.hpp"

using namespace cgsa;

namespace {

struct Fixture {
  SlotAttentionModule module;
  ParameterStore store;

  explicit Fixture(std::size_t d, std::uint64_t seed = 5,
                   AttnSoftmaxAxis axis = AttnSoftmaxAxis::Tokens) {
    module = SlotAttentionModule{"sa", d, axis};
    Rng rng(seed);
    module.register_params(store, rng);
  }
};

FeatureMapVars make_features(Tape& tape, const Tensor& tokens,
                             std::size_t grid_h, std::size_t grid_w) {
  return FeatureMapVars{tape.constant(tokens), tokens.rows(), tokens.cols(),
                        grid_h, grid_w};
}

}  // namespace

TEST_CASE("init_slots: degenerate variance collapses to the mean") {
  Fixture f(3);
  f.store.get("sa.init.logvar") = Tensor(1, 3, -80.0);
  Tape tape;
  auto p = f.store.bind(tape);
  Rng rng(7);
  auto slots = f.module.init_slots(tape, p, 4, rng, 1);
  const Tensor& v = tape.value(slots.slots);
  const Tensor& mean = f.store.get("sa.init.mean");
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(v.at(k, j) == doctest::Approx(mean.at(0, j)).epsilon(1e-12));
}

TEST_CASE("init_slots: fixed seed reproduces, and matches the sampler formula") {
  Fixture f(3);
  Tape t1, t2;
  auto p1 = f.store.bind(t1);
  auto p2 = f.store.bind(t2);
  Rng r1(42), r2(42);
  auto s1 = f.module.init_slots(t1, p1, 2, r1, 1);
  auto s2 = f.module.init_slots(t2, p2, 2, r2, 2);
  CHECK(t1.value(s1.slots).data == t2.value(s2.slots).data);

  // mean + exp(logvar / 2) * eps with eps drawn row-major.
  Rng mirror(42);
  const Tensor& mean = f.store.get("sa.init.mean");
  const Tensor& logvar = f.store.get("sa.init.logvar");
  const Tensor& v = t1.value(s1.slots);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t j = 0; j < 3; ++j) {
      double want = mean.at(0, j) +
                    std::exp(0.5 * logvar.at(0, j)) * mirror.normal();
      CHECK(v.at(k, j) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("slot_attention_step: identical tokens make the update slot-independent") {
  const std::size_t d = 3, n = 4;
  Fixture f(d);
  Tensor tokens(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) tokens.at(i, j) = 0.3 * (j + 1.0);

  Tape tape;
  auto p = f.store.bind(tape);
  auto features = make_features(tape, tokens, 2, 2);
  Rng rng(11);
  auto slots = f.module.init_slots(tape, p, 3, rng, 1);
  auto next = f.module.step(tape, p, slots, features);

  // Oracle: update = h0 * W_v (uniform attention over equal tokens), then
  // the plain gated-cell update per slot row.
  const Tensor& wv = f.store.get("sa.w_v");
  std::vector<double> update(d, 0.0);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t l = 0; l < d; ++l) update[j] += tokens.at(0, l) * wv.at(l, j);
  GruParams gp;
  gp.w_update = f.store.get("sa.gru.w_u");
  gp.u_update = f.store.get("sa.gru.u_u");
  gp.b_update = f.store.get("sa.gru.b_u");
  gp.w_reset = f.store.get("sa.gru.w_r");
  gp.u_reset = f.store.get("sa.gru.u_r");
  gp.b_reset = f.store.get("sa.gru.b_r");
  gp.w_cand = f.store.get("sa.gru.w_c");
  gp.u_cand = f.store.get("sa.gru.u_c");
  gp.b_cand = f.store.get("sa.gru.b_c");

  const Tensor& old_slots = tape.value(slots.slots);
  const Tensor& new_slots = tape.value(next.slots);
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> h(d);
    for (std::size_t j = 0; j < d; ++j) h[j] = old_slots.at(k, j);
    auto want = gru_cell(update, h, gp);
    for (std::size_t j = 0; j < d; ++j)
      CHECK(new_slots.at(k, j) == doctest::Approx(want[j]).epsilon(1e-10));
  }
}

TEST_CASE("slot_attention_step: d=1, N=2 straight-line oracle") {
  Fixture f(1);
  const double a = 0.7, b = -0.4, c = 1.3;
  f.store.get("sa.w_q") = Tensor(1, 1, a);
  f.store.get("sa.w_k") = Tensor(1, 1, b);
  f.store.get("sa.w_v") = Tensor(1, 1, c);
  const double wu = 0.5, uu = -0.3, bu = 0.1;
  const double wr = 0.8, ur = 0.2, br = -0.2;
  const double wc = 1.1, uc = 0.6, bc = 0.05;
  f.store.get("sa.gru.w_u") = Tensor(1, 1, wu);
  f.store.get("sa.gru.u_u") = Tensor(1, 1, uu);
  f.store.get("sa.gru.b_u") = Tensor(1, 1, bu);
  f.store.get("sa.gru.w_r") = Tensor(1, 1, wr);
  f.store.get("sa.gru.u_r") = Tensor(1, 1, ur);
  f.store.get("sa.gru.b_r") = Tensor(1, 1, br);
  f.store.get("sa.gru.w_c") = Tensor(1, 1, wc);
  f.store.get("sa.gru.u_c") = Tensor(1, 1, uc);
  f.store.get("sa.gru.b_c") = Tensor(1, 1, bc);

  const double z = 0.5, h1 = 0.9, h2 = -0.6;
  Tape tape;
  auto p = f.store.bind(tape);
  Tensor tokens = Tensor::matrix(2, 1, {h1, h2});
  auto features = make_features(tape, tokens, 1, 2);
  SlotSetVars slots{tape.constant(Tensor(1, 1, z)), 1, 1, 1, 0};
  auto next = f.module.step(tape, p, slots, features);

  // Straight-line evaluation with plain doubles.
  double s1 = (z * a) * (h1 * b), s2 = (z * a) * (h2 * b);
  double m = std::max(s1, s2);
  double e1 = std::exp(s1 - m), e2 = std::exp(s2 - m);
  double attn1 = e1 / (e1 + e2), attn2 = e2 / (e1 + e2);
  double u = attn1 * h1 * c + attn2 * h2 * c;
  double gu = sigmoid(u * wu + z * uu + bu);
  double gr = sigmoid(u * wr + z * ur + br);
  double cand = std::tanh(u * wc + gr * z * uc + bc);
  double want = (1.0 - gu) * z + gu * cand;
  CHECK(tape.value(next.slots).at(0, 0) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("slot attention preserves shape for any K and N") {
  Rng shape_rng(3);
  for (int rep = 0; rep < 5; ++rep) {
    const std::size_t d = 2;
    Fixture f(d, 100 + rep);
    std::size_t gw = 1 + shape_rng.uniform_index(4);
    std::size_t gh = 1 + shape_rng.uniform_index(4);
    std::size_t k = 1 + shape_rng.uniform_index(5);
    int iters = 1 + static_cast<int>(shape_rng.uniform_index(3));
    Tape tape;
    auto p = f.store.bind(tape);
    Tensor tokens = cgsa_test::random_tensor(shape_rng, gw * gh, d);
    auto features = make_features(tape, tokens, gh, gw);
    Rng rng(9);
    auto out = f.module.run(tape, p, features, k, iters, rng, 1);
    CHECK(tape.value(out.slots).rows() == k);
    CHECK(tape.value(out.slots).cols() == d);
    CHECK(out.iters_used == iters);
  }
}

TEST_CASE("run_slot_attention with iters=1 equals one manual step") {
  Fixture f(2);
  Rng data_rng(4);
  Tensor tokens = cgsa_test::random_tensor(data_rng, 4, 2);
  Tape t1;
  auto p1 = f.store.bind(t1);
  Rng r1(21);
  auto run_out = f.module.run(t1, p1, make_features(t1, tokens, 2, 2), 3, 1, r1, 1);

  Tape t2;
  auto p2 = f.store.bind(t2);
  Rng r2(21);
  auto init = f.module.init_slots(t2, p2, 3, r2, 1);
  auto manual = f.module.step(t2, p2, init, make_features(t2, tokens, 2, 2));
  CHECK(t1.value(run_out.slots).data == t2.value(manual.slots).data);
}

TEST_CASE("slot_attention_step is permutation-equivariant in slots") {
  for (auto axis : {AttnSoftmaxAxis::Tokens, AttnSoftmaxAxis::Slots}) {
    const std::size_t d = 3, k = 4;
    Fixture f(d, 31, axis);
    Rng rng(13);
    Tensor tokens = cgsa_test::random_tensor(rng, 6, d);
    Tensor slots0 = cgsa_test::random_tensor(rng, k, d);
    std::vector<std::size_t> perm{2, 0, 3, 1};
    Tensor permuted(k, d);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < d; ++j) permuted.at(i, j) = slots0.at(perm[i], j);

    Tape t1;
    auto p1 = f.store.bind(t1);
    SlotSetVars s1{t1.constant(slots0), k, d, 1, 0};
    auto o1 = f.module.step(t1, p1, s1, make_features(t1, tokens, 2, 3));

    Tape t2;
    auto p2 = f.store.bind(t2);
    SlotSetVars s2{t2.constant(permuted), k, d, 1, 0};
    auto o2 = f.module.step(t2, p2, s2, make_features(t2, tokens, 2, 3));

    const Tensor& v1 = t1.value(o1.slots);
    const Tensor& v2 = t2.value(o2.slots);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < d; ++j)
        CHECK(v2.at(i, j) == doctest::Approx(v1.at(perm[i], j)).epsilon(1e-12));
  }
}

TEST_CASE("decode_slots: identical slots share reconstructions and masks") {
  const std::size_t d = 3, n = 4;
  Fixture f(d);
  Tape tape;
  auto p = f.store.bind(tape);
  Tensor same(2, d);
  for (std::size_t j = 0; j < d; ++j) same.at(0, j) = same.at(1, j) = 0.4 * (j + 1);
  SlotSetVars slots{tape.constant(same), 2, d, 1, 1};
  auto dec = f.module.decode(tape, p, slots, n, 2, 2);
  const Tensor& recon = tape.value(dec.per_slot_recon);
  const Tensor& masks = tape.value(dec.masks.masks);
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(masks.at(0, i) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(masks.at(1, i) == doctest::Approx(0.5).epsilon(1e-12));
    for (std::size_t j = 0; j < d; ++j)
      CHECK(recon.at(i, j) == doctest::Approx(recon.at(n + i, j)).epsilon(1e-12));
  }
}

TEST_CASE("decode_slots: a single slot has mask identically 1") {
  Fixture f(2);
  Tape tape;
  auto p = f.store.bind(tape);
  SlotSetVars slots{tape.constant(Tensor(1, 2, 0.3)), 1, 2, 1, 1};
  auto dec = f.module.decode(tape, p, slots, 9, 3, 3);
  for (double v : tape.value(dec.masks.masks).data) CHECK(v == 1.0);
}

TEST_CASE("decode_slots: d=1, K=2, N=1 straight-line MLP oracle") {
  const std::size_t d = 1;
  Fixture f(d);
  Tape tape;
  auto p = f.store.bind(tape);
  Tensor slots_val = Tensor::matrix(2, 1, {0.8, -0.3});
  SlotSetVars slots{tape.constant(slots_val), 2, 1, 1, 1};
  auto dec = f.module.decode(tape, p, slots, 1, 1, 1);

  // Positional code for a 1x1 grid: x = 0, 1-x = 1, y = 0, 1-y = 1.
  const Tensor& w1 = f.store.get("sa.dec.w1");
  const Tensor& b1 = f.store.get("sa.dec.b1");
  const Tensor& w2 = f.store.get("sa.dec.w2");
  const Tensor& b2 = f.store.get("sa.dec.b2");
  const Tensor& wr = f.store.get("sa.dec.w_rec");
  const Tensor& br = f.store.get("sa.dec.b_rec");
  const Tensor& wa = f.store.get("sa.dec.w_alpha");
  const Tensor& ba = f.store.get("sa.dec.b_alpha");
  const std::size_t hidden = 2 * d;

  std::vector<double> recon(2), alpha(2);
  for (std::size_t k = 0; k < 2; ++k) {
    double in[5] = {slots_val.at(k, 0), 0.0, 1.0, 0.0, 1.0};
    std::vector<double> h1(hidden), h2(hidden);
    for (std::size_t j = 0; j < hidden; ++j) {
      double s = b1.at(0, j);
      for (std::size_t l = 0; l < 5; ++l) s += in[l] * w1.at(l, j);
      h1[j] = std::tanh(s);
    }
    for (std::size_t j = 0; j < hidden; ++j) {
      double s = b2.at(0, j);
      for (std::size_t l = 0; l < hidden; ++l) s += h1[l] * w2.at(l, j);
      h2[j] = std::tanh(s);
    }
    double r = br.at(0, 0), al = ba.at(0, 0);
    for (std::size_t l = 0; l < hidden; ++l) {
      r += h2[l] * wr.at(l, 0);
      al += h2[l] * wa.at(l, 0);
    }
    recon[k] = r;
    alpha[k] = al;
  }
  double m = std::max(alpha[0], alpha[1]);
  double e0 = std::exp(alpha[0] - m), e1 = std::exp(alpha[1] - m);

  CHECK(tape.value(dec.per_slot_recon).at(0, 0) ==
        doctest::Approx(recon[0]).epsilon(1e-12));
  CHECK(tape.value(dec.per_slot_recon).at(1, 0) ==
        doctest::Approx(recon[1]).epsilon(1e-12));
  CHECK(tape.value(dec.masks.masks).at(0, 0) ==
        doctest::Approx(e0 / (e0 + e1)).epsilon(1e-12));
  CHECK(tape.value(dec.masks.masks).at(1, 0) ==
        doctest::Approx(e1 / (e0 + e1)).epsilon(1e-12));
}

TEST_CASE("masks are column-stochastic after every decode") {
  Rng rng(77);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t d = 2;
    Fixture f(d, 500 + rep);
    Tape tape;
    auto p = f.store.bind(tape);
    std::size_t k = 1 + rng.uniform_index(6);
    Tensor slots_val = cgsa_test::random_tensor(rng, k, d, -2.0, 2.0);
    SlotSetVars slots{tape.constant(slots_val), k, d, 1, 1};
    auto dec = f.module.decode(tape, p, slots, 16, 4, 4);
    CHECK_NOTHROW(verify_mask_stack(tape, dec.masks));
    const Tensor& m = tape.value(dec.masks.masks);
    for (std::size_t i = 0; i < 16; ++i) {
      double sum = 0.0;
      for (std::size_t s = 0; s < k; ++s) sum += m.at(s, i);
      CHECK(std::fabs(sum - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("reconstruct_and_loss: partition of unity and zero cases") {
  Tape tape;
  const std::size_t k = 2, n = 3, d = 2;
  Rng rng(8);
  Tensor features = cgsa_test::random_tensor(rng, n, d);
  // Per-slot reconstruction that equals the input for every slot.
  Tensor per_slot(k * n, d);
  for (std::size_t s = 0; s < k; ++s)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j)
        per_slot.at(s * n + i, j) = features.at(i, j);
  Tensor logits = cgsa_test::random_tensor(rng, k, n, -1.0, 1.0);

  Var ps = tape.constant(per_slot);
  Var lg = tape.constant(logits);
  Var masks = tape.softmax_cols(lg);
  MaskStackVars ms{masks, lg, k, n};
  FeatureMapVars fm{tape.constant(features), n, d, 1, 3};
  auto [combined, loss] = reconstruct_and_loss(tape, ps, ms, fm);
  CHECK(tape.scalar(loss) == doctest::Approx(0.0).epsilon(1e-12));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      CHECK(tape.value(combined).at(i, j) ==
            doctest::Approx(features.at(i, j)).epsilon(1e-12));

  // All-zero reconstructions: loss is the squared norm of the input.
  Tape t2;
  Var zero = t2.constant(Tensor(k * n, d, 0.0));
  Var lg2 = t2.constant(logits);
  MaskStackVars ms2{t2.softmax_cols(lg2), lg2, k, n};
  FeatureMapVars fm2{t2.constant(features), n, d, 1, 3};
  auto [c2, l2] = reconstruct_and_loss(t2, zero, ms2, fm2);
  (void)c2;
  double want = 0.0;
  for (double v : features.data) want += v * v;
  CHECK(t2.scalar(l2) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("reconstruct_and_loss: N=2, d=1, K=2 direct summation oracle") {
  Tape tape;
  Tensor per_slot = Tensor::matrix(4, 1, {0.3, -0.2, 0.9, 0.5});
  Tensor masks_val = Tensor::matrix(2, 2, {0.25, 0.6, 0.75, 0.4});
  Tensor features = Tensor::matrix(2, 1, {0.1, 0.7});
  Var ps = tape.constant(per_slot);
  MaskStackVars ms{tape.constant(masks_val), tape.constant(masks_val), 2, 2};
  FeatureMapVars fm{tape.constant(features), 2, 1, 1, 2};
  auto [combined, loss] = reconstruct_and_loss(tape, ps, ms, fm);
  double h0 = 0.25 * 0.3 + 0.75 * 0.9;
  double h1 = 0.6 * (-0.2) + 0.4 * 0.5;
  CHECK(tape.value(combined).at(0, 0) == doctest::Approx(h0).epsilon(1e-12));
  CHECK(tape.value(combined).at(1, 0) == doctest::Approx(h1).epsilon(1e-12));
  double want = (h0 - 0.1) * (h0 - 0.1) + (h1 - 0.7) * (h1 - 0.7);
  CHECK(tape.scalar(loss) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("end-to-end slot gradient check against finite differences") {
  const std::size_t d = 2, k = 2, n = 4;
  Fixture f(d, 900);
  Rng data_rng(55);
  Tensor tokens = cgsa_test::random_tensor(data_rng, n, d);
  auto names = f.store.names();
  std::vector<Tensor> inputs;
  for (const auto& nm : names) inputs.push_back(f.store.get(nm));

  auto build = [&](Tape& t, const std::vector<Var>& vars) {
    std::map<std::string, Var> p;
    for (std::size_t i = 0; i < names.size(); ++i) p[names[i]] = vars[i];
    FeatureMapVars fm{t.constant(tokens), n, d, 2, 2};
    Rng rng(31);  // fresh stream per evaluation keeps the graph identical
    SlotAttentionModule module{"sa", d, AttnSoftmaxAxis::Tokens};
    auto slots = module.run(t, p, fm, k, 2, rng, 1);
    auto dec = module.decode(t, p, slots, n, 2, 2);
    auto [combined, loss] =
        reconstruct_and_loss(t, dec.per_slot_recon, dec.masks, fm);
    (void)combined;
    return loss;
  };
  auto res = cgsa_test::check_gradients(build, inputs, 1e-4, 1e-4);
  INFO("max err ", res.max_err, " over ", res.coords, " coordinates");
  CHECK(res.pass);
}
