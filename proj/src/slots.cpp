#include "cgsa/slots.hpp"

#include <cmath>
#include <stdexcept>

namespace cgsa {

namespace {
Var fetch(const std::map<std::string, Var>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end())
    throw std::invalid_argument("slot attention: missing parameter " + name);
  return it->second;
}
}  // namespace

void SlotAttentionModule::register_params(ParameterStore& store,
                                          Rng& rng) const {
  const std::size_t d = dim;
  store.add(prefix + ".w_q", xavier_init(rng, d, d));
  store.add(prefix + ".w_k", xavier_init(rng, d, d));
  store.add(prefix + ".w_v", xavier_init(rng, d, d));
  const char* gates[] = {"u", "r", "c"};
  for (const char* g : gates) {
    store.add(prefix + ".gru.w_" + g, xavier_init(rng, d, d));
    store.add(prefix + ".gru.u_" + g, xavier_init(rng, d, d));
    store.add(prefix + ".gru.b_" + g, Tensor(1, d));
  }
  store.add(prefix + ".init.mean", normal_init(rng, 1, d, 0.5));
  store.add(prefix + ".init.logvar", Tensor(1, d, -2.0));
  const std::size_t hidden = 2 * d;
  store.add(prefix + ".dec.w1", xavier_init(rng, d + 4, hidden));
  store.add(prefix + ".dec.b1", Tensor(1, hidden));
  store.add(prefix + ".dec.w2", xavier_init(rng, hidden, hidden));
  store.add(prefix + ".dec.b2", Tensor(1, hidden));
  store.add(prefix + ".dec.w_rec", xavier_init(rng, hidden, d));
  store.add(prefix + ".dec.b_rec", Tensor(1, d));
  store.add(prefix + ".dec.w_alpha", xavier_init(rng, hidden, 1));
  store.add(prefix + ".dec.b_alpha", Tensor(1, 1));
}

SlotSetVars SlotAttentionModule::init_slots(Tape& tape,
                                            const std::map<std::string, Var>& p,
                                            std::size_t k, Rng& rng,
                                            int level) const {
  if (k < 1) throw std::invalid_argument("init_slots: K must be >= 1");
  Tensor eps(k, dim);
  for (auto& v : eps.data) v = rng.normal();
  Var eps_v = tape.constant(eps);
  Var mean = fetch(p, prefix + ".init.mean");
  Var logvar = fetch(p, prefix + ".init.logvar");
  Var stddev = tape.exp(tape.scale(logvar, 0.5));
  Var slots = tape.add_row(tape.mul_row(eps_v, stddev), mean);
  return SlotSetVars{slots, k, dim, level, 0};
}

SlotSetVars SlotAttentionModule::step(Tape& tape,
                                      const std::map<std::string, Var>& p,
                                      const SlotSetVars& slots,
                                      const FeatureMapVars& features) const {
  if (slots.dim != features.dim)
    throw std::invalid_argument("slot_attention_step: slot/feature dim mismatch");
  Var keys = tape.matmul(features.tokens, fetch(p, prefix + ".w_k"));
  Var values = tape.matmul(features.tokens, fetch(p, prefix + ".w_v"));
  Var queries = tape.matmul(slots.slots, fetch(p, prefix + ".w_q"));
  Var scores = tape.scale(tape.matmul_nt(queries, keys),
                          1.0 / std::sqrt(static_cast<double>(dim)));
  Var update;
  if (softmax_axis == AttnSoftmaxAxis::Tokens) {
    // As the update rule is written: normalize over the token index.
    Var attn = tape.softmax_rows(scores);
    update = tape.matmul(attn, values);
  } else {
    // Canonical variant: competition over slots, then weighted mean.
    Var attn = tape.softmax_cols(scores);
    Var weights = tape.normalize_rows(attn);
    update = tape.matmul(weights, values);
  }

  // Shared GRU over all slot rows.
  Var h = slots.slots;
  Var u = tape.sigmoid(tape.add_row(
      tape.add(tape.matmul(update, fetch(p, prefix + ".gru.w_u")),
               tape.matmul(h, fetch(p, prefix + ".gru.u_u"))),
      fetch(p, prefix + ".gru.b_u")));
  Var r = tape.sigmoid(tape.add_row(
      tape.add(tape.matmul(update, fetch(p, prefix + ".gru.w_r")),
               tape.matmul(h, fetch(p, prefix + ".gru.u_r"))),
      fetch(p, prefix + ".gru.b_r")));
  Var cand = tape.tanh(tape.add_row(
      tape.add(tape.matmul(update, fetch(p, prefix + ".gru.w_c")),
               tape.matmul(tape.mul(r, h), fetch(p, prefix + ".gru.u_c"))),
      fetch(p, prefix + ".gru.b_c")));
  Var next = tape.add(tape.sub(h, tape.mul(u, h)), tape.mul(u, cand));
  return SlotSetVars{next, slots.count, slots.dim, slots.level,
                     slots.iters_used + 1};
}

SlotSetVars SlotAttentionModule::run(Tape& tape,
                                     const std::map<std::string, Var>& p,
                                     const FeatureMapVars& features,
                                     std::size_t k, int iters, Rng& rng,
                                     int level) const {
  if (iters < 1) throw std::invalid_argument("run_slot_attention: iters must be >= 1");
  SlotSetVars slots = init_slots(tape, p, k, rng, level);
  for (int i = 0; i < iters; ++i) slots = step(tape, p, slots, features);
  return slots;
}

SlotDecodeResult SlotAttentionModule::decode(Tape& tape,
                                             const std::map<std::string, Var>& p,
                                             const SlotSetVars& slots,
                                             std::size_t n_tokens,
                                             std::size_t grid_h,
                                             std::size_t grid_w) const {
  if (grid_h * grid_w != n_tokens)
    throw std::invalid_argument("decode_slots: grid does not match token count");
  Tensor pos = positional_ramps(grid_h, grid_w);
  Var x = tape.broadcast_slots_concat(slots.slots, pos);
  Var h1 = tape.tanh(tape.add_row(tape.matmul(x, fetch(p, prefix + ".dec.w1")),
                                  fetch(p, prefix + ".dec.b1")));
  Var h2 = tape.tanh(tape.add_row(tape.matmul(h1, fetch(p, prefix + ".dec.w2")),
                                  fetch(p, prefix + ".dec.b2")));
  Var recon = tape.add_row(tape.matmul(h2, fetch(p, prefix + ".dec.w_rec")),
                           fetch(p, prefix + ".dec.b_rec"));
  Var alpha = tape.add_row(tape.matmul(h2, fetch(p, prefix + ".dec.w_alpha")),
                           fetch(p, prefix + ".dec.b_alpha"));
  Var logits = tape.reshape(alpha, {slots.count, n_tokens});
  Var masks = tape.softmax_cols(logits);
  SlotDecodeResult out;
  out.per_slot_recon = recon;
  out.masks = MaskStackVars{masks, logits, slots.count, n_tokens};
  verify_mask_stack(tape, out.masks);
  return out;
}

std::pair<Var, Var> reconstruct_and_loss(Tape& tape, Var per_slot_recon,
                                         const MaskStackVars& masks,
                                         const FeatureMapVars& features) {
  Var combined = tape.mask_combine(per_slot_recon, masks.masks, masks.n_tokens);
  Var diff = tape.sub(combined, features.tokens);
  Var loss = tape.sum(tape.square(diff));
  return {combined, loss};
}

Tensor positional_ramps(std::size_t grid_h, std::size_t grid_w) {
  Tensor pos(grid_h * grid_w, 4);
  const double dh = grid_h > 1 ? 1.0 / static_cast<double>(grid_h - 1) : 0.0;
  const double dw = grid_w > 1 ? 1.0 / static_cast<double>(grid_w - 1) : 0.0;
  for (std::size_t r = 0; r < grid_h; ++r) {
    for (std::size_t c = 0; c < grid_w; ++c) {
      const std::size_t i = r * grid_w + c;
      const double x = c * dw, y = r * dh;
      pos.at(i, 0) = x;
      pos.at(i, 1) = 1.0 - x;
      pos.at(i, 2) = y;
      pos.at(i, 3) = 1.0 - y;
    }
  }
  return pos;
}

void verify_mask_stack(const Tape& tape, const MaskStackVars& masks,
                       double tol) {
  const Tensor& m = tape.value(masks.masks);
  for (std::size_t i = 0; i < masks.n_tokens; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < masks.n_slots; ++k) s += m.at(k, i);
    if (std::fabs(s - 1.0) > tol)
      throw std::runtime_error("mask stack: token column does not sum to 1");
  }
}

}  // namespace cgsa
