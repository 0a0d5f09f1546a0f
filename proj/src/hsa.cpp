#include "cgsa/hsa.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace cgsa {

void HsaConfig::validate() const {
  if (depth != 1 && depth != 2)
    throw std::invalid_argument(
        "hsa: depth must be 1 or 2 (deeper hierarchies are rejected)");
  if (n < 2) throw std::invalid_argument("hsa: n must be >= 2");
  if (iters < 1) throw std::invalid_argument("hsa: iters must be >= 1");
  if (dim < 1) throw std::invalid_argument("hsa: dim must be >= 1");
}

HsaModule::HsaModule(const HsaConfig& config) : config_(config) {
  config_.validate();
  level1_ = SlotAttentionModule{"hsa.l1", config_.dim, config_.softmax_axis};
  level2_ = SlotAttentionModule{"hsa.l2", config_.dim, config_.softmax_axis};
}

void HsaModule::register_params(ParameterStore& store, Rng& rng) const {
  level1_.register_params(store, rng);
  if (config_.depth == 2) level2_.register_params(store, rng);
}

HsaOutputVars HsaModule::decompose(Tape& tape,
                                   const std::map<std::string, Var>& p,
                                   const FeatureMapVars& features, Rng& rng,
                                   bool light) const {
  if (features.dim != config_.dim)
    throw std::invalid_argument("hsa_decompose: feature dim mismatch");
  const std::size_t n = config_.n;
  const std::size_t n_tok = features.n_tokens;

  HsaOutputVars out;
  out.coarse = level1_.run(tape, p, features, n, config_.iters, rng, 1);
  if (light && config_.depth == 1) {
    out.fine = out.coarse;
    return out;
  }
  // The reconstruction target is treated as data: gradients reach the token
  // encoder only through the slot path, never through the target side of the
  // squared error.
  FeatureMapVars target = features;
  if (!light) target.tokens = tape.constant(tape.value(features.tokens));

  SlotDecodeResult dec1 =
      level1_.decode(tape, p, out.coarse, n_tok, features.grid_h, features.grid_w);
  out.m1 = dec1.masks;
  out.recon1_per_slot = dec1.per_slot_recon;
  if (!light) {
    auto [recon1, loss1] =
        reconstruct_and_loss(tape, dec1.per_slot_recon, dec1.masks, target);
    out.recon1 = recon1;
    out.loss1 = loss1;
  }

  if (light) {
    std::vector<Var> fine_parts;
    fine_parts.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      Var sub = tape.slice_rows(dec1.per_slot_recon, k * n_tok, n_tok);
      FeatureMapVars sub_features{sub, n_tok, config_.dim, features.grid_h,
                                  features.grid_w};
      fine_parts.push_back(
          level2_.run(tape, p, sub_features, n, config_.iters, rng, 2).slots);
    }
    out.fine =
        SlotSetVars{tape.concat_rows(fine_parts), n * n, config_.dim, 2,
                    config_.iters};
    return out;
  }

  if (config_.depth == 1) {
    out.fine = out.coarse;
    out.m2 = out.m1;
    out.recon2_per_slot = out.recon1_per_slot;
    out.recon2 = out.recon1;
    out.loss2 = out.loss1;
  } else {
    // Each coarse reconstruction becomes the feature map of the next level.
    std::vector<Var> fine_parts;
    fine_parts.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      Var sub = tape.slice_rows(dec1.per_slot_recon, k * n_tok, n_tok);
      FeatureMapVars sub_features{sub, n_tok, config_.dim, features.grid_h,
                                  features.grid_w};
      SlotSetVars fine_k =
          level2_.run(tape, p, sub_features, n, config_.iters, rng, 2);
      fine_parts.push_back(fine_k.slots);
    }
    Var fine_all = tape.concat_rows(fine_parts);
    out.fine = SlotSetVars{fine_all, n * n, config_.dim, 2, config_.iters};

    SlotDecodeResult dec2 = level2_.decode(tape, p, out.fine, n_tok,
                                           features.grid_h, features.grid_w);
    out.m2 = dec2.masks;
    out.recon2_per_slot = dec2.per_slot_recon;
    auto [recon2, loss2] =
        reconstruct_and_loss(tape, dec2.per_slot_recon, dec2.masks, target);
    out.recon2 = recon2;
    out.loss2 = loss2;
  }

  // Token-normalized weights; rows must be stochastic and kappa in (0, 1].
  out.weights = tape.normalize_rows(out.m2.masks);
  const Tensor& w = tape.value(out.weights);
  for (std::size_t k = 0; k < w.rows(); ++k) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < w.cols(); ++i) {
      sum += w.at(k, i);
      sq += w.at(k, i) * w.at(k, i);
    }
    if (std::fabs(sum - 1.0) > 1e-6)
      throw std::runtime_error("hsa_decompose: weight row does not sum to 1");
    if (!(sq > 0.0) || sq > 1.0 + 1e-12)
      throw std::runtime_error("hsa_decompose: kappa outside (0, 1]");
  }
  return out;
}

Var HsaModule::rec_loss(Tape& tape, const HsaOutputVars& out) const {
  if (config_.depth == 1) {
    // A single level contributes one term.
    return out.loss1;
  }
  return tape.add(out.loss1, out.loss2);
}

void register_fusion_params(ParameterStore& store, Rng& rng, std::size_t d,
                            std::size_t segment, std::size_t d_q) {
  store.add("fuse.w_map", xavier_init(rng, d, segment * d_q));
  store.add("fuse.b_map", Tensor(1, segment * d_q));
}

Var fuse_slot_queries(Tape& tape, const std::map<std::string, Var>& p,
                      Var object_queries, const SlotSetVars& fine_slots) {
  auto wit = p.find("fuse.w_map");
  auto bit = p.find("fuse.b_map");
  if (wit == p.end() || bit == p.end())
    throw std::invalid_argument("fuse_slot_queries: missing mapper parameters");
  const Tensor& q = tape.value(object_queries);
  const std::size_t m = q.rows(), d_q = q.cols(), k = fine_slots.count;
  if (m % k != 0)
    throw std::invalid_argument(
        "fuse_slot_queries: query count not divisible by slot count");
  const std::size_t segment = m / k;
  const Tensor& wmap = tape.value(wit->second);
  if (wmap.cols() != segment * d_q)
    throw std::invalid_argument("fuse_slot_queries: mapper output shape mismatch");

  // Row-major reshape of K x (s*d_q) lays segments out in slot order.
  Var mapped = tape.add_row(tape.matmul(fine_slots.slots, wit->second),
                            bit->second);
  Var mapped_rows = tape.reshape(mapped, {m, d_q});
  return tape.add(object_queries, mapped_rows);
}

}  // namespace cgsa
