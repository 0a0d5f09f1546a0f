#pragma once

#include <map>
#include <string>

#include "cgsa/autodiff.hpp"
#include "cgsa/params.hpp"
#include "cgsa/rng.hpp"

namespace cgsa {

// N x d token features of one image plus its patch-grid geometry.
struct FeatureMapVars {
  Var tokens;
  std::size_t n_tokens = 0;
  std::size_t dim = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
};

// K x d slot states; level 1 = coarse, level 2 = fine.
struct SlotSetVars {
  Var slots;
  std::size_t count = 0;
  std::size_t dim = 0;
  int level = 1;
  int iters_used = 0;
};

// K x N competition masks (softmax across slots per token) and their logits.
struct MaskStackVars {
  Var masks;
  Var logits;
  std::size_t n_slots = 0;
  std::size_t n_tokens = 0;
};

struct SlotDecodeResult {
  Var per_slot_recon;  // (K*N) x d
  MaskStackVars masks;
};

// Which index the attention softmax normalizes over. The update rule as
// printed normalizes over tokens; the canonical slot-attention formulation
// normalizes over slots and then takes a weighted mean over tokens. Both are
// available; Tokens is the default.
enum class AttnSoftmaxAxis { Tokens, Slots };

// One slot-attention instance (projections, GRU, slot-init distribution,
// spatial-broadcast decoder) living under a name prefix in a ParameterStore.
struct SlotAttentionModule {
  std::string prefix;
  std::size_t dim = 0;
  AttnSoftmaxAxis softmax_axis = AttnSoftmaxAxis::Tokens;

  // Adds all parameters for this instance. Decoder hidden width is 2*dim,
  // two hidden tanh layers, d+1 output channels split into a reconstruction
  // head and a mask-logit head.
  void register_params(ParameterStore& store, Rng& rng) const;

  SlotSetVars init_slots(Tape& tape, const std::map<std::string, Var>& p,
                         std::size_t k, Rng& rng, int level) const;

  SlotSetVars step(Tape& tape, const std::map<std::string, Var>& p,
                   const SlotSetVars& slots,
                   const FeatureMapVars& features) const;

  SlotSetVars run(Tape& tape, const std::map<std::string, Var>& p,
                  const FeatureMapVars& features, std::size_t k, int iters,
                  Rng& rng, int level) const;

  SlotDecodeResult decode(Tape& tape, const std::map<std::string, Var>& p,
                          const SlotSetVars& slots, std::size_t n_tokens,
                          std::size_t grid_h, std::size_t grid_w) const;
};

// hat_h = sum_k hat_h_k .* m_k and the squared-error objective against the
// input features. Returns (combined N x d, scalar loss).
std::pair<Var, Var> reconstruct_and_loss(Tape& tape, Var per_slot_recon,
                                         const MaskStackVars& masks,
                                         const FeatureMapVars& features);

// Left/right/top/bottom linear ramps over the patch grid, N x 4.
Tensor positional_ramps(std::size_t grid_h, std::size_t grid_w);

// Throws unless every token's mask column sums to 1 within tol.
void verify_mask_stack(const Tape& tape, const MaskStackVars& masks,
                       double tol = 1e-6);

}  // namespace cgsa
