#pragma once

#include <map>
#include <string>

#include "cgsa/slots.hpp"

namespace cgsa {

// Hierarchy geometry: depth 1 collapses to single-level slot attention,
// depth 2 refines each coarse reconstruction into n fine slots (n^2 total).
struct HsaConfig {
  int depth = 2;
  std::size_t n = 5;          // slots per level
  int iters = 3;              // attention iterations per level
  std::size_t dim = 16;       // feature dim d (= query dim d_q)
  AttnSoftmaxAxis softmax_axis = AttnSoftmaxAxis::Tokens;

  std::size_t fine_slots() const {
    return depth == 2 ? n * n : n;
  }
  void validate() const;
};

struct HsaOutputVars {
  SlotSetVars coarse;     // n x d
  SlotSetVars fine;       // n^depth x d
  MaskStackVars m1, m2;   // competition masks per level
  Var recon1_per_slot;    // (n*N) x d
  Var recon2_per_slot;    // (K*N) x d
  Var recon1, recon2;     // combined N x d per level
  Var loss1, loss2;       // per-level squared reconstruction errors
  Var weights;            // w2: K x N, rows sum to 1 (token-normalized masks)
};

class HsaModule {
 public:
  explicit HsaModule(const HsaConfig& config);

  const HsaConfig& config() const { return config_; }

  void register_params(ParameterStore& store, Rng& rng) const;

  // Coarse decomposition, per-coarse-slot refinement, decode against the
  // original tokens, then token-normalization of the fine masks. light mode
  // stops after the fine slots (no fine decode, losses or weights); it is
  // for forwards that only need slot-aware queries.
  HsaOutputVars decompose(Tape& tape, const std::map<std::string, Var>& p,
                          const FeatureMapVars& features, Rng& rng,
                          bool light = false) const;

  // Sum of both levels' reconstruction objectives.
  Var rec_loss(Tape& tape, const HsaOutputVars& out) const;

 private:
  HsaConfig config_;
  SlotAttentionModule level1_, level2_;
};

// Adds f_map(z) segment-wise to the object queries: slot k maps to rows
// [k*s, (k+1)*s) of an M x d_q addition, s = M / K. Requires M % K == 0.
Var fuse_slot_queries(Tape& tape, const std::map<std::string, Var>& p,
                      Var object_queries, const SlotSetVars& fine_slots);

// Registers the shared per-slot linear mapper (d -> s * d_q).
void register_fusion_params(ParameterStore& store, Rng& rng, std::size_t d,
                            std::size_t segment, std::size_t d_q);

}  // namespace cgsa
