#pragma once

#include <map>
#include <optional>
#include <vector>

#include "cgsa/autodiff.hpp"
#include "cgsa/detector.hpp"
#include "cgsa/tensor.hpp"

namespace cgsa {

// Global class prototypes with EMA state. Classes never observed stay
// uninitialized and are excluded from the contrastive softmax.
struct PrototypeMemory {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  double beta = 0.9;   // EMA coefficient, in [0, 1)
  double tau = 0.1;    // contrast temperature, > 0
  Tensor prototypes;   // C x d
  std::vector<bool> initialized;

  static PrototypeMemory create(std::size_t num_classes, std::size_t dim,
                                double beta, double tau);
  std::vector<double> prototype(std::size_t class_id) const;  // 1..C
  std::vector<double> norms() const;                          // per class
};

// Batch mean of same-class decoder queries folded into the memory by EMA.
// Queries whose argmax is background are excluded. First observation of a
// class initializes its prototype directly.
void update_prototype_memory(PrototypeMemory& memory,
                             const Tensor& query_embeddings,
                             const std::vector<QueryInfo>& info);

// Mask-weighted convex combinations of token features, one per slot.
// weights must be row-stochastic (each row sums to 1 within 1e-6).
struct WeightedSlotSet {
  Var slots;                 // K x d
  std::vector<int> labels;   // 0 = unlabeled, else 1..C
  std::size_t count = 0;
  std::size_t dim = 0;
};

WeightedSlotSet weighted_slots(Tape& tape, Var weights, Var features);

// Cosine slot-query similarity, Hungarian maximum matching, label transfer.
// Slots matched to background-class queries stay unlabeled. Zero-norm
// vectors contribute similarity 0.
void assign_slot_labels(Tape& tape, WeightedSlotSet& slots,
                        const Tensor& query_embeddings,
                        const std::vector<QueryInfo>& info);

// Mean weighted slot per labeled class; empty when nothing is labeled.
std::map<int, Var> slot_class_prototypes(Tape& tape,
                                         const WeightedSlotSet& slots);

struct ContrastLossResult {
  Var loss;
  std::size_t active_classes = 0;  // classes entering the objective
  bool skipped = false;            // no prototype/slot overlap: loss 0
  bool single_class_mode = false;  // pure alignment form
};

// InfoNCE over active classes (those with both an initialized memory
// prototype and a slot prototype this step); with one active class the
// softmax collapses and the loss becomes plain negative cosine alignment.
ContrastLossResult slot_contrast_loss(Tape& tape,
                                      const PrototypeMemory& memory,
                                      const std::map<int, Var>& slot_protos);

}  // namespace cgsa
