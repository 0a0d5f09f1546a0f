#pragma once

#include <cstddef>
#include <vector>

#include "cgsa/detector.hpp"

namespace cgsa {

enum class ScheduleKind { Fixed, Cosine, Exponential, Sigmoid };

// Confidence-threshold schedule over the adaptation steps s in [0, S].
// Cosine and exponential relax the threshold from tau_max toward tau_min;
// the sigmoid variant rises from tau_min toward tau_max as written.
struct ThresholdSchedule {
  ScheduleKind kind = ScheduleKind::Cosine;
  double tau_min = 0.40;
  double tau_max = 0.55;
  std::size_t total_steps = 500;  // S
  double beta_exp = 0.01;         // exponential decay speed
  double k_sig = 10.0;            // sigmoid steepness
  double tau_fix = 0.5;

  void validate() const;
  double at(double s) const;  // rejects s outside [0, S]
};

// Keeps exactly the detections whose confidence clears the threshold
// (inclusive) and converts them to training targets.
std::vector<Target> filter_pseudo_labels(const std::vector<Detection>& dets,
                                         double tau);

}  // namespace cgsa
