#pragma once

#include <optional>
#include <vector>

#include "cgsa/adaptation_types.hpp"
#include "cgsa/cgsc.hpp"
#include "cgsa/checkpoint.hpp"
#include "cgsa/config.hpp"
#include "cgsa/hsa.hpp"
#include "cgsa/synthbench.hpp"
#include "cgsa/theory.hpp"

namespace cgsa {

// Detector plus (optionally) the hierarchical slot path and query fusion.
class Model {
 public:
  explicit Model(const RunConfig& config);

  const RunConfig& config() const { return config_; }
  const Detector& detector() const { return detector_; }
  bool uses_hsa() const { return hsa_.has_value(); }
  const HsaModule& hsa() const { return *hsa_; }

  void register_params(ParameterStore& store, Rng& rng) const;

  struct Forward {
    FeatureMapVars features;
    std::optional<HsaOutputVars> hsa;
    QuerySetVars queries;
  };

  // light = true skips the fine-level decode and all reconstruction terms;
  // used for teacher forwards and evaluation where only detections matter.
  Forward forward(Tape& tape, const std::map<std::string, Var>& bound,
                  const ImageU8& image, Rng& rng, bool light = false) const;

 private:
  RunConfig config_;
  Detector detector_;
  std::optional<HsaModule> hsa_;
};

// Student/teacher pair, prototype memory and the step counter; trace buffers
// live beside it and are not part of checkpoints.
struct AdaptState {
  ParameterStore student;
  ParameterStore teacher;
  PrototypeMemory memory;
  std::size_t step = 0;  // counts burn-in + teacher-student steps
  Rng rng;

  std::vector<double> trace_rec;
  std::vector<double> trace_delta;
};

// theta_t <- gamma * theta_t + (1 - gamma) * theta_s.
void teacher_ema_update(AdaptState& state, double gamma);

struct StepStats {
  double total = 0;
  double det = 0;     // supervised or pseudo-label detection loss
  double rec = 0, rec1 = 0, rec2 = 0;
  double con = 0;
  double tau = 0;
  std::size_t pseudo_count = 0;
  std::size_t skipped_unsup = 0;  // images with an empty pseudo-label set
  double margin_delta = 0;
  bool margin_valid = false;
  double kappa_min = 0, kappa_mean = 0, kappa_max = 0;
  bool burn_in = false;
};

// One SGD step of detection loss + lambda_rec * reconstruction on a labeled
// source batch.
StepStats pretrain_step(const Model& model, ParameterStore& store, Rng& rng,
                        const std::vector<const Scene*>& batch);

// One teacher-student step: teacher pseudo labels at tau(s), student loss
// (detection + lambda_con * contrast + lambda_rec * reconstruction), student
// SGD, prototype EMA, teacher EMA. Steps below burn_in train the student on
// the reconstruction term alone.
StepStats adapt_step(const Model& model, AdaptState& state,
                     const std::vector<const Scene*>& batch,
                     const ThresholdSchedule& schedule);

}  // namespace cgsa
