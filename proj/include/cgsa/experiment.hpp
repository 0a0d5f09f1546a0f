#pragma once

#include <map>
#include <string>
#include <vector>

#include "cgsa/adaptation.hpp"

namespace cgsa {

// Directory of one dataset split, e.g. <data_dir>/target_train.
std::string split_dir(const RunConfig& cfg, Domain domain,
                      const std::string& split);

// Writes the four dataset splits (source/target x train/eval).
void run_gen_data(const RunConfig& cfg);

// Source pretraining: detection + reconstruction on labeled source scenes.
// Emits pretrain_trace.csv, summary.csv and pretrain.ckpt under out_dir.
// Returns the summary key/value map.
std::map<std::string, double> run_pretrain(const RunConfig& cfg);

// Target adaptation: burn-in then teacher-student self-training with the
// full objective. Emits adapt_trace.csv, summary.csv, adapt.ckpt and
// (optionally) periodic adapt_step_<k>.ckpt files. Set cfg.resume to
// continue an interrupted run from one of those.
std::map<std::string, double> run_adapt(const RunConfig& cfg);

// Evaluates cfg.init_checkpoint (role cfg.eval_role) on the
// cfg.eval_domain / cfg.eval_split dataset; writes eval_result.csv,
// detections.csv and queries.csv.
EvalResult run_eval(const RunConfig& cfg);

// Executable checks of the analytic claims (closed-form InfoNCE gradients,
// contraction iteration, kappa laws, margin monotonicity). Writes
// theory_report.txt plus trajectory/residual CSVs; returns all-pass.
bool run_theory(const RunConfig& cfg);

// Argmax-over-slots mask coloring of the first scene of the selected split,
// both levels, written as PPM images.
void run_viz_masks(const RunConfig& cfg);

struct AblateRow {
  std::string grid;
  std::string label;
  std::uint64_t seed = 0;
  std::string status;  // ok | rejected
  double f1 = 0;
  double mean_ap = 0;
  std::string notes;
};

// Component grid {source_only, hsa, hsa_cgsc} over ablate_seeds seeds, the
// slot-count grid, and the schedule grid, per cfg.ablate_grid. Emits
// ablate_summary.csv.
std::vector<AblateRow> run_ablate(const RunConfig& cfg);

// Shared by run_* and the test suites.
struct EvalArtifacts {
  EvalResult result;
  std::vector<std::vector<Detection>> detections;
  // Final decoder embeddings per scene (M x d_q each) for external t-SNE.
  std::vector<Tensor> query_embeddings;
};

EvalArtifacts evaluate_model(const Model& model, const ParameterStore& store,
                             const std::vector<Scene>& scenes,
                             std::uint64_t eval_seed);

// Builds the checkpoint snapshot for a state; placement fields (out_dir,
// resume) are normalized away so resumed runs reproduce the original bytes.
Checkpoint make_checkpoint(const RunConfig& cfg, const AdaptState& state);
std::string snapshot_config_text(const RunConfig& cfg);

}  // namespace cgsa
