#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cgsa/adaptation_types.hpp"
#include "cgsa/hsa.hpp"

namespace cgsa {

// Every tunable of the pipeline. Defaults are the paper-default profile;
// parse order is defaults <- config file <- command-line overrides.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::string data_dir;
  std::string init_checkpoint;  // adapt: source-pretrained weights
  std::string resume;           // adapt: continue an interrupted run

  // Model geometry. Image size is fixed at 64x64 by the benchmark.
  std::size_t dim = 16;
  std::size_t patch = 8;
  std::size_t n = 5;
  int depth = 2;
  int iters = 3;
  std::size_t m_queries = 25;
  bool use_hsa = true;
  bool learn_slot_init = true;
  std::string slot_softmax_axis = "tokens";  // tokens | slots

  // Benchmark.
  bool single_class = false;
  std::size_t train_scenes = 512;
  std::size_t eval_scenes = 128;
  double fog_alpha = 0.5;
  double noise_sigma = 0.05;
  double hue_jitter_deg = 20.0;

  // Optimization.
  double lr = 0.01;
  // Token encoder and slot path train at lr * hsa_lr_scale, mirroring the
  // two-tier learning rates of the reference trainer.
  double hsa_lr_scale = 0.1;
  std::size_t batch_size = 8;
  std::size_t pretrain_steps = 300;
  std::size_t adapt_steps = 500;  // S, teacher-student steps after burn-in
  std::size_t burn_in = 20;
  double lambda_rec = 1.0;
  double lambda_con = 0.05;
  double lambda_l1 = 5.0;
  double lambda_giou = 2.0;

  // CGSC.
  double tau_con = 0.1;
  double proto_beta = 0.9;

  // Teacher-student.
  double teacher_gamma = 0.9993;
  std::string schedule = "cosine";  // fixed | cosine | exponential | sigmoid
  double tau_max = 0.55;
  double tau_min = 0.40;
  double tau_fix = 0.5;
  double beta_exp = 0.01;
  double k_sig = 10.0;

  // Output / eval.
  std::size_t checkpoint_interval = 0;  // 0 = final checkpoint only
  std::string eval_role = "teacher";    // student | teacher
  std::string eval_split = "eval";      // eval | train
  std::string eval_domain = "target";   // source | target

  // Ablation grids (reduced budgets keep the grid affordable).
  std::string ablate_grid = "components";  // components | slots | schedules | all
  std::size_t ablate_seeds = 5;
  std::size_t ablate_pretrain_steps = 200;
  std::size_t ablate_adapt_steps = 200;
  std::size_t ablate_train_scenes = 96;
  std::size_t ablate_eval_scenes = 64;
  std::size_t ablate_batch_size = 4;
  std::size_t ablate_jobs = 3;

  static constexpr std::size_t kImageSize = 64;

  std::size_t num_classes() const { return single_class ? 1 : 3; }
  std::size_t fine_slots() const {
    return depth == 2 ? n * n : n;
  }

  HsaConfig hsa_config() const;
  ThresholdSchedule threshold_schedule() const;

  void validate() const;  // throws naming the key and constraint

  // Canonical `key = value` serialization, keys sorted; feeds checkpoints
  // and the determinism contract.
  std::string serialize() const;
};

// Parses line-oriented `key = value` text (# starts a comment), then applies
// overrides, then validates. Unknown keys and malformed lines are rejected
// with the offending key/line named.
RunConfig parse_config(const std::string& file_text,
                       const std::vector<std::pair<std::string, std::string>>&
                           overrides = {});

RunConfig load_config_file(const std::string& path,
                           const std::vector<std::pair<std::string, std::string>>&
                               overrides = {});

// Applies one `key = value` assignment; shared by parser and checkpoints.
void apply_config_kv(RunConfig& config, const std::string& key,
                     const std::string& value);

}  // namespace cgsa
