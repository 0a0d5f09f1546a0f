#pragma once

#include <cstddef>
#include <vector>

#include "cgsa/tensor.hpp"

namespace cgsa {

// Closed-form InfoNCE similarity gradients: g_pos = -(1 - pi_pos)/tau and
// g_neg[c] = pi_c/tau, with pi the softmax of similarities/tau over the
// positive and all negatives.
struct InfoNceGrads {
  double g_pos = 0;
  std::vector<double> g_neg;
};

InfoNceGrads infonce_similarity_grads(double s_pos,
                                      const std::vector<double>& s_neg,
                                      double tau);

// The InfoNCE scalar itself, -log softmax at the positive; oracle target for
// the gradient formulas above.
double infonce_scalar(double s_pos, const std::vector<double>& s_neg,
                      double tau);

// One-dimensional noise iterate eta <- eta - alpha * Delta(eta) + r with
// Delta(eta) = k * max(eta - eta_star, 0) and r the residual term.
struct ContractionParams {
  double alpha = 0.5;     // alignment efficiency, > 0
  double k = 1.0;         // margin slope, > 0
  double eta_star = 0.1;  // fixed-point floor, in [0, 1]
  double residual = 0.0;  // r = beta * (eps_rec + sigma^2), >= 0

  void validate() const;
  bool contractive() const { return alpha * k > 0.0 && alpha * k < 1.0; }
  double ratio() const { return 1.0 - alpha * k; }
  // Fixed point of the affine region, eta_star + r / (alpha k).
  double fixed_point() const { return eta_star + residual / (alpha * k); }
  // Premise of the convergence claim: r <= (1 - alpha k) * eta_star.
  bool residual_within_premise() const {
    return residual <= (1.0 - alpha * k) * eta_star + 1e-15;
  }
};

struct ContractionTrajectory {
  std::vector<double> eta;   // eta_0 .. eta_steps
  bool contractive = false;
  double fixed_point = 0;    // meaningful only when contractive
  // max over affine-region steps of |e_{t+1}| / |e_t| with e = eta - fixed point.
  double empirical_ratio = 0;
};

ContractionTrajectory contraction_iterate(const ContractionParams& params,
                                          double eta0, std::size_t steps);

// Same-class minus maximal cross-class expected cosine (per class, then
// averaged over the classes present).
struct MarginReport {
  double mean_same = 0;
  double max_cross = 0;
  double delta = 0;          // mean_same - max_cross
  bool has_cross = false;    // needs >= 2 prototypes
  std::size_t classes_used = 0;
};

struct LabeledEmbedding {
  std::vector<double> values;
  int class_id = 1;  // 1..C
};

// prototypes: C x d rows; `available` marks which prototype rows are valid
// (uninitialized memory rows are excluded from both terms).
MarginReport margin_gain(const Tensor& prototypes,
                         const std::vector<bool>& available,
                         const std::vector<LabeledEmbedding>& embeddings);

// Squared l2 norms of row-stochastic weight rows (Lemma 1's kappa).
struct KappaReport {
  std::vector<double> kappa;
  double min_kappa = 0, max_kappa = 0, mean_kappa = 0;
};

KappaReport kappa_report(const Tensor& weights);

// Least-squares slope of a trace against its index; trend statistic for the
// margin/reconstruction traces.
double least_squares_slope(const std::vector<double>& values);

}  // namespace cgsa
