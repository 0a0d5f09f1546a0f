#include "cgsa/theory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cgsa/numeric.hpp"

namespace cgsa {

InfoNceGrads infonce_similarity_grads(double s_pos,
                                      const std::vector<double>& s_neg,
                                      double tau) {
  if (tau <= 0.0)
    throw std::invalid_argument("infonce_similarity_grads: tau must be > 0");
  std::vector<double> logits;
  logits.reserve(s_neg.size() + 1);
  logits.push_back(s_pos / tau);
  for (double s : s_neg) logits.push_back(s / tau);
  std::vector<double> pi = softmax(logits);
  InfoNceGrads g;
  g.g_pos = -(1.0 - pi[0]) / tau;
  g.g_neg.resize(s_neg.size());
  for (std::size_t i = 0; i < s_neg.size(); ++i) g.g_neg[i] = pi[i + 1] / tau;
  return g;
}

double infonce_scalar(double s_pos, const std::vector<double>& s_neg,
                      double tau) {
  if (tau <= 0.0) throw std::invalid_argument("infonce_scalar: tau must be > 0");
  double mx = s_pos / tau;
  for (double s : s_neg) mx = std::max(mx, s / tau);
  double z = std::exp(s_pos / tau - mx);
  for (double s : s_neg) z += std::exp(s / tau - mx);
  return -(s_pos / tau - mx) + std::log(z);
}

void ContractionParams::validate() const {
  if (alpha <= 0.0 || k <= 0.0)
    throw std::invalid_argument("ContractionParams: alpha and k must be > 0");
  if (eta_star < 0.0 || eta_star > 1.0)
    throw std::invalid_argument("ContractionParams: eta_star must be in [0, 1]");
  if (residual < 0.0)
    throw std::invalid_argument("ContractionParams: residual must be >= 0");
}

ContractionTrajectory contraction_iterate(const ContractionParams& params,
                                          double eta0, std::size_t steps) {
  params.validate();
  if (eta0 < 0.0 || eta0 > 1.0)
    throw std::invalid_argument("contraction_iterate: eta0 must be in [0, 1]");
  ContractionTrajectory out;
  out.contractive = params.contractive();
  if (out.contractive) out.fixed_point = params.fixed_point();
  out.eta.reserve(steps + 1);
  out.eta.push_back(eta0);
  double eta = eta0;
  for (std::size_t t = 0; t < steps; ++t) {
    double delta = params.k * std::max(eta - params.eta_star, 0.0);
    double prev = eta;
    eta = eta - params.alpha * delta + params.residual;
    out.eta.push_back(eta);
    if (out.contractive && prev > params.eta_star) {
      double e0 = std::fabs(prev - out.fixed_point);
      double e1 = std::fabs(eta - out.fixed_point);
      if (e0 > 1e-300)
        out.empirical_ratio = std::max(out.empirical_ratio, e1 / e0);
    }
  }
  return out;
}

MarginReport margin_gain(const Tensor& prototypes,
                         const std::vector<bool>& available,
                         const std::vector<LabeledEmbedding>& embeddings) {
  const std::size_t c_total = prototypes.rows();
  if (available.size() != c_total)
    throw std::invalid_argument("margin_gain: availability size mismatch");

  // Per-class expected similarity against every available prototype.
  std::vector<double> proto_row(prototypes.cols());
  double sum_same = 0.0, sum_cross = 0.0, sum_delta = 0.0;
  std::size_t used = 0;
  bool any_cross = false;
  for (std::size_t c = 1; c <= c_total; ++c) {
    if (!available[c - 1]) continue;
    std::vector<const LabeledEmbedding*> of_class;
    for (const auto& e : embeddings)
      if (e.class_id == static_cast<int>(c)) of_class.push_back(&e);
    if (of_class.empty()) continue;

    double same = 0.0;
    for (std::size_t j = 0; j < prototypes.cols(); ++j)
      proto_row[j] = prototypes.at(c - 1, j);
    for (const auto* e : of_class)
      same += cosine_similarity_or_zero(proto_row, e->values);
    same /= static_cast<double>(of_class.size());

    double cross = -2.0;
    bool has_cross = false;
    for (std::size_t c2 = 1; c2 <= c_total; ++c2) {
      if (c2 == c || !available[c2 - 1]) continue;
      for (std::size_t j = 0; j < prototypes.cols(); ++j)
        proto_row[j] = prototypes.at(c2 - 1, j);
      double mean2 = 0.0;
      for (const auto* e : of_class)
        mean2 += cosine_similarity_or_zero(proto_row, e->values);
      mean2 /= static_cast<double>(of_class.size());
      cross = std::max(cross, mean2);
      has_cross = true;
    }

    sum_same += same;
    if (has_cross) {
      sum_cross += cross;
      sum_delta += same - cross;
      any_cross = true;
    } else {
      sum_delta += same;
    }
    ++used;
  }

  MarginReport rep;
  rep.classes_used = used;
  if (used == 0) return rep;
  rep.mean_same = sum_same / static_cast<double>(used);
  rep.has_cross = any_cross;
  rep.max_cross = any_cross ? sum_cross / static_cast<double>(used) : 0.0;
  rep.delta = sum_delta / static_cast<double>(used);
  return rep;
}

KappaReport kappa_report(const Tensor& weights) {
  KappaReport rep;
  const std::size_t k = weights.rows(), n = weights.cols();
  if (k == 0 || n == 0)
    throw std::invalid_argument("kappa_report: empty weight matrix");
  rep.kappa.resize(k);
  for (std::size_t r = 0; r < k; ++r) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double w = weights.at(r, i);
      if (w < 0.0)
        throw std::invalid_argument("kappa_report: negative weight entry");
      sum += w;
      sq += w * w;
    }
    if (std::fabs(sum - 1.0) > 1e-6)
      throw std::invalid_argument("kappa_report: row is not stochastic");
    rep.kappa[r] = sq;
  }
  rep.min_kappa = *std::min_element(rep.kappa.begin(), rep.kappa.end());
  rep.max_kappa = *std::max_element(rep.kappa.begin(), rep.kappa.end());
  double mean = 0.0;
  for (double v : rep.kappa) mean += v;
  rep.mean_kappa = mean / static_cast<double>(k);
  return rep;
}

double least_squares_slope(const std::vector<double>& values) {
  const std::size_t n = values.size();
  if (n < 2) throw std::invalid_argument("least_squares_slope: need >= 2 points");
  double mean_x = (n - 1) / 2.0, mean_y = 0.0;
  for (double v : values) mean_y += v;
  mean_y /= static_cast<double>(n);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dx = static_cast<double>(i) - mean_x;
    num += dx * (values[i] - mean_y);
    den += dx * dx;
  }
  return num / den;
}

}  // namespace cgsa
