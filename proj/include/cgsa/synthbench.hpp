#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cgsa/box.hpp"
#include "cgsa/detector.hpp"
#include "cgsa/image.hpp"
#include "cgsa/rng.hpp"

namespace cgsa {

enum class Domain { Source, Target };

// Class ids: circle = 1, square = 2, triangle = 3.
constexpr int kClassCircle = 1;
constexpr int kClassSquare = 2;
constexpr int kClassTriangle = 3;

struct SceneConfig {
  std::size_t image_size = 64;
  std::size_t min_objects = 1;
  std::size_t max_objects = 6;
  bool single_class = false;   // circles only (single-class protocol)
  double fog_alpha = 0.5;      // blend toward gray 0.7
  double noise_sigma = 0.05;   // additive Gaussian pixel noise, clamped
  double hue_jitter_deg = 20;  // per-scene hue rotation range

  std::size_t num_classes() const { return single_class ? 1 : 3; }
  void validate() const;
};

struct Scene {
  ImageU8 image;
  std::vector<Target> ground_truth;
  Domain domain = Domain::Source;
  std::uint64_t seed = 0;
};

// Layout is a pure function of the seed; the domain shift perturbs pixels
// only, so source/target ground truths coincide for equal seeds.
Scene generate_scene(std::uint64_t seed, Domain domain,
                     const SceneConfig& config);

// Directory layout: scene_%06zu.ppm plus annotations.csv
// (scene_id,class,cx,cy,w,h), UTF-8, LF, 17 significant digits.
void write_dataset(const std::string& dir, const std::vector<Scene>& scenes);
std::vector<Scene> read_dataset(const std::string& dir);

struct EvalResult {
  std::vector<double> ap_per_class;  // AP@0.5, 11-point interpolated
  double mean_ap = 0;
  double f1 = 0;  // at the fixed confidence cut
  std::size_t tp = 0, fp = 0, fn = 0;
  bool degenerate = false;  // no ground truth and no detections anywhere
};

// Greedy confidence-descending matching at IoU >= threshold, one match per
// ground-truth object; detections below conf_cut are ignored for F1 only.
EvalResult evaluate(const std::vector<std::vector<Detection>>& detections,
                    const std::vector<std::vector<Target>>& ground_truth,
                    std::size_t num_classes, double iou_threshold = 0.5,
                    double conf_cut = 0.5);

}  // namespace cgsa
