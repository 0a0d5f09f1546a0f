#pragma once

#include <map>
#include <string>
#include <vector>

#include "cgsa/box.hpp"
#include "cgsa/hungarian.hpp"
#include "cgsa/image.hpp"
#include "cgsa/params.hpp"
#include "cgsa/slots.hpp"

namespace cgsa {

// Ground-truth or pseudo-label target; class ids run 1..C.
struct Target {
  Box box;
  int class_id = 1;
};

struct Detection {
  Box box;
  int class_id = 1;       // 1..C
  double confidence = 0;  // max non-background softmax probability
};

struct DetectorConfig {
  std::size_t image_size = 64;
  std::size_t patch = 8;
  std::size_t dim = 16;       // token dim d = query dim d_q
  std::size_t num_queries = 25;
  std::size_t num_classes = 3;  // background is the extra logit column

  std::size_t tokens_per_side() const { return image_size / patch; }
  std::size_t n_tokens() const { return tokens_per_side() * tokens_per_side(); }
  void validate() const;
};

// Decoder output on the tape plus its value-level summary.
struct QuerySetVars {
  Var queries;  // M x d_q final decoder embeddings
  Var logits;   // M x (C+1)
  Var probs;    // softmax of logits
  Var boxes;    // M x 4 sigmoid cxcywh
  std::size_t m = 0;
  std::size_t num_classes = 0;
};

// Per-query value snapshot for matching, prototypes and pseudo labels.
struct QueryInfo {
  int fg_class = 1;          // best non-background class, 1..C
  double fg_prob = 0;        // its probability
  bool background = false;   // argmax over all C+1 columns is background
};

class Detector {
 public:
  explicit Detector(const DetectorConfig& config);

  const DetectorConfig& config() const { return config_; }

  void register_params(ParameterStore& store, Rng& rng) const;

  FeatureMapVars encode_image(Tape& tape, const std::map<std::string, Var>& p,
                              const ImageU8& image) const;

  // One cross-attention layer over the (slot-aware) queries followed by a
  // pointwise feed-forward block, then classification and box heads.
  QuerySetVars detect(Tape& tape, const std::map<std::string, Var>& p,
                      const FeatureMapVars& features, Var queries) const;

  Var object_queries(const std::map<std::string, Var>& p) const;

 private:
  DetectorConfig config_;
};

std::vector<QueryInfo> summarize_queries(const Tape& tape,
                                         const QuerySetVars& qs);
std::vector<Detection> extract_detections(const Tape& tape,
                                          const QuerySetVars& qs);

struct DetectionLossResult {
  Var loss;
  bool background_only = false;  // empty target set: classification-only
  std::vector<int> matched_query;  // per target, index of its query
};

// Hungarian-matched DETR-style objective: focal classification (alpha 0.25,
// gamma 2) plus weighted L1 and GIoU box terms on matches, focal background
// on the rest, normalized by max(1, |targets|).
DetectionLossResult detection_loss(Tape& tape, const QuerySetVars& qs,
                                   const std::vector<Target>& targets,
                                   double lambda_l1 = 5.0,
                                   double lambda_giou = 2.0);

// Focal term for one softmax probability of the target class.
double focal_term(double p, double alpha, double gamma);

}  // namespace cgsa
