#include "cgsa/detector.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cgsa {

namespace {

constexpr double kFocalAlpha = 0.25;

Var fetch(const std::map<std::string, Var>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end())
    throw std::invalid_argument("detector: missing parameter " + name);
  return it->second;
}

struct CornerVars {
  Var x1, y1, x2, y2, area;
};

// box_row is a 1 x 4 cxcywh slice; widths stay positive through sigmoid.
CornerVars corners(Tape& t, Var box_row) {
  Var cx = t.entry(box_row, 0, 0);
  Var cy = t.entry(box_row, 0, 1);
  Var w = t.entry(box_row, 0, 2);
  Var h = t.entry(box_row, 0, 3);
  CornerVars c;
  c.x1 = t.sub(cx, t.scale(w, 0.5));
  c.y1 = t.sub(cy, t.scale(h, 0.5));
  c.x2 = t.add(cx, t.scale(w, 0.5));
  c.y2 = t.add(cy, t.scale(h, 0.5));
  c.area = t.mul(w, h);
  return c;
}

CornerVars corners_const(Tape& t, const Box& b) {
  CornerVars c;
  c.x1 = t.constant_scalar(b.x1());
  c.y1 = t.constant_scalar(b.y1());
  c.x2 = t.constant_scalar(b.x2());
  c.y2 = t.constant_scalar(b.y2());
  c.area = t.constant_scalar(b.area());
  return c;
}

Var giou_tape(Tape& t, const CornerVars& a, const CornerVars& b) {
  Var iw = t.relu(t.sub(t.min_elem(a.x2, b.x2), t.max_elem(a.x1, b.x1)));
  Var ih = t.relu(t.sub(t.min_elem(a.y2, b.y2), t.max_elem(a.y1, b.y1)));
  Var inter = t.mul(iw, ih);
  Var uni = t.sub(t.add(a.area, b.area), inter);
  Var hull_w = t.sub(t.max_elem(a.x2, b.x2), t.min_elem(a.x1, b.x1));
  Var hull_h = t.sub(t.max_elem(a.y2, b.y2), t.min_elem(a.y1, b.y1));
  Var hull = t.mul(hull_w, hull_h);
  return t.sub(t.div(inter, uni), t.div(t.sub(hull, uni), hull));
}

Var l1_tape(Tape& t, Var box_row, const Box& target) {
  Tensor tb(1, 4);
  tb.at(0, 0) = target.cx;
  tb.at(0, 1) = target.cy;
  tb.at(0, 2) = target.w;
  tb.at(0, 3) = target.h;
  return t.sum(t.abs(t.sub(box_row, t.constant(tb))));
}

// -alpha_t * (1-p)^gamma * log(p) with gamma = 2.
Var focal_tape(Tape& t, Var p, double alpha_t) {
  Var one_minus = t.add_scalar(t.neg(p), 1.0);
  return t.scale(t.mul(t.square(one_minus), t.log(p)), -alpha_t);
}

}  // namespace

double focal_term(double p, double alpha, double gamma) {
  return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
}

void DetectorConfig::validate() const {
  if (patch == 0 || image_size % patch != 0)
    throw std::invalid_argument("detector: image size must be divisible by patch");
  if (num_queries == 0 || num_classes == 0 || dim == 0)
    throw std::invalid_argument("detector: queries, classes and dim must be positive");
}

Detector::Detector(const DetectorConfig& config) : config_(config) {
  config_.validate();
}

void Detector::register_params(ParameterStore& store, Rng& rng) const {
  const std::size_t d = config_.dim;
  const std::size_t patch_in = 3 * config_.patch * config_.patch;
  // Small init keeps token magnitudes (and with them the summed
  // reconstruction objective) at the scale of the detection losses.
  store.add("det.patch.w", normal_init(rng, patch_in, d, 0.02));
  store.add("det.patch.b", Tensor(1, d));
  store.add("det.q_obj", normal_init(rng, config_.num_queries, d, 0.5));
  store.add("det.attn.w_q", xavier_init(rng, d, d));
  store.add("det.attn.w_k", xavier_init(rng, d, d));
  store.add("det.attn.w_v", xavier_init(rng, d, d));
  store.add("det.attn.w_o", xavier_init(rng, d, d));
  // Projections of the fixed ramp code; keys need position so queries can
  // attend spatially, values need it so the box head sees where it looked.
  store.add("det.attn.w_kpos", xavier_init(rng, 4, d));
  store.add("det.attn.w_vpos", xavier_init(rng, 4, d));
  store.add("det.ffn.w1", xavier_init(rng, d, 2 * d));
  store.add("det.ffn.b1", Tensor(1, 2 * d));
  store.add("det.ffn.w2", xavier_init(rng, 2 * d, d));
  store.add("det.ffn.b2", Tensor(1, d));
  store.add("det.cls.w", xavier_init(rng, d, config_.num_classes + 1));
  store.add("det.cls.b", Tensor(1, config_.num_classes + 1));
  store.add("det.box.w", xavier_init(rng, d, 4));
  store.add("det.box.b", Tensor(1, 4));
}

FeatureMapVars Detector::encode_image(Tape& tape,
                                      const std::map<std::string, Var>& p,
                                      const ImageU8& image) const {
  if (image.height != config_.image_size || image.width != config_.image_size)
    throw std::invalid_argument("encode_image: unexpected image size");
  if (image.height % config_.patch != 0 || image.width % config_.patch != 0)
    throw std::invalid_argument("encode_image: dims not divisible by patch");
  const std::size_t side = config_.tokens_per_side();
  const std::size_t pp = config_.patch;
  const std::size_t patch_in = 3 * pp * pp;
  Tensor patches(side * side, patch_in);
  for (std::size_t py = 0; py < side; ++py) {
    for (std::size_t px = 0; px < side; ++px) {
      double* row = &patches.data[(py * side + px) * patch_in];
      std::size_t j = 0;
      for (std::size_t y = 0; y < pp; ++y)
        for (std::size_t x = 0; x < pp; ++x)
          for (std::size_t c = 0; c < 3; ++c)
            row[j++] = image.at(py * pp + y, px * pp + x, c) / 255.0;
    }
  }
  Var tokens = tape.add_row(tape.matmul(tape.constant(patches),
                                        fetch(p, "det.patch.w")),
                            fetch(p, "det.patch.b"));
  return FeatureMapVars{tokens, side * side, config_.dim, side, side};
}

Var Detector::object_queries(const std::map<std::string, Var>& p) const {
  return fetch(p, "det.q_obj");
}

QuerySetVars Detector::detect(Tape& tape, const std::map<std::string, Var>& p,
                              const FeatureMapVars& features,
                              Var queries) const {
  const Tensor& qv = tape.value(queries);
  if (qv.cols() != config_.dim || qv.rows() != config_.num_queries)
    throw std::invalid_argument("detect: query shape mismatch");
  if (features.dim != config_.dim)
    throw std::invalid_argument("detect: feature dim mismatch");

  Var pos = tape.constant(positional_ramps(features.grid_h, features.grid_w));
  Var q = tape.matmul(queries, fetch(p, "det.attn.w_q"));
  Var k = tape.add(tape.matmul(features.tokens, fetch(p, "det.attn.w_k")),
                   tape.matmul(pos, fetch(p, "det.attn.w_kpos")));
  Var v = tape.add(tape.matmul(features.tokens, fetch(p, "det.attn.w_v")),
                   tape.matmul(pos, fetch(p, "det.attn.w_vpos")));
  Var attn = tape.softmax_rows(tape.scale(
      tape.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(config_.dim))));
  Var ctx = tape.matmul(tape.matmul(attn, v), fetch(p, "det.attn.w_o"));
  Var x1 = tape.add(queries, ctx);
  Var ffn = tape.add_row(
      tape.matmul(tape.tanh(tape.add_row(tape.matmul(x1, fetch(p, "det.ffn.w1")),
                                         fetch(p, "det.ffn.b1"))),
                  fetch(p, "det.ffn.w2")),
      fetch(p, "det.ffn.b2"));
  Var x2 = tape.add(x1, ffn);

  QuerySetVars out;
  out.queries = x2;
  out.logits = tape.add_row(tape.matmul(x2, fetch(p, "det.cls.w")),
                            fetch(p, "det.cls.b"));
  out.probs = tape.softmax_rows(out.logits);
  out.boxes = tape.sigmoid(tape.add_row(tape.matmul(x2, fetch(p, "det.box.w")),
                                        fetch(p, "det.box.b")));
  out.m = config_.num_queries;
  out.num_classes = config_.num_classes;
  return out;
}

std::vector<QueryInfo> summarize_queries(const Tape& tape,
                                         const QuerySetVars& qs) {
  const Tensor& probs = tape.value(qs.probs);
  const std::size_t c = qs.num_classes;
  std::vector<QueryInfo> out(qs.m);
  for (std::size_t i = 0; i < qs.m; ++i) {
    std::size_t best_fg = 0;
    double best_p = -1.0, best_all = -1.0;
    std::size_t best_all_idx = 0;
    for (std::size_t j = 0; j <= c; ++j) {
      double pj = probs.at(i, j);
      if (pj > best_all) {
        best_all = pj;
        best_all_idx = j;
      }
      if (j < c && pj > best_p) {
        best_p = pj;
        best_fg = j;
      }
    }
    out[i].fg_class = static_cast<int>(best_fg) + 1;
    out[i].fg_prob = best_p;
    out[i].background = best_all_idx == c;
  }
  return out;
}

std::vector<Detection> extract_detections(const Tape& tape,
                                          const QuerySetVars& qs) {
  auto info = summarize_queries(tape, qs);
  const Tensor& boxes = tape.value(qs.boxes);
  std::vector<Detection> out(qs.m);
  for (std::size_t i = 0; i < qs.m; ++i) {
    out[i].box = Box{boxes.at(i, 0), boxes.at(i, 1), boxes.at(i, 2),
                     boxes.at(i, 3)};
    out[i].class_id = info[i].fg_class;
    out[i].confidence = info[i].fg_prob;
  }
  return out;
}

DetectionLossResult detection_loss(Tape& tape, const QuerySetVars& qs,
                                   const std::vector<Target>& targets,
                                   double lambda_l1, double lambda_giou) {
  const std::size_t m = qs.m, c = qs.num_classes;
  const Tensor& probs = tape.value(qs.probs);
  const Tensor& boxes = tape.value(qs.boxes);
  for (const auto& t : targets) {
    if (t.class_id < 1 || static_cast<std::size_t>(t.class_id) > c)
      throw std::invalid_argument("detection_loss: target class out of range");
  }
  if (targets.size() > m)
    throw std::invalid_argument("detection_loss: more targets than queries");

  DetectionLossResult res;
  std::vector<bool> is_matched(m, false);
  res.matched_query.assign(targets.size(), -1);

  if (!targets.empty()) {
    // Match on class probability minus weighted box distances (maximize).
    Tensor score(targets.size(), m);
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const Box& tb = targets[t].box;
      const std::size_t tc = static_cast<std::size_t>(targets[t].class_id - 1);
      for (std::size_t q = 0; q < m; ++q) {
        Box qb{boxes.at(q, 0), boxes.at(q, 1), boxes.at(q, 2), boxes.at(q, 3)};
        score.at(t, q) = probs.at(q, tc) - lambda_l1 * l1_distance(qb, tb) -
                         lambda_giou * (1.0 - giou(qb, tb));
      }
    }
    Assignment assign = hungarian_assign(score);
    for (std::size_t t = 0; t < targets.size(); ++t) {
      res.matched_query[t] = static_cast<int>(assign.column_of_row[t]);
      is_matched[assign.column_of_row[t]] = true;
    }
  } else {
    res.background_only = true;
  }

  Var total = tape.constant_scalar(0.0);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const std::size_t q = static_cast<std::size_t>(res.matched_query[t]);
    const std::size_t tc = static_cast<std::size_t>(targets[t].class_id - 1);
    Var p_cls = tape.entry(qs.probs, q, tc);
    Var cls_term = focal_tape(tape, p_cls, kFocalAlpha);
    Var box_row = tape.slice_rows(qs.boxes, q, 1);
    Var l1 = l1_tape(tape, box_row, targets[t].box);
    Var g = giou_tape(tape, corners(tape, box_row),
                      corners_const(tape, targets[t].box));
    Var giou_loss = tape.add_scalar(tape.neg(g), 1.0);
    total = tape.add(total, tape.add(cls_term,
                                     tape.add(tape.scale(l1, lambda_l1),
                                              tape.scale(giou_loss, lambda_giou))));
  }
  for (std::size_t q = 0; q < m; ++q) {
    if (is_matched[q]) continue;
    Var p_bg = tape.entry(qs.probs, q, c);
    total = tape.add(total, focal_tape(tape, p_bg, 1.0 - kFocalAlpha));
  }
  const double norm = 1.0 / std::max<std::size_t>(1, targets.size());
  res.loss = tape.scale(total, norm);
  return res;
}

}  // namespace cgsa
