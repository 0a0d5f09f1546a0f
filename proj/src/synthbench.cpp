#include "cgsa/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cgsa {

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0);
  double c = v * s;
  double hp = h / 60.0;
  double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  double m = v - c;
  return Rgb{r + m, g + m, b + m};
}

// Rotation of hue by angle degrees; identity is taken literally when the
// angle is zero so the null shift stays bit-exact.
Rgb rotate_hue(const Rgb& in, double angle_deg) {
  double mx = std::max({in.r, in.g, in.b});
  double mn = std::min({in.r, in.g, in.b});
  double v = mx, c = mx - mn;
  if (c <= 0.0) return in;  // achromatic
  double h;
  if (mx == in.r) h = 60.0 * std::fmod((in.g - in.b) / c, 6.0);
  else if (mx == in.g) h = 60.0 * ((in.b - in.r) / c + 2.0);
  else h = 60.0 * ((in.r - in.g) / c + 4.0);
  double s = v > 0.0 ? c / v : 0.0;
  return hsv_to_rgb(h + angle_deg, s, v);
}

struct ShapeSpec {
  int class_id;
  double cx, cy, w, h;  // pixels
  Rgb color;
};

bool point_in_triangle(double px, double py, double x0, double y0, double x1,
                       double y1, double x2, double y2) {
  auto sign = [](double ax, double ay, double bx, double by, double cx,
                 double cy) {
    return (ax - cx) * (by - cy) - (bx - cx) * (ay - cy);
  };
  double d1 = sign(px, py, x0, y0, x1, y1);
  double d2 = sign(px, py, x1, y1, x2, y2);
  double d3 = sign(px, py, x2, y2, x0, y0);
  bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
  bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
  return !(has_neg && has_pos);
}

void rasterize(std::vector<Rgb>& canvas, std::size_t size,
               const ShapeSpec& sh) {
  const double x1 = sh.cx - sh.w / 2, x2 = sh.cx + sh.w / 2;
  const double y1 = sh.cy - sh.h / 2, y2 = sh.cy + sh.h / 2;
  const std::size_t px1 = static_cast<std::size_t>(std::max(0.0, std::floor(x1)));
  const std::size_t py1 = static_cast<std::size_t>(std::max(0.0, std::floor(y1)));
  const std::size_t px2 = std::min(size - 1, static_cast<std::size_t>(std::ceil(x2)));
  const std::size_t py2 = std::min(size - 1, static_cast<std::size_t>(std::ceil(y2)));
  for (std::size_t y = py1; y <= py2; ++y) {
    for (std::size_t x = px1; x <= px2; ++x) {
      const double fx = x + 0.5, fy = y + 0.5;
      bool inside = false;
      switch (sh.class_id) {
        case kClassCircle: {
          double dx = (fx - sh.cx) / (sh.w / 2);
          double dy = (fy - sh.cy) / (sh.h / 2);
          inside = dx * dx + dy * dy <= 1.0;
          break;
        }
        case kClassSquare:
          inside = fx >= x1 && fx <= x2 && fy >= y1 && fy <= y2;
          break;
        case kClassTriangle:
          // Apex at top center, base at the bottom edge.
          inside = point_in_triangle(fx, fy, sh.cx, y1, x1, y2, x2, y2);
          break;
        default:
          throw std::invalid_argument("rasterize: unknown class");
      }
      if (inside) canvas[y * size + x] = sh.color;
    }
  }
}

double class_base_hue(int class_id) {
  switch (class_id) {
    case kClassCircle: return 0.0;     // red
    case kClassSquare: return 120.0;   // green
    default: return 240.0;             // blue
  }
}

}  // namespace

void SceneConfig::validate() const {
  if (image_size < 16)
    throw std::invalid_argument("scene: image_size must be >= 16");
  if (min_objects < 1 || max_objects < min_objects || max_objects > 6)
    throw std::invalid_argument("scene: object count range must be within 1..6");
  if (fog_alpha < 0.0 || fog_alpha > 1.0)
    throw std::invalid_argument("scene: fog_alpha must be in [0, 1]");
  if (noise_sigma < 0.0)
    throw std::invalid_argument("scene: noise_sigma must be >= 0");
}

Scene generate_scene(std::uint64_t seed, Domain domain,
                     const SceneConfig& config) {
  config.validate();
  const std::size_t size = config.image_size;
  Rng layout = Rng::derive(seed, 0x5CE11E);

  // Solid light background.
  Rgb bg{layout.uniform(0.82, 0.95), layout.uniform(0.82, 0.95),
         layout.uniform(0.82, 0.95)};
  std::vector<Rgb> canvas(size * size, bg);

  const std::size_t count =
      config.min_objects +
      layout.uniform_index(config.max_objects - config.min_objects + 1);

  Scene scene;
  scene.domain = domain;
  scene.seed = seed;

  std::vector<ShapeSpec> shapes;
  for (std::size_t i = 0; i < count; ++i) {
    ShapeSpec sh;
    sh.class_id = config.single_class
                      ? kClassCircle
                      : 1 + static_cast<int>(layout.uniform_index(3));
    // Saturated shape colors, hue near the class base.
    double hue = class_base_hue(sh.class_id) + layout.uniform(-15.0, 15.0);
    sh.color = hsv_to_rgb(hue, layout.uniform(0.8, 1.0), layout.uniform(0.7, 0.95));
    double side = layout.uniform(10.0, 26.0);
    sh.w = side;
    sh.h = sh.class_id == kClassCircle ? side : layout.uniform(10.0, 26.0);

    // Keep shapes inside the frame and mostly non-overlapping; after enough
    // tries the last position wins so the drawn count is always preserved.
    for (int attempt = 0; attempt < 64; ++attempt) {
      sh.cx = layout.uniform(sh.w / 2 + 1.0, size - sh.w / 2 - 1.0);
      sh.cy = layout.uniform(sh.h / 2 + 1.0, size - sh.h / 2 - 1.0);
      Box cand{sh.cx / size, sh.cy / size, sh.w / size, sh.h / size};
      bool ok = true;
      for (const auto& prev : shapes) {
        Box pb{prev.cx / size, prev.cy / size, prev.w / size, prev.h / size};
        if (iou(cand, pb) > 0.15) {
          ok = false;
          break;
        }
      }
      if (ok) break;
    }
    shapes.push_back(sh);
    Target t;
    t.class_id = sh.class_id;
    t.box = Box{sh.cx / size, sh.cy / size, sh.w / size, sh.h / size};
    scene.ground_truth.push_back(t);
  }

  for (const auto& sh : shapes) rasterize(canvas, size, sh);

  if (domain == Domain::Target) {
    Rng shift = Rng::derive(seed, 0xF09475);
    double angle = config.hue_jitter_deg > 0.0
                       ? shift.uniform(-config.hue_jitter_deg,
                                       config.hue_jitter_deg)
                       : 0.0;
    for (auto& px : canvas) {
      if (angle != 0.0) px = rotate_hue(px, angle);
      if (config.fog_alpha > 0.0) {
        px.r = (1.0 - config.fog_alpha) * px.r + config.fog_alpha * 0.7;
        px.g = (1.0 - config.fog_alpha) * px.g + config.fog_alpha * 0.7;
        px.b = (1.0 - config.fog_alpha) * px.b + config.fog_alpha * 0.7;
      }
      if (config.noise_sigma > 0.0) {
        px.r += config.noise_sigma * shift.normal();
        px.g += config.noise_sigma * shift.normal();
        px.b += config.noise_sigma * shift.normal();
      }
    }
  }

  scene.image.height = size;
  scene.image.width = size;
  scene.image.rgb.resize(size * size * 3);
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    auto q = [](double v) {
      return static_cast<std::uint8_t>(
          std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    };
    scene.image.rgb[i * 3 + 0] = q(canvas[i].r);
    scene.image.rgb[i * 3 + 1] = q(canvas[i].g);
    scene.image.rgb[i * 3 + 2] = q(canvas[i].b);
  }
  return scene;
}

void write_dataset(const std::string& dir, const std::vector<Scene>& scenes) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir + "/annotations.csv", std::ios::binary);
  if (!csv) throw std::runtime_error("write_dataset: cannot open " + dir);
  csv << "scene_id,class,cx,cy,w,h\n";
  char buf[512];
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "scene_%06zu.ppm", i);
    write_ppm(dir + "/" + buf, scenes[i].image);
    for (const auto& t : scenes[i].ground_truth) {
      std::snprintf(buf, sizeof(buf), "%zu,%d,%.17g,%.17g,%.17g,%.17g\n", i,
                    t.class_id, t.box.cx, t.box.cy, t.box.w, t.box.h);
      csv << buf;
    }
  }
}

std::vector<Scene> read_dataset(const std::string& dir) {
  std::ifstream csv(dir + "/annotations.csv");
  if (!csv)
    throw std::runtime_error("read_dataset: missing annotations.csv in " + dir);
  std::string line;
  if (!std::getline(csv, line))
    throw std::runtime_error("read_dataset: empty annotations.csv");
  std::map<std::size_t, std::vector<Target>> by_scene;
  std::size_t max_id = 0;
  bool any = false;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream is(line);
    std::size_t id;
    Target t;
    if (!(is >> id >> t.class_id >> t.box.cx >> t.box.cy >> t.box.w >> t.box.h))
      throw std::runtime_error("read_dataset: malformed annotation line");
    by_scene[id].push_back(t);
    max_id = std::max(max_id, id);
    any = true;
  }
  if (!any) throw std::runtime_error("read_dataset: no annotations in " + dir);
  std::vector<Scene> scenes(max_id + 1);
  char buf[64];
  for (std::size_t i = 0; i <= max_id; ++i) {
    std::snprintf(buf, sizeof(buf), "scene_%06zu.ppm", i);
    scenes[i].image = read_ppm(dir + "/" + buf);
    scenes[i].ground_truth = by_scene[i];
  }
  return scenes;
}

namespace {
struct RankedDet {
  std::size_t scene;
  const Detection* det;
};

// Confidence-descending with a deterministic tie-break.
bool det_order(const RankedDet& a, const RankedDet& b) {
  if (a.det->confidence != b.det->confidence)
    return a.det->confidence > b.det->confidence;
  if (a.scene != b.scene) return a.scene < b.scene;
  if (a.det->box.cx != b.det->box.cx) return a.det->box.cx < b.det->box.cx;
  return a.det->box.cy < b.det->box.cy;
}

// Greedy matching; returns tp flags aligned with the ranked order.
std::vector<bool> greedy_match(const std::vector<RankedDet>& ranked,
                               const std::vector<std::vector<Target>>& gt,
                               int class_id, double iou_threshold) {
  std::vector<std::vector<bool>> taken(gt.size());
  for (std::size_t s = 0; s < gt.size(); ++s)
    taken[s].assign(gt[s].size(), false);
  std::vector<bool> tp(ranked.size(), false);
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& rd = ranked[i];
    double best = 0.0;
    int best_j = -1;
    for (std::size_t j = 0; j < gt[rd.scene].size(); ++j) {
      const Target& t = gt[rd.scene][j];
      if (t.class_id != class_id || taken[rd.scene][j]) continue;
      double ov = iou(rd.det->box, t.box);
      if (ov >= iou_threshold && ov > best) {
        best = ov;
        best_j = static_cast<int>(j);
      }
    }
    if (best_j >= 0) {
      taken[rd.scene][best_j] = true;
      tp[i] = true;
    }
  }
  return tp;
}
}  // namespace

EvalResult evaluate(const std::vector<std::vector<Detection>>& detections,
                    const std::vector<std::vector<Target>>& ground_truth,
                    std::size_t num_classes, double iou_threshold,
                    double conf_cut) {
  if (detections.size() != ground_truth.size())
    throw std::invalid_argument("evaluate: scene count mismatch");

  EvalResult res;
  std::size_t total_gt = 0, total_det = 0;
  for (const auto& g : ground_truth) total_gt += g.size();
  for (const auto& d : detections) total_det += d.size();
  if (total_gt == 0 && total_det == 0) {
    // Perfect by convention, flagged for the caller.
    res.degenerate = true;
    res.ap_per_class.assign(num_classes, 1.0);
    res.mean_ap = 1.0;
    res.f1 = 1.0;
    return res;
  }

  res.ap_per_class.assign(num_classes, 0.0);
  std::size_t classes_with_gt = 0;
  double ap_sum = 0.0;
  for (std::size_t c = 1; c <= num_classes; ++c) {
    std::size_t n_gt = 0;
    for (const auto& g : ground_truth)
      for (const auto& t : g)
        if (t.class_id == static_cast<int>(c)) ++n_gt;

    std::vector<RankedDet> ranked;
    for (std::size_t s = 0; s < detections.size(); ++s)
      for (const auto& d : detections[s])
        if (d.class_id == static_cast<int>(c)) ranked.push_back({s, &d});
    std::sort(ranked.begin(), ranked.end(), det_order);

    if (n_gt == 0) continue;  // class absent from this split
    ++classes_with_gt;
    auto tp = greedy_match(ranked, ground_truth, static_cast<int>(c),
                           iou_threshold);
    // 11-point interpolated AP.
    std::vector<double> precision(ranked.size()), recall(ranked.size());
    std::size_t cum_tp = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      if (tp[i]) ++cum_tp;
      precision[i] = static_cast<double>(cum_tp) / static_cast<double>(i + 1);
      recall[i] = static_cast<double>(cum_tp) / static_cast<double>(n_gt);
    }
    double ap = 0.0;
    for (int r = 0; r <= 10; ++r) {
      double level = r / 10.0;
      double best = 0.0;
      for (std::size_t i = 0; i < ranked.size(); ++i)
        if (recall[i] >= level) best = std::max(best, precision[i]);
      ap += best / 11.0;
    }
    res.ap_per_class[c - 1] = ap;
    ap_sum += ap;
  }
  res.mean_ap = classes_with_gt ? ap_sum / classes_with_gt : 0.0;

  // F1 at the fixed confidence cut, counts pooled over classes.
  std::size_t tp_count = 0, fp_count = 0;
  for (std::size_t c = 1; c <= num_classes; ++c) {
    std::vector<RankedDet> ranked;
    for (std::size_t s = 0; s < detections.size(); ++s)
      for (const auto& d : detections[s])
        if (d.class_id == static_cast<int>(c) && d.confidence >= conf_cut)
          ranked.push_back({s, &d});
    std::sort(ranked.begin(), ranked.end(), det_order);
    auto tp = greedy_match(ranked, ground_truth, static_cast<int>(c),
                           iou_threshold);
    for (bool hit : tp) (hit ? tp_count : fp_count) += 1;
  }
  res.tp = tp_count;
  res.fp = fp_count;
  res.fn = total_gt - tp_count;
  double denom = 2.0 * tp_count + fp_count + res.fn;
  res.f1 = denom > 0.0 ? 2.0 * tp_count / denom : 0.0;
  return res;
}

}  // namespace cgsa
