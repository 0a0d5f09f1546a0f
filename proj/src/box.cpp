#include "cgsa/box.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cgsa {

namespace {
void check_box(const Box& b, const char* who) {
  if (!(b.w > 0.0) || !(b.h > 0.0))
    throw std::invalid_argument(std::string(who) + ": degenerate box");
}

double intersection(const Box& a, const Box& b) {
  double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  return std::max(iw, 0.0) * std::max(ih, 0.0);
}
}  // namespace

double iou(const Box& a, const Box& b) {
  check_box(a, "iou");
  check_box(b, "iou");
  double inter = intersection(a, b);
  double uni = a.area() + b.area() - inter;
  return inter / uni;
}

double giou(const Box& a, const Box& b) {
  check_box(a, "giou");
  check_box(b, "giou");
  double inter = intersection(a, b);
  double uni = a.area() + b.area() - inter;
  double hull_w = std::max(a.x2(), b.x2()) - std::min(a.x1(), b.x1());
  double hull_h = std::max(a.y2(), b.y2()) - std::min(a.y1(), b.y1());
  double hull = hull_w * hull_h;
  return inter / uni - (hull - uni) / hull;
}

double l1_distance(const Box& a, const Box& b) {
  return std::fabs(a.cx - b.cx) + std::fabs(a.cy - b.cy) +
         std::fabs(a.w - b.w) + std::fabs(a.h - b.h);
}

}  // namespace cgsa
