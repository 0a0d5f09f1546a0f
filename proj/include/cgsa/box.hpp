#pragma once

namespace cgsa {

// Axis-aligned box, normalized center/size form, all in [0, 1].
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  double area() const { return w * h; }
};

// Intersection over union in [0, 1]; rejects degenerate (nonpositive size)
// boxes.
double iou(const Box& a, const Box& b);

// Generalized IoU in (-1, 1].
double giou(const Box& a, const Box& b);

double l1_distance(const Box& a, const Box& b);

}  // namespace cgsa
