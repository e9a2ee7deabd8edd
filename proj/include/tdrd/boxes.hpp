#pragma once

#include <vector>

namespace tdrd {

// Axis-aligned box in image pixel coordinates, x2 > x1 and y2 > y1.
struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x2 > x1 && y2 > y1; }

  static BBox from_center(double cx, double cy, double w, double h) {
    return BBox{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Detection {
  BBox box;
  int class_id = 0;
  double score = 0.0;
  friend bool operator==(const Detection&, const Detection&) = default;
};

struct GroundTruth {
  BBox box;
  int class_id = 0;
  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

// Intersection over union in [0, 1]; 0 when the union is empty.
double iou(const BBox& a, const BBox& b);

// Strict weak order on detections: score descending, then class and
// coordinates, so results do not depend on input order.
bool ranks_before(const Detection& a, const Detection& b);

}  // namespace tdrd
