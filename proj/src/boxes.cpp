#include "tdrd/boxes.hpp"

#include <algorithm>
#include <tuple>

namespace tdrd {

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

bool ranks_before(const Detection& a, const Detection& b) {
  return std::make_tuple(-a.score, a.class_id, a.box.x1, a.box.y1, a.box.x2, a.box.y2) <
         std::make_tuple(-b.score, b.class_id, b.box.x1, b.box.y1, b.box.x2, b.box.y2);
}

}  // namespace tdrd
