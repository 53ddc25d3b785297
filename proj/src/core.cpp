#include "boxfuse/core.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <tuple>

namespace boxfuse {

void warn(const std::string& message) {
  std::fprintf(stderr, "warning: %s\n", message.c_str());
}

bool BBox::valid() const {
  return x1 < x2 && y1 < y2 && score >= 0.0 && score <= 1.0;
}

void validate(const BBox& box, const std::string& context) {
  if (box.valid()) return;
  std::string where = context.empty() ? "" : context + ": ";
  if (!(box.x1 < box.x2) || !(box.y1 < box.y2)) {
    throw DomainError(where + "degenerate box [" + std::to_string(box.x1) + "," +
                      std::to_string(box.y1) + "," + std::to_string(box.x2) + "," +
                      std::to_string(box.y2) + "]");
  }
  throw DomainError(where + "score " + std::to_string(box.score) +
                    " outside [0,1]");
}

double iou(const BBox& a, const BBox& b) {
  validate(a, "iou lhs");
  validate(b, "iou rhs");
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

std::vector<std::vector<double>> iou_matrix(const std::vector<BBox>& as,
                                            const std::vector<BBox>& bs) {
  for (std::size_t i = 0; i < as.size(); ++i) validate(as[i], "as[" + std::to_string(i) + "]");
  for (std::size_t j = 0; j < bs.size(); ++j) validate(bs[j], "bs[" + std::to_string(j) + "]");
  std::vector<std::vector<double>> m(as.size(), std::vector<double>(bs.size(), 0.0));
  for (std::size_t i = 0; i < as.size(); ++i) {
    for (std::size_t j = 0; j < bs.size(); ++j) {
      m[i][j] = iou(as[i], bs[j]);
    }
  }
  return m;
}

bool canonical_less(const BBox& a, const BBox& b) {
  return std::tie(b.score, a.x1, a.y1, a.x2, a.y2, a.class_id) <
         std::tie(a.score, b.x1, b.y1, b.x2, b.y2, b.class_id);
}

std::vector<BBox> canonical_sort(std::vector<BBox> boxes) {
  std::stable_sort(boxes.begin(), boxes.end(), canonical_less);
  return boxes;
}

void DetectionGroup::add(const std::string& image_id, const BBox& box) {
  ImageDetections& dets = per_image[image_id];
  dets.image_id = image_id;
  dets.boxes.push_back(box);
}

const std::vector<BBox>* DetectionGroup::boxes_of(const std::string& image_id) const {
  auto it = per_image.find(image_id);
  return it == per_image.end() ? nullptr : &it->second.boxes;
}

std::size_t DetectionGroup::total_boxes() const {
  std::size_t n = 0;
  for (const auto& [id, dets] : per_image) n += dets.boxes.size();
  return n;
}

const char* difficulty_name(Difficulty d) {
  return d == Difficulty::kL1 ? "L1" : "L2";
}

std::size_t GroundTruth::total_boxes() const {
  std::size_t n = 0;
  for (const auto& [id, boxes] : per_image) n += boxes.size();
  return n;
}

}  // namespace boxfuse
