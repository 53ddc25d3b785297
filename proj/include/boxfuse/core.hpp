#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace boxfuse {

using ClassId = int;

// Default vocabulary indices (see io::Vocabulary).
inline constexpr ClassId kVehicle = 0;
inline constexpr ClassId kPedestrian = 1;
inline constexpr ClassId kCyclist = 2;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Invalid values fed to a numeric/geometric operation.
struct DomainError : Error {
  using Error::Error;
};
// Inconsistent or incomplete run configuration.
struct ConfigError : Error {
  using Error::Error;
};
// Malformed input file.
struct ParseError : Error {
  using Error::Error;
};

// Non-fatal diagnostics go to stderr.
void warn(const std::string& message);

// Axis-aligned box in continuous half-open pixel coordinates.
// area = (x2-x1)*(y2-y1), no "+1" pixel correction.
struct BBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;
  double score = 0.0;  // confidence in [0,1]
  ClassId class_id = kVehicle;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const;
};

// Throws DomainError when the box violates its invariants
// (x1 < x2, y1 < y2, score in [0,1]).
void validate(const BBox& box, const std::string& context = "");

double iou(const BBox& a, const BBox& b);

// Entry (i,j) = iou(as[i], bs[j]); shape |as| x |bs|.
std::vector<std::vector<double>> iou_matrix(const std::vector<BBox>& as,
                                            const std::vector<BBox>& bs);

// Canonical total order: score descending, then x1, y1, x2, y2,
// class_id ascending. Full ties keep insertion order (stable sort).
bool canonical_less(const BBox& a, const BBox& b);
std::vector<BBox> canonical_sort(std::vector<BBox> boxes);

struct ImageDetections {
  std::string image_id;
  std::vector<BBox> boxes;
};

// All detections of one model / inference scheme over an image set.
struct DetectionGroup {
  std::string group_id;
  std::map<std::string, ImageDetections> per_image;
  std::string provenance;

  void add(const std::string& image_id, const BBox& box);
  const std::vector<BBox>* boxes_of(const std::string& image_id) const;
  std::size_t total_boxes() const;
};

enum class Difficulty { kL1, kL2 };

const char* difficulty_name(Difficulty d);

struct GroundTruthBox {
  BBox box;  // score unused, fixed to 1
  Difficulty difficulty = Difficulty::kL1;
};

struct GroundTruth {
  std::map<std::string, std::vector<GroundTruthBox>> per_image;

  std::size_t total_boxes() const;
};

}  // namespace boxfuse
