#pragma once

#include <filesystem>

#include "boxfuse/ensemble.hpp"

namespace boxfuse {

// Class labels are strings mapped to ids by position.
struct Vocabulary {
  std::vector<std::string> names;

  static Vocabulary defaults();  // vehicle, pedestrian, cyclist

  std::optional<ClassId> id_of(std::string_view name) const;
  const std::string& name_of(ClassId id) const;  // throws ConfigError on unknown id
};

// Native detection format, one record per line:
//   # detections v1
//   # group_id: <id>
//   # provenance: <text>           (optional)
//   <image_id> <class> <x1> <y1> <x2> <y2> <score>
//
// Files starting with '[' are parsed as the common results-array
// interchange format: [{"image_id":..., "category_id":..,
// "bbox":[x,y,w,h], "score":..}, ...] with 1-based integer or string
// category ids.
DetectionGroup load_detections(const std::filesystem::path& path,
                               const Vocabulary& vocab);

// Canonical writer: images in id order, boxes canonically sorted,
// shortest round-trip number formatting. save(load(f)) is
// byte-identical for files produced by this writer.
void save_detections(const DetectionGroup& group,
                     const std::filesystem::path& path, const Vocabulary& vocab);

// Ground-truth format:
//   # groundtruth v1
//   <image_id> <class> <x1> <y1> <x2> <y2> <difficulty>
// difficulty is L1 or L2; a missing field defaults to L1 with a warning.
GroundTruth load_ground_truth(const std::filesystem::path& path,
                              const Vocabulary& vocab);

void save_ground_truth(const GroundTruth& gt, const std::filesystem::path& path,
                       const Vocabulary& vocab);

std::string format_report_table(const EvalReport& report, const Vocabulary& vocab,
                                const EvalConfig& cfg);
std::string format_report_json(const EvalReport& report, const Vocabulary& vocab,
                               const EvalConfig& cfg);

// Human-readable trace of every pair/op evaluation plus the chosen
// merge of each step.
std::string format_merge_trace(const MergeTree& tree);

}  // namespace boxfuse
