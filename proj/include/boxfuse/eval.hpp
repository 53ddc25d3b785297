#pragma once

#include <optional>

#include "boxfuse/core.hpp"

namespace boxfuse {

struct EvalConfig {
  std::map<ClassId, double> per_class_iou;
  Difficulty level = Difficulty::kL2;
  std::optional<int> max_dets_per_image;  // cap applied per image before matching
  double score_min = 0.0;
};

// Waymo 2D detection defaults: vehicle 0.7, pedestrian 0.5, cyclist 0.5,
// evaluated at level L2.
EvalConfig default_waymo_config();

struct PredictionRecord {
  BBox box;                            // as ranked (post filtering/sorting)
  std::optional<std::size_t> gt_index;  // into the in-scope GT list
  bool is_tp = false;
  bool ignored = false;  // L1 mode: best overlap was an L2 box; excluded from ranking
};

struct MatchResult {
  std::vector<PredictionRecord> records;  // in ranking order
  std::size_t gt_in_scope = 0;
};

// Greedy matching by descending prediction score: each prediction takes
// the unmatched in-scope GT box of its class with the highest iou,
// provided iou >= per_class_iou[cls]. At level L1 only L1 boxes are
// matchable; unmatched predictions whose best overlap (>= threshold)
// is an L2 box are dropped from the ranking (neither TP nor FP).
MatchResult match(const ImageDetections& preds,
                  const std::vector<GroundTruthBox>& gts, ClassId cls,
                  const EvalConfig& cfg);

struct PRPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct PRCurve {
  std::vector<PRPoint> points;  // swept over the score-ranked predictions
};

// All-point interpolated AP: the precision envelope max_{r' >= r} p(r')
// integrated exactly over recall as a step function.
double average_precision(const PRCurve& curve);

struct EvalReport {
  std::map<ClassId, double> per_class_ap;  // classes with in-scope ground truth
  double mAP = 0.0;                        // mean over per_class_ap
};

// Pools per-image match results per class, sweeps the global score
// ranking into a PR curve and averages AP over the classes that have
// at least one in-scope ground-truth box.
EvalReport evaluate(const DetectionGroup& group, const GroundTruth& gt,
                    const EvalConfig& cfg);

}  // namespace boxfuse
