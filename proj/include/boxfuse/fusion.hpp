#pragma once

#include <optional>
#include <string_view>

#include "boxfuse/core.hpp"

namespace boxfuse {

enum class OpKind {
  kNms,
  kAdjNms,
  kNmwNaive,
  kWbf,
  kSoftNms,
  kIdentityLeft,   // o1
  kIdentityRight,  // o2
};

const char* op_name(OpKind kind);
std::optional<OpKind> op_from_name(std::string_view name);

// Tie-break rank used when several operators reach the same mAP:
// nms, adj_nms, nmw_naive, wbf, soft_nms, o1, o2.
int op_precedence(OpKind kind);

enum class SoftMethod { kLinear, kGaussian };

struct OpParams {
  double iou_thresh = 0.5;
  double soft_sigma = 0.5;
  SoftMethod soft_method = SoftMethod::kGaussian;
  double score_floor = 0.001;
  bool class_aware = true;
  std::optional<int> wbf_model_count;  // N in the WBF rescale; defaults to group count
};

// Throws ConfigError on out-of-range parameters.
void validate(const OpParams& params);

struct FusionOp {
  OpKind kind = OpKind::kNms;
  OpParams params;
};

// Indices into an input box list; members overlap the cluster seed
// (nmw) or the running fused box (wbf) at assignment time.
struct Cluster {
  std::vector<std::size_t> members;
};

// All list operators act on one image's boxes, per class when
// params.class_aware, and return canonically sorted boxes.

// Greedy hard suppression; survivors keep their scores.
std::vector<BBox> nms(const std::vector<BBox>& boxes, const OpParams& params);

// Score-decay suppression. linear: s *= 1-iou when iou >= iou_thresh;
// gaussian: s *= exp(-iou^2/soft_sigma) for every remaining box.
// Boxes whose score falls below score_floor are dropped.
std::vector<BBox> soft_nms(const std::vector<BBox>& boxes, const OpParams& params);

// Hard NMS (iou_thresh, default 0.5) followed by gaussian soft-NMS.
std::vector<BBox> adj_nms(const std::vector<BBox>& boxes, const OpParams& params);

// Greedy clustering around score-ranked seeds; each cluster collapses
// to the score-weighted mean of its members, keeping the max score.
std::vector<BBox> nmw_naive(const std::vector<BBox>& boxes, const OpParams& params);

struct WbfGroup {
  std::vector<BBox> boxes;
  double weight = 1.0;
};

// Weighted boxes fusion over all boxes pooled from all groups; fused
// score = mean member score rescaled by min(T,N)/N.
std::vector<BBox> wbf(const std::vector<WbfGroup>& groups, const OpParams& params);

// o1 / o2 from the merge operation set.
DetectionGroup identity_left(const DetectionGroup& di, const DetectionGroup& dj);
DetectionGroup identity_right(const DetectionGroup& di, const DetectionGroup& dj);

// Lifts a single-list operator over every image of a group.
DetectionGroup apply_to_group(OpKind kind, const DetectionGroup& group,
                              const OpParams& params);

// Pools the groups' boxes per image, preserving group order.
DetectionGroup pool_groups(const std::vector<DetectionGroup>& groups,
                           const std::string& group_id);

// WBF lifted over whole groups; weights default to 1.
DetectionGroup wbf_groups(const std::vector<DetectionGroup>& groups,
                          const std::vector<double>& weights,
                          const OpParams& params,
                          const std::string& group_id);

// The merge operation o(Di, Dj): pools both groups per image and runs
// the operator (identity ops return their operand's detections). The
// result carries a synthesized group_id recording the operation.
DetectionGroup apply_op(const FusionOp& op, const DetectionGroup& di,
                        const DetectionGroup& dj);

}  // namespace boxfuse
