#pragma once

#include <memory>

#include "boxfuse/eval.hpp"
#include "boxfuse/fusion.hpp"

namespace boxfuse {

// Node of the greedy merge tree. Leaves wrap the input groups; internal
// nodes carry the operator that won the argmax for their children.
struct MergeNode {
  DetectionGroup group;
  EvalReport accuracy;
  int level = 1;
  std::shared_ptr<const MergeNode> left;
  std::shared_ptr<const MergeNode> right;
  std::optional<FusionOp> chosen_op;  // absent for leaves

  bool is_leaf() const { return !left && !right; }
};

using MergeNodePtr = std::shared_ptr<const MergeNode>;

// One operator evaluation inside an argmax step.
struct PairEvaluation {
  int level = 0;
  std::string left_id;
  std::string right_id;
  OpKind op = OpKind::kNms;
  double map = 0.0;
};

// The winner of one merge step.
struct MergeStep {
  int level = 0;
  std::string left_id;
  std::string right_id;
  OpKind op = OpKind::kNms;
  double map = 0.0;
  std::string merged_id;
};

struct MergeTree {
  MergeNodePtr root;
  std::vector<MergeNodePtr> leaves;
  std::vector<PairEvaluation> log;  // every evaluated (pair, op, mAP)
  std::vector<MergeStep> steps;     // chosen merges in order
};

// The operation set of the merge argmax: nms, adj_nms, nmw_naive, o1, o2.
// WBF is an optional extension (include_wbf).
std::vector<FusionOp> default_op_set(bool include_wbf = false);

bool op_set_has_identities(const std::vector<FusionOp>& ops);

// Applies every operator to (di, dj), evaluates each result on val_gt
// and returns the argmax as a new node. Ties break by op_precedence.
// The op set must contain o1 and o2 (ConfigError otherwise). When
// evals is non-null every (op, mAP) evaluation is appended to it.
MergeNodePtr merge_pair(const MergeNodePtr& di, const MergeNodePtr& dj,
                        const GroundTruth& val_gt, const EvalConfig& cfg,
                        const std::vector<FusionOp>& ops,
                        std::vector<PairEvaluation>* evals = nullptr);

struct GaeOptions {
  std::vector<FusionOp> ops = default_op_set();
  int jobs = 1;  // worker threads for the pair evaluations of one argmax step
};

// Greedy auto ensemble: bottom-up level-by-level pairwise merging.
// While a level holds more than one candidate, the pair whose best
// merge scores highest is merged into the level above; a leftover
// candidate is promoted unchanged. Pair ties break lexicographically
// on (group_id_i, group_id_j).
MergeTree greedy_auto_ensemble(const std::vector<DetectionGroup>& groups,
                               const GroundTruth& val_gt, const EvalConfig& cfg,
                               const GaeOptions& options = {});

enum class Strategy { kGae, kFirst, kNms, kSoftNms, kAdjNms, kNmwNaive, kWbf };

const char* strategy_name(Strategy s);
std::optional<Strategy> strategy_from_name(std::string_view name);

struct ClassStrategy {
  Strategy strategy = Strategy::kGae;
  OpParams params;  // used by the single-operator strategies
};

// The final-ensemble routing: vehicle -> adj_nms, pedestrian -> adj_nms,
// cyclist -> wbf.
std::map<ClassId, ClassStrategy> default_ensemble_routing();

// Partitions all detections by class, runs the configured strategy per
// class (gae restricts groups and ground truth to that class) and
// concatenates the per-class results into one group. Classes running
// gae report their merge trees through `traces`.
DetectionGroup per_class_ensemble(const std::map<ClassId, ClassStrategy>& strategies,
                                  const std::vector<DetectionGroup>& groups,
                                  const GroundTruth& val_gt, const EvalConfig& cfg,
                                  const GaeOptions& options = {},
                                  std::map<ClassId, MergeTree>* traces = nullptr);

}  // namespace boxfuse
