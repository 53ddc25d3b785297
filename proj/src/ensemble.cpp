#include "boxfuse/ensemble.hpp"

#include <algorithm>
#include <atomic>
#include <set>
#include <thread>
#include <tuple>

namespace boxfuse {

std::vector<FusionOp> default_op_set(bool include_wbf) {
  OpParams at_50;
  at_50.iou_thresh = 0.5;
  OpParams at_55;
  at_55.iou_thresh = 0.55;

  std::vector<FusionOp> ops;
  ops.push_back({OpKind::kNms, at_50});
  ops.push_back({OpKind::kAdjNms, at_50});
  ops.push_back({OpKind::kNmwNaive, at_50});
  if (include_wbf) ops.push_back({OpKind::kWbf, at_55});
  ops.push_back({OpKind::kIdentityLeft, {}});
  ops.push_back({OpKind::kIdentityRight, {}});
  return ops;
}

bool op_set_has_identities(const std::vector<FusionOp>& ops) {
  bool left = false, right = false;
  for (const FusionOp& op : ops) {
    left = left || op.kind == OpKind::kIdentityLeft;
    right = right || op.kind == OpKind::kIdentityRight;
  }
  return left && right;
}

MergeNodePtr merge_pair(const MergeNodePtr& di, const MergeNodePtr& dj,
                        const GroundTruth& val_gt, const EvalConfig& cfg,
                        const std::vector<FusionOp>& ops,
                        std::vector<PairEvaluation>* evals) {
  if (ops.empty()) throw ConfigError("merge_pair: empty operation set");
  if (!op_set_has_identities(ops)) {
    throw ConfigError("merge_pair: operation set must contain o1 and o2");
  }

  const int level = std::min(di->level, dj->level) - 1;

  bool have_best = false;
  DetectionGroup best_group;
  EvalReport best_report;
  FusionOp best_op;
  for (const FusionOp& op : ops) {
    DetectionGroup merged = apply_op(op, di->group, dj->group);
    EvalReport report = evaluate(merged, val_gt, cfg);
    if (evals) {
      evals->push_back({level + 1, di->group.group_id, dj->group.group_id,
                        op.kind, report.mAP});
    }
    const bool better =
        !have_best || report.mAP > best_report.mAP ||
        (report.mAP == best_report.mAP &&
         op_precedence(op.kind) < op_precedence(best_op.kind));
    if (better) {
      have_best = true;
      best_group = std::move(merged);
      best_report = std::move(report);
      best_op = op;
    }
  }

  auto node = std::make_shared<MergeNode>();
  node->group = std::move(best_group);
  node->accuracy = std::move(best_report);
  node->level = level;
  node->left = di;
  node->right = dj;
  node->chosen_op = best_op;
  return node;
}

namespace {

// one C_l of the level loop
struct CandidateSet {
  int level = 1;
  std::vector<MergeNodePtr> members;
};

struct PairResult {
  MergeNodePtr node;
  std::vector<PairEvaluation> evals;
};

// Evaluates the given candidate pairs, optionally on worker threads.
// Results land in slots indexed by pair position, so the outcome is
// independent of scheduling.
void evaluate_pairs(const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                    const std::vector<MergeNodePtr>& candidates,
                    const GroundTruth& val_gt, const EvalConfig& cfg,
                    const std::vector<FusionOp>& ops, int jobs,
                    std::vector<PairResult>* results) {
  results->resize(pairs.size());
  auto eval_one = [&](std::size_t idx) {
    PairResult& slot = (*results)[idx];
    slot.node = merge_pair(candidates[pairs[idx].first], candidates[pairs[idx].second],
                           val_gt, cfg, ops, &slot.evals);
  };

  const int workers =
      std::max(1, std::min<int>(jobs, static_cast<int>(pairs.size())));
  if (workers <= 1) {
    for (std::size_t i = 0; i < pairs.size(); ++i) eval_one(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (;;) {
        const std::size_t idx = next.fetch_add(1);
        if (idx >= pairs.size()) return;
        eval_one(idx);
      }
    });
  }
  for (std::thread& t : threads) t.join();
}

}  // namespace

MergeTree greedy_auto_ensemble(const std::vector<DetectionGroup>& groups,
                               const GroundTruth& val_gt, const EvalConfig& cfg,
                               const GaeOptions& options) {
  if (groups.empty()) throw DomainError("greedy_auto_ensemble: no input groups");
  if (options.ops.empty()) throw ConfigError("greedy_auto_ensemble: empty operation set");
  if (!op_set_has_identities(options.ops)) {
    throw ConfigError("greedy_auto_ensemble: operation set must contain o1 and o2");
  }
  // worker threads assume a valid op set
  for (const FusionOp& op : options.ops) validate(op.params);

  int levels = 1;
  for (std::size_t n = 1; n < groups.size(); n *= 2) ++levels;

  MergeTree tree;
  std::vector<MergeNodePtr> current;
  for (const DetectionGroup& g : groups) {
    auto leaf = std::make_shared<MergeNode>();
    leaf->group = g;
    leaf->accuracy = evaluate(g, val_gt, cfg);
    leaf->level = levels;
    tree.leaves.push_back(leaf);
    current.push_back(leaf);
  }

  CandidateSet candidates{levels, std::move(current)};
  while (candidates.level >= 2) {
    // merged results are memoized per (pair) while this level drains
    std::map<std::pair<const MergeNode*, const MergeNode*>, PairResult> cache;
    CandidateSet next{candidates.level - 1, {}};
    std::vector<MergeNodePtr>& members = candidates.members;

    while (members.size() > 1) {
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      std::vector<std::pair<std::size_t, std::size_t>> missing;
      for (std::size_t i = 0; i < members.size(); ++i) {
        for (std::size_t j = i + 1; j < members.size(); ++j) {
          pairs.push_back({i, j});
          if (!cache.count({members[i].get(), members[j].get()})) {
            missing.push_back({i, j});
          }
        }
      }

      std::vector<PairResult> fresh;
      evaluate_pairs(missing, members, val_gt, cfg, options.ops, options.jobs, &fresh);
      for (std::size_t k = 0; k < missing.size(); ++k) {
        const auto [i, j] = missing[k];
        for (const PairEvaluation& e : fresh[k].evals) tree.log.push_back(e);
        cache.emplace(std::make_pair(members[i].get(), members[j].get()),
                      std::move(fresh[k]));
      }

      // argmax over pairs: mAP, then (group_id_i, group_id_j), then position
      std::size_t best_pair = 0;
      const PairResult* best = nullptr;
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        const auto [i, j] = pairs[p];
        const PairResult& r = cache.at({members[i].get(), members[j].get()});
        if (!best) {
          best = &r;
          best_pair = p;
          continue;
        }
        const double m = r.node->accuracy.mAP;
        const double bm = best->node->accuracy.mAP;
        if (m > bm) {
          best = &r;
          best_pair = p;
        } else if (m == bm) {
          const auto [bi, bj] = pairs[best_pair];
          auto key = std::tie(members[i]->group.group_id,
                              members[j]->group.group_id, i, j);
          auto best_key = std::tie(members[bi]->group.group_id,
                                   members[bj]->group.group_id, bi, bj);
          if (key < best_key) {
            best = &r;
            best_pair = p;
          }
        }
      }

      const auto [wi, wj] = pairs[best_pair];
      MergeNodePtr winner = best->node;
      tree.steps.push_back({candidates.level, members[wi]->group.group_id,
                            members[wj]->group.group_id, winner->chosen_op->kind,
                            winner->accuracy.mAP, winner->group.group_id});
      next.members.push_back(winner);
      members.erase(members.begin() + static_cast<long>(wj));
      members.erase(members.begin() + static_cast<long>(wi));
    }

    if (members.size() == 1) next.members.push_back(members.front());
    candidates = std::move(next);
  }

  tree.root = candidates.members.front();
  return tree;
}

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kGae: return "gae";
    case Strategy::kFirst: return "first";
    case Strategy::kNms: return "nms";
    case Strategy::kSoftNms: return "soft_nms";
    case Strategy::kAdjNms: return "adj_nms";
    case Strategy::kNmwNaive: return "nmw_naive";
    case Strategy::kWbf: return "wbf";
  }
  return "unknown";
}

std::optional<Strategy> strategy_from_name(std::string_view name) {
  if (name == "gae") return Strategy::kGae;
  if (name == "first") return Strategy::kFirst;
  if (name == "nms") return Strategy::kNms;
  if (name == "soft_nms" || name == "soft-nms") return Strategy::kSoftNms;
  if (name == "adj_nms" || name == "adj-nms") return Strategy::kAdjNms;
  if (name == "nmw_naive" || name == "nmw-naive") return Strategy::kNmwNaive;
  if (name == "wbf") return Strategy::kWbf;
  return std::nullopt;
}

std::map<ClassId, ClassStrategy> default_ensemble_routing() {
  OpParams adj;
  adj.iou_thresh = 0.5;
  OpParams wbf_params;
  wbf_params.iou_thresh = 0.55;

  std::map<ClassId, ClassStrategy> routing;
  routing[kVehicle] = {Strategy::kAdjNms, adj};
  routing[kPedestrian] = {Strategy::kAdjNms, adj};
  routing[kCyclist] = {Strategy::kWbf, wbf_params};
  return routing;
}

namespace {

DetectionGroup restrict_to_class(const DetectionGroup& group, ClassId cls) {
  DetectionGroup out;
  out.group_id = group.group_id;
  out.provenance = group.provenance;
  for (const auto& [image_id, dets] : group.per_image) {
    std::vector<BBox> keep;
    for (const BBox& b : dets.boxes) {
      if (b.class_id == cls) keep.push_back(b);
    }
    if (!keep.empty()) out.per_image[image_id] = ImageDetections{image_id, std::move(keep)};
  }
  return out;
}

GroundTruth restrict_to_class(const GroundTruth& gt, ClassId cls) {
  GroundTruth out;
  for (const auto& [image_id, boxes] : gt.per_image) {
    std::vector<GroundTruthBox> keep;
    for (const GroundTruthBox& g : boxes) {
      if (g.box.class_id == cls) keep.push_back(g);
    }
    if (!keep.empty()) out.per_image[image_id] = std::move(keep);
  }
  return out;
}

}  // namespace

DetectionGroup per_class_ensemble(const std::map<ClassId, ClassStrategy>& strategies,
                                  const std::vector<DetectionGroup>& groups,
                                  const GroundTruth& val_gt, const EvalConfig& cfg,
                                  const GaeOptions& options,
                                  std::map<ClassId, MergeTree>* traces) {
  if (groups.empty()) throw DomainError("per_class_ensemble: no input groups");

  std::set<ClassId> classes;
  for (const DetectionGroup& g : groups) {
    for (const auto& [image_id, dets] : g.per_image) {
      for (const BBox& b : dets.boxes) classes.insert(b.class_id);
    }
  }

  DetectionGroup result;
  result.group_id = "ensemble";

  for (ClassId cls : classes) {
    auto it = strategies.find(cls);
    if (it == strategies.end()) {
      throw ConfigError("per_class_ensemble: no strategy for class id " +
                        std::to_string(cls));
    }
    ClassStrategy strategy = it->second;

    std::vector<DetectionGroup> class_groups;
    class_groups.reserve(groups.size());
    for (const DetectionGroup& g : groups) class_groups.push_back(restrict_to_class(g, cls));

    DetectionGroup class_result;
    if (strategy.strategy == Strategy::kGae) {
      GroundTruth class_gt = restrict_to_class(val_gt, cls);
      if (class_gt.total_boxes() == 0) {
        warn("per_class_ensemble: class id " + std::to_string(cls) +
             " has no ground truth; keeping the first group's boxes");
        strategy.strategy = Strategy::kFirst;
      } else {
        MergeTree tree = greedy_auto_ensemble(class_groups, class_gt, cfg, options);
        class_result = tree.root->group;
        if (traces) (*traces)[cls] = std::move(tree);
      }
    }
    switch (strategy.strategy) {
      case Strategy::kGae:
        break;  // handled above
      case Strategy::kFirst:
        class_result = class_groups.front();
        break;
      case Strategy::kWbf:
        class_result = wbf_groups(class_groups, {}, strategy.params, "wbf");
        break;
      case Strategy::kNms:
      case Strategy::kSoftNms:
      case Strategy::kAdjNms:
      case Strategy::kNmwNaive: {
        static const std::map<Strategy, OpKind> kKinds = {
            {Strategy::kNms, OpKind::kNms},
            {Strategy::kSoftNms, OpKind::kSoftNms},
            {Strategy::kAdjNms, OpKind::kAdjNms},
            {Strategy::kNmwNaive, OpKind::kNmwNaive},
        };
        DetectionGroup pooled = pool_groups(class_groups, "pooled");
        class_result = apply_to_group(kKinds.at(strategy.strategy), pooled,
                                      strategy.params);
        break;
      }
    }

    for (const auto& [image_id, dets] : class_result.per_image) {
      for (const BBox& b : dets.boxes) result.add(image_id, b);
    }
  }

  for (auto& [image_id, dets] : result.per_image) {
    dets.boxes = canonical_sort(std::move(dets.boxes));
  }
  return result;
}

}  // namespace boxfuse
