#include "boxfuse/eval.hpp"

#include <algorithm>
#include <set>
#include <tuple>

namespace boxfuse {

EvalConfig default_waymo_config() {
  EvalConfig cfg;
  cfg.per_class_iou[kVehicle] = 0.7;
  cfg.per_class_iou[kPedestrian] = 0.5;
  cfg.per_class_iou[kCyclist] = 0.5;
  cfg.level = Difficulty::kL2;
  return cfg;
}

MatchResult match(const ImageDetections& preds,
                  const std::vector<GroundTruthBox>& gts, ClassId cls,
                  const EvalConfig& cfg) {
  auto thresh_it = cfg.per_class_iou.find(cls);
  if (thresh_it == cfg.per_class_iou.end()) {
    throw ConfigError("no IoU threshold configured for class id " +
                      std::to_string(cls));
  }
  const double thresh = thresh_it->second;

  std::vector<BBox> ranked;
  for (const BBox& b : preds.boxes) {
    if (b.class_id == cls && b.score >= cfg.score_min) ranked.push_back(b);
  }
  ranked = canonical_sort(std::move(ranked));

  // in scope: matchable targets; at L1 the L2 boxes become ignore regions
  std::vector<const GroundTruthBox*> in_scope;
  std::vector<const GroundTruthBox*> ignore_set;
  for (const GroundTruthBox& g : gts) {
    if (g.box.class_id != cls) continue;
    if (cfg.level == Difficulty::kL2 || g.difficulty == Difficulty::kL1) {
      in_scope.push_back(&g);
    } else {
      ignore_set.push_back(&g);
    }
  }

  MatchResult result;
  result.gt_in_scope = in_scope.size();
  std::vector<bool> matched(in_scope.size(), false);

  for (const BBox& p : ranked) {
    PredictionRecord rec;
    rec.box = p;

    std::size_t best = 0;
    double best_iou = -1.0;
    for (std::size_t j = 0; j < in_scope.size(); ++j) {
      if (matched[j]) continue;
      const double v = iou(p, in_scope[j]->box);
      if (v > best_iou) {  // IoU ties keep the lowest GT index
        best_iou = v;
        best = j;
      }
    }
    if (best_iou >= thresh) {
      matched[best] = true;
      rec.gt_index = best;
      rec.is_tp = true;
    } else if (cfg.level == Difficulty::kL1) {
      for (const GroundTruthBox* g : ignore_set) {
        if (iou(p, g->box) >= thresh) {
          rec.ignored = true;
          break;
        }
      }
    }
    result.records.push_back(rec);
  }
  return result;
}

double average_precision(const PRCurve& curve) {
  if (curve.points.empty()) return 0.0;
  // right-to-left running max gives the precision envelope
  std::vector<double> envelope(curve.points.size());
  double running = 0.0;
  for (std::size_t i = curve.points.size(); i-- > 0;) {
    running = std::max(running, curve.points[i].precision);
    envelope[i] = running;
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    ap += (curve.points[i].recall - prev_recall) * envelope[i];
    prev_recall = curve.points[i].recall;
  }
  return ap;
}

namespace {

struct SweepEntry {
  BBox box;
  std::string image_id;
  std::size_t rank;  // position within the image's ranking
  bool is_tp = false;
};

// global score ranking; ties resolved by the canonical key, then image
bool sweep_before(const SweepEntry& a, const SweepEntry& b) {
  return std::tie(b.box.score, a.box.x1, a.box.y1, a.box.x2, a.box.y2,
                  a.box.class_id, a.image_id, a.rank) <
         std::tie(a.box.score, b.box.x1, b.box.y1, b.box.x2, b.box.y2,
                  b.box.class_id, b.image_id, b.rank);
}

}  // namespace

EvalReport evaluate(const DetectionGroup& group, const GroundTruth& gt,
                    const EvalConfig& cfg) {
  if (gt.total_boxes() == 0) {
    throw DomainError("evaluate: ground truth has no boxes");
  }

  std::set<std::string> images;
  std::set<ClassId> gt_classes;
  for (const auto& [image_id, dets] : group.per_image) images.insert(image_id);
  for (const auto& [image_id, boxes] : gt.per_image) {
    images.insert(image_id);
    for (const GroundTruthBox& g : boxes) gt_classes.insert(g.box.class_id);
  }

  std::set<ClassId> pred_classes;
  for (const auto& [image_id, dets] : group.per_image) {
    for (const BBox& b : dets.boxes) pred_classes.insert(b.class_id);
  }
  for (ClassId cls : pred_classes) {
    if (!gt_classes.count(cls)) {
      warn("evaluate: class id " + std::to_string(cls) +
           " has predictions but no ground truth; excluded from mAP");
    }
  }

  // per-image cap before matching
  std::map<std::string, ImageDetections> capped;
  for (const std::string& image_id : images) {
    ImageDetections dets;
    dets.image_id = image_id;
    if (const std::vector<BBox>* boxes = group.boxes_of(image_id)) {
      dets.boxes = canonical_sort(*boxes);
      if (cfg.max_dets_per_image &&
          dets.boxes.size() > static_cast<std::size_t>(*cfg.max_dets_per_image)) {
        dets.boxes.resize(static_cast<std::size_t>(*cfg.max_dets_per_image));
      }
    }
    capped.emplace(image_id, std::move(dets));
  }

  static const std::vector<GroundTruthBox> kNoGt;
  EvalReport report;
  for (ClassId cls : gt_classes) {
    std::vector<SweepEntry> entries;
    std::size_t gt_total = 0;
    for (const std::string& image_id : images) {
      auto git = gt.per_image.find(image_id);
      const std::vector<GroundTruthBox>& img_gt =
          git == gt.per_image.end() ? kNoGt : git->second;
      MatchResult m = match(capped.at(image_id), img_gt, cls, cfg);
      gt_total += m.gt_in_scope;
      for (std::size_t r = 0; r < m.records.size(); ++r) {
        if (m.records[r].ignored) continue;
        entries.push_back({m.records[r].box, image_id, r, m.records[r].is_tp});
      }
    }
    if (gt_total == 0) {
      // nothing matchable at this level (e.g. L1 eval of an all-L2 class)
      warn("evaluate: class id " + std::to_string(cls) +
           " has no in-scope ground truth at level " +
           difficulty_name(cfg.level) + "; excluded from mAP");
      continue;
    }

    std::sort(entries.begin(), entries.end(), sweep_before);

    PRCurve curve;
    double tp = 0.0, fp = 0.0;
    for (const SweepEntry& e : entries) {
      if (e.is_tp) {
        tp += 1.0;
      } else {
        fp += 1.0;
      }
      curve.points.push_back({tp / static_cast<double>(gt_total), tp / (tp + fp)});
    }
    report.per_class_ap[cls] = average_precision(curve);
  }

  if (report.per_class_ap.empty()) {
    throw DomainError("evaluate: no evaluable classes at level " +
                      std::string(difficulty_name(cfg.level)));
  }
  double sum = 0.0;
  for (const auto& [cls, ap] : report.per_class_ap) sum += ap;
  report.mAP = sum / static_cast<double>(report.per_class_ap.size());
  return report;
}

}  // namespace boxfuse
