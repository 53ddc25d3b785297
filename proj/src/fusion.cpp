#include "boxfuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace boxfuse {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kNms: return "nms";
    case OpKind::kAdjNms: return "adj_nms";
    case OpKind::kNmwNaive: return "nmw_naive";
    case OpKind::kWbf: return "wbf";
    case OpKind::kSoftNms: return "soft_nms";
    case OpKind::kIdentityLeft: return "o1";
    case OpKind::kIdentityRight: return "o2";
  }
  return "unknown";
}

std::optional<OpKind> op_from_name(std::string_view name) {
  if (name == "nms") return OpKind::kNms;
  if (name == "adj_nms" || name == "adj-nms") return OpKind::kAdjNms;
  if (name == "nmw_naive" || name == "nmw-naive") return OpKind::kNmwNaive;
  if (name == "wbf") return OpKind::kWbf;
  if (name == "soft_nms" || name == "soft-nms") return OpKind::kSoftNms;
  if (name == "o1") return OpKind::kIdentityLeft;
  if (name == "o2") return OpKind::kIdentityRight;
  return std::nullopt;
}

int op_precedence(OpKind kind) {
  switch (kind) {
    case OpKind::kNms: return 0;
    case OpKind::kAdjNms: return 1;
    case OpKind::kNmwNaive: return 2;
    case OpKind::kWbf: return 3;
    case OpKind::kSoftNms: return 4;
    case OpKind::kIdentityLeft: return 5;
    case OpKind::kIdentityRight: return 6;
  }
  return 7;
}

void validate(const OpParams& params) {
  if (!(params.iou_thresh > 0.0 && params.iou_thresh < 1.0)) {
    throw ConfigError("iou_thresh must lie in (0,1), got " +
                      std::to_string(params.iou_thresh));
  }
  if (!(params.soft_sigma > 0.0)) {
    throw ConfigError("soft_sigma must be positive, got " +
                      std::to_string(params.soft_sigma));
  }
  if (!(params.score_floor >= 0.0 && params.score_floor < 1.0)) {
    throw ConfigError("score_floor must lie in [0,1), got " +
                      std::to_string(params.score_floor));
  }
  if (params.wbf_model_count && *params.wbf_model_count < 1) {
    throw ConfigError("wbf_model_count must be positive");
  }
}

namespace {

void validate_all(const std::vector<BBox>& boxes, const char* op) {
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    validate(boxes[i], std::string(op) + " input[" + std::to_string(i) + "]");
  }
}

// Runs `core` per class partition and reassembles, or once over the
// whole list when class_aware is off.
template <typename Fn>
std::vector<BBox> per_class(const std::vector<BBox>& boxes, bool class_aware,
                            Fn&& core) {
  if (!class_aware) return canonical_sort(core(boxes));
  std::map<ClassId, std::vector<BBox>> buckets;
  for (const BBox& b : boxes) buckets[b.class_id].push_back(b);
  std::vector<BBox> out;
  for (auto& [cls, bucket] : buckets) {
    std::vector<BBox> fused = core(bucket);
    out.insert(out.end(), fused.begin(), fused.end());
  }
  return canonical_sort(std::move(out));
}

std::vector<BBox> nms_core(const std::vector<BBox>& boxes, double thresh) {
  std::vector<BBox> sorted = canonical_sort(boxes);
  std::vector<bool> suppressed(sorted.size(), false);
  std::vector<BBox> kept;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (suppressed[i]) continue;
    kept.push_back(sorted[i]);
    for (std::size_t j = i + 1; j < sorted.size(); ++j) {
      if (!suppressed[j] && iou(sorted[i], sorted[j]) >= thresh) {
        suppressed[j] = true;
      }
    }
  }
  return kept;
}

struct SoftEntry {
  BBox box;           // score field holds the current decayed score
  std::size_t origin; // insertion index, last tie-break key
};

bool soft_entry_before(const SoftEntry& a, const SoftEntry& b) {
  if (canonical_less(a.box, b.box)) return true;
  if (canonical_less(b.box, a.box)) return false;
  return a.origin < b.origin;
}

std::vector<BBox> soft_nms_core(const std::vector<BBox>& boxes,
                                const OpParams& params) {
  std::vector<SoftEntry> remaining;
  remaining.reserve(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) remaining.push_back({boxes[i], i});

  std::vector<BBox> emitted;
  while (!remaining.empty()) {
    auto top = std::min_element(remaining.begin(), remaining.end(), soft_entry_before);
    const BBox top_box = top->box;
    emitted.push_back(top_box);
    remaining.erase(top);

    for (SoftEntry& entry : remaining) {
      const double overlap = iou(top_box, entry.box);
      if (params.soft_method == SoftMethod::kLinear) {
        if (overlap >= params.iou_thresh) entry.box.score *= 1.0 - overlap;
      } else {
        entry.box.score *= std::exp(-(overlap * overlap) / params.soft_sigma);
      }
    }
    std::erase_if(remaining, [&](const SoftEntry& entry) {
      return entry.box.score < params.score_floor;
    });
  }
  return emitted;
}

std::vector<BBox> nmw_core(const std::vector<BBox>& boxes, const OpParams& params) {
  std::vector<BBox> sorted = canonical_sort(boxes);
  std::vector<bool> clustered(sorted.size(), false);
  std::vector<BBox> fused;
  for (std::size_t seed = 0; seed < sorted.size(); ++seed) {
    if (clustered[seed]) continue;
    Cluster cluster;
    cluster.members.push_back(seed);
    clustered[seed] = true;
    for (std::size_t j = seed + 1; j < sorted.size(); ++j) {
      if (!clustered[j] && iou(sorted[seed], sorted[j]) >= params.iou_thresh) {
        cluster.members.push_back(j);
        clustered[j] = true;
      }
    }

    if (cluster.members.size() == 1) {
      fused.push_back(sorted[seed]);
      continue;
    }

    double score_sum = 0.0;
    for (std::size_t idx : cluster.members) score_sum += sorted[idx].score;
    if (score_sum <= 0.0) {
      warn("nmw_naive: cluster with all-zero scores, using unweighted mean");
    }

    BBox out;
    out.class_id = sorted[seed].class_id;
    double sx1 = 0.0, sy1 = 0.0, sx2 = 0.0, sy2 = 0.0, max_score = 0.0;
    for (std::size_t idx : cluster.members) {
      const BBox& m = sorted[idx];
      const double w = score_sum > 0.0 ? m.score : 1.0;
      sx1 += w * m.x1;
      sy1 += w * m.y1;
      sx2 += w * m.x2;
      sy2 += w * m.y2;
      max_score = std::max(max_score, m.score);
    }
    const double denom =
        score_sum > 0.0 ? score_sum : static_cast<double>(cluster.members.size());
    out.x1 = sx1 / denom;
    out.y1 = sy1 / denom;
    out.x2 = sx2 / denom;
    out.y2 = sy2 / denom;
    out.score = max_score;
    fused.push_back(out);
  }
  return fused;
}

struct WbfPooled {
  BBox box;
  double eff_score;  // score * group weight
};

struct WbfCluster {
  std::vector<WbfPooled> members;
  ClassId class_id;
  double eff_sum = 0.0;
  double wx1 = 0.0, wy1 = 0.0, wx2 = 0.0, wy2 = 0.0;  // eff-weighted coord sums
  double px1 = 0.0, py1 = 0.0, px2 = 0.0, py2 = 0.0;  // plain sums, zero-score fallback

  void join(const WbfPooled& p) {
    members.push_back(p);
    eff_sum += p.eff_score;
    wx1 += p.eff_score * p.box.x1;
    wy1 += p.eff_score * p.box.y1;
    wx2 += p.eff_score * p.box.x2;
    wy2 += p.eff_score * p.box.y2;
    px1 += p.box.x1;
    py1 += p.box.y1;
    px2 += p.box.x2;
    py2 += p.box.y2;
  }

  BBox fused() const {
    BBox f;
    f.class_id = class_id;
    if (members.size() == 1) {  // a singleton cluster is its member, exactly
      f.x1 = members[0].box.x1;
      f.y1 = members[0].box.y1;
      f.x2 = members[0].box.x2;
      f.y2 = members[0].box.y2;
    } else if (eff_sum > 0.0) {
      f.x1 = wx1 / eff_sum;
      f.y1 = wy1 / eff_sum;
      f.x2 = wx2 / eff_sum;
      f.y2 = wy2 / eff_sum;
    } else {
      const double n = static_cast<double>(members.size());
      f.x1 = px1 / n;
      f.y1 = py1 / n;
      f.x2 = px2 / n;
      f.y2 = py2 / n;
    }
    return f;
  }
};

std::vector<BBox> wbf_core(const std::vector<WbfPooled>& pool_in, int n_models,
                           const OpParams& params) {
  std::vector<WbfPooled> pool = pool_in;
  std::stable_sort(pool.begin(), pool.end(), [](const WbfPooled& a, const WbfPooled& b) {
    if (a.eff_score != b.eff_score) return a.eff_score > b.eff_score;
    return canonical_less(a.box, b.box);
  });

  std::vector<WbfCluster> clusters;
  for (const WbfPooled& p : pool) {
    WbfCluster* target = nullptr;
    for (WbfCluster& c : clusters) {  // first match in creation order
      if (params.class_aware && c.class_id != p.box.class_id) continue;
      if (iou(c.fused(), p.box) >= params.iou_thresh) {
        target = &c;
        break;
      }
    }
    if (target) {
      target->join(p);
    } else {
      WbfCluster fresh;
      fresh.class_id = p.box.class_id;
      fresh.join(p);
      clusters.push_back(std::move(fresh));
    }
  }

  std::vector<BBox> out;
  for (const WbfCluster& c : clusters) {
    if (c.eff_sum <= 0.0) {
      warn("wbf: cluster with all-zero scores, using unweighted mean");
    }
    BBox f = c.fused();
    const double t = static_cast<double>(c.members.size());
    f.score = (c.eff_sum / t) * std::min(t, static_cast<double>(n_models)) /
              static_cast<double>(n_models);
    if (f.score > 1.0) {
      warn("wbf: fused score " + std::to_string(f.score) + " clamped to 1");
      f.score = 1.0;
    }
    out.push_back(f);
  }
  return canonical_sort(std::move(out));
}

}  // namespace

std::vector<BBox> nms(const std::vector<BBox>& boxes, const OpParams& params) {
  validate(params);
  validate_all(boxes, "nms");
  return per_class(boxes, params.class_aware,
                   [&](const std::vector<BBox>& b) { return nms_core(b, params.iou_thresh); });
}

std::vector<BBox> soft_nms(const std::vector<BBox>& boxes, const OpParams& params) {
  validate(params);
  validate_all(boxes, "soft_nms");
  return per_class(boxes, params.class_aware,
                   [&](const std::vector<BBox>& b) { return soft_nms_core(b, params); });
}

std::vector<BBox> adj_nms(const std::vector<BBox>& boxes, const OpParams& params) {
  std::vector<BBox> pruned = nms(boxes, params);
  OpParams soft = params;
  soft.soft_method = SoftMethod::kGaussian;
  return soft_nms(pruned, soft);
}

std::vector<BBox> nmw_naive(const std::vector<BBox>& boxes, const OpParams& params) {
  validate(params);
  validate_all(boxes, "nmw_naive");
  return per_class(boxes, params.class_aware,
                   [&](const std::vector<BBox>& b) { return nmw_core(b, params); });
}

std::vector<BBox> wbf(const std::vector<WbfGroup>& groups, const OpParams& params) {
  validate(params);
  if (groups.empty()) throw DomainError("wbf: empty group list");
  for (const WbfGroup& g : groups) validate_all(g.boxes, "wbf");

  const int n_models = params.wbf_model_count.value_or(static_cast<int>(groups.size()));

  std::vector<WbfPooled> pool;
  for (const WbfGroup& g : groups) {
    for (const BBox& b : g.boxes) pool.push_back({b, b.score * g.weight});
  }
  if (!params.class_aware) return wbf_core(pool, n_models, params);

  std::map<ClassId, std::vector<WbfPooled>> buckets;
  for (const WbfPooled& p : pool) buckets[p.box.class_id].push_back(p);
  std::vector<BBox> out;
  for (auto& [cls, bucket] : buckets) {
    std::vector<BBox> fused = wbf_core(bucket, n_models, params);
    out.insert(out.end(), fused.begin(), fused.end());
  }
  return canonical_sort(std::move(out));
}

DetectionGroup identity_left(const DetectionGroup& di, const DetectionGroup& dj) {
  (void)dj;
  return di;
}

DetectionGroup identity_right(const DetectionGroup& di, const DetectionGroup& dj) {
  (void)di;
  return dj;
}

DetectionGroup apply_to_group(OpKind kind, const DetectionGroup& group,
                              const OpParams& params) {
  auto list_op = [&](const std::vector<BBox>& boxes) -> std::vector<BBox> {
    switch (kind) {
      case OpKind::kNms: return nms(boxes, params);
      case OpKind::kSoftNms: return soft_nms(boxes, params);
      case OpKind::kAdjNms: return adj_nms(boxes, params);
      case OpKind::kNmwNaive: return nmw_naive(boxes, params);
      case OpKind::kWbf: return wbf({{boxes, 1.0}}, params);
      default:
        throw DomainError(std::string("apply_to_group: not a list operator: ") +
                          op_name(kind));
    }
  };
  DetectionGroup out;
  out.group_id = group.group_id;
  out.provenance = group.provenance;
  for (const auto& [image_id, dets] : group.per_image) {
    std::vector<BBox> fused = list_op(dets.boxes);
    if (fused.empty()) continue;
    out.per_image[image_id] = ImageDetections{image_id, std::move(fused)};
  }
  return out;
}

DetectionGroup pool_groups(const std::vector<DetectionGroup>& groups,
                           const std::string& group_id) {
  DetectionGroup out;
  out.group_id = group_id;
  for (const DetectionGroup& g : groups) {
    for (const auto& [image_id, dets] : g.per_image) {
      for (const BBox& b : dets.boxes) out.add(image_id, b);
    }
  }
  return out;
}

DetectionGroup wbf_groups(const std::vector<DetectionGroup>& groups,
                          const std::vector<double>& weights,
                          const OpParams& params, const std::string& group_id) {
  if (groups.empty()) throw DomainError("wbf: empty group list");
  if (!weights.empty() && weights.size() != groups.size()) {
    throw ConfigError("wbf: weight count " + std::to_string(weights.size()) +
                      " does not match group count " + std::to_string(groups.size()));
  }
  std::set<std::string> images;
  for (const DetectionGroup& g : groups) {
    for (const auto& [image_id, dets] : g.per_image) images.insert(image_id);
  }
  OpParams p = params;
  if (!p.wbf_model_count) p.wbf_model_count = static_cast<int>(groups.size());

  DetectionGroup out;
  out.group_id = group_id;
  for (const std::string& image_id : images) {
    std::vector<WbfGroup> per_image;
    for (std::size_t k = 0; k < groups.size(); ++k) {
      WbfGroup wg;
      wg.weight = weights.empty() ? 1.0 : weights[k];
      if (const std::vector<BBox>* boxes = groups[k].boxes_of(image_id)) {
        wg.boxes = *boxes;
      }
      per_image.push_back(std::move(wg));
    }
    std::vector<BBox> fused = wbf(per_image, p);
    if (fused.empty()) continue;
    out.per_image[image_id] = ImageDetections{image_id, std::move(fused)};
  }
  return out;
}

DetectionGroup apply_op(const FusionOp& op, const DetectionGroup& di,
                        const DetectionGroup& dj) {
  const std::string merged_id =
      "(" + di.group_id + "+" + dj.group_id + "|" + op_name(op.kind) + ")";

  if (op.kind == OpKind::kIdentityLeft || op.kind == OpKind::kIdentityRight) {
    DetectionGroup out = op.kind == OpKind::kIdentityLeft ? di : dj;
    out.group_id = merged_id;
    out.provenance = op_name(op.kind);
    return out;
  }

  if (op.kind == OpKind::kWbf) {
    DetectionGroup out = wbf_groups({di, dj}, {}, op.params, merged_id);
    out.provenance = op_name(op.kind);
    return out;
  }

  DetectionGroup pooled = pool_groups({di, dj}, merged_id);
  DetectionGroup out = apply_to_group(op.kind, pooled, op.params);
  out.provenance = op_name(op.kind);
  return out;
}

}  // namespace boxfuse
