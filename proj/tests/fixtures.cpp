#include "fixtures.hpp"

#include <algorithm>

namespace boxfuse::fixtures {

namespace {

constexpr double kAnchorsX[] = {10.0, 40.0, 70.0, 25.0, 55.0};
constexpr double kAnchorsY[] = {15.0, 45.0, 20.0, 60.0, 35.0};

BBox jittered(Rng& rng, double cx, double cy, int n_classes) {
  std::uniform_real_distribution<double> jitter(-4.0, 4.0);
  std::uniform_real_distribution<double> size(4.0, 18.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, n_classes - 1);
  BBox b;
  const double w = size(rng);
  const double h = size(rng);
  b.x1 = cx + jitter(rng);
  b.y1 = cy + jitter(rng);
  b.x2 = b.x1 + w;
  b.y2 = b.y1 + h;
  b.score = unit(rng);
  b.class_id = cls(rng);
  return b;
}

}  // namespace

BBox random_box(Rng& rng, int n_classes) {
  std::uniform_int_distribution<std::size_t> anchor(0, std::size(kAnchorsX) - 1);
  const std::size_t a = anchor(rng);
  return jittered(rng, kAnchorsX[a], kAnchorsY[a], n_classes);
}

std::vector<BBox> random_boxes(Rng& rng, std::size_t n, int n_classes) {
  std::vector<BBox> boxes;
  boxes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) boxes.push_back(random_box(rng, n_classes));
  return boxes;
}

std::vector<BBox> clustered_boxes(Rng& rng, std::size_t n_anchors,
                                  std::size_t per_anchor, int n_classes) {
  std::vector<BBox> boxes;
  for (std::size_t a = 0; a < n_anchors; ++a) {
    const std::size_t slot = a % std::size(kAnchorsX);
    for (std::size_t i = 0; i < per_anchor; ++i) {
      boxes.push_back(jittered(rng, kAnchorsX[slot], kAnchorsY[slot], n_classes));
    }
  }
  return boxes;
}

Scene random_scene(Rng& rng, std::size_t n_groups, std::size_t n_images,
                   int n_classes, std::size_t gt_per_image) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> noise(-2.5, 2.5);
  std::uniform_int_distribution<int> difficulty(0, 3);

  Scene scene;
  std::vector<ClassId> gt_classes;
  for (std::size_t img = 0; img < n_images; ++img) {
    const std::string image_id = "img" + std::to_string(img);
    std::vector<GroundTruthBox>& gts = scene.gt.per_image[image_id];
    for (std::size_t i = 0; i < gt_per_image; ++i) {
      GroundTruthBox g;
      g.box = random_box(rng, n_classes);
      g.box.score = 1.0;
      g.difficulty = difficulty(rng) == 0 ? Difficulty::kL2 : Difficulty::kL1;
      gt_classes.push_back(g.box.class_id);
      gts.push_back(g);
    }
  }

  for (std::size_t k = 0; k < n_groups; ++k) {
    DetectionGroup group;
    group.group_id = "model" + std::to_string(k);
    for (const auto& [image_id, gts] : scene.gt.per_image) {
      for (const GroundTruthBox& g : gts) {
        if (unit(rng) < 0.35) continue;  // missed detection
        BBox d = g.box;
        d.x1 += noise(rng);
        d.y1 += noise(rng);
        d.x2 += noise(rng);
        d.y2 += noise(rng);
        if (d.x2 <= d.x1) d.x2 = d.x1 + 1.0;
        if (d.y2 <= d.y1) d.y2 = d.y1 + 1.0;
        d.score = 0.3 + 0.7 * unit(rng);
        group.add(image_id, d);
      }
      // a few false positives per image, drawn from classes the scene
      // actually contains
      const std::size_t n_fp = static_cast<std::size_t>(unit(rng) * 3.0);
      std::uniform_int_distribution<std::size_t> pick(0, gt_classes.size() - 1);
      for (std::size_t i = 0; i < n_fp; ++i) {
        BBox fp = random_box(rng, n_classes);
        fp.class_id = gt_classes[pick(rng)];
        fp.score = 0.3 * unit(rng) + 0.05;
        group.add(image_id, fp);
      }
    }
    scene.groups.push_back(std::move(group));
  }
  return scene;
}

EvalConfig simple_config(int n_classes, Difficulty level) {
  EvalConfig cfg;
  for (int c = 0; c < n_classes; ++c) cfg.per_class_iou[c] = 0.5;
  cfg.level = level;
  return cfg;
}

}  // namespace boxfuse::fixtures
