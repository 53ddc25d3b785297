#pragma once

#include <random>

#include "boxfuse/core.hpp"
#include "boxfuse/eval.hpp"

namespace boxfuse::fixtures {

using Rng = std::mt19937;

// Boxes drawn around a handful of anchor points so overlaps actually occur.
BBox random_box(Rng& rng, int n_classes = 1);
std::vector<BBox> random_boxes(Rng& rng, std::size_t n, int n_classes = 1);

// A clustered scene: anchors with several jittered boxes each.
std::vector<BBox> clustered_boxes(Rng& rng, std::size_t n_anchors,
                                  std::size_t per_anchor, int n_classes = 1);

struct Scene {
  GroundTruth gt;
  std::vector<DetectionGroup> groups;
};

// Ground truth plus detector groups that see noisy subsets of it and add
// false positives; produces non-trivial mAP landscapes for ensemble tests.
Scene random_scene(Rng& rng, std::size_t n_groups, std::size_t n_images,
                   int n_classes, std::size_t gt_per_image);

// Thresholds 0.5 for every class id in [0, n_classes).
EvalConfig simple_config(int n_classes, Difficulty level = Difficulty::kL2);

}  // namespace boxfuse::fixtures
