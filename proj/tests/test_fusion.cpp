#include <algorithm>
#include <cmath>

#include "boxfuse/fusion.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace boxfuse;

namespace {

BBox box(double x1, double y1, double x2, double y2, double score = 0.5,
         ClassId cls = 0) {
  return BBox{x1, y1, x2, y2, score, cls};
}

bool same_box(const BBox& a, const BBox& b, double tol = 1e-12) {
  return std::abs(a.x1 - b.x1) <= tol && std::abs(a.y1 - b.y1) <= tol &&
         std::abs(a.x2 - b.x2) <= tol && std::abs(a.y2 - b.y2) <= tol &&
         std::abs(a.score - b.score) <= tol && a.class_id == b.class_id;
}

bool same_boxes(const std::vector<BBox>& a, const std::vector<BBox>& b,
                double tol = 1e-12) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!same_box(a[i], b[i], tol)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("OpParams validation") {
  OpParams p;
  CHECK_NOTHROW(validate(p));
  p.iou_thresh = 0.0;
  CHECK_THROWS_AS(validate(p), ConfigError);
  p = OpParams{};
  p.soft_sigma = -1.0;
  CHECK_THROWS_AS(validate(p), ConfigError);
  p = OpParams{};
  p.score_floor = 1.0;
  CHECK_THROWS_AS(validate(p), ConfigError);
}

TEST_CASE("nms keeps a single box and resolves full overlap by score") {
  OpParams p;
  const BBox only = box(3, 4, 10, 12, 0.7);
  auto out = nms({only}, p);
  REQUIRE(out.size() == 1);
  CHECK(same_box(out[0], only));

  auto duel = nms({box(0, 0, 4, 4, 0.8), box(0, 0, 4, 4, 0.9)}, p);
  REQUIRE(duel.size() == 1);
  CHECK(duel[0].score == 0.9);
}

TEST_CASE("nms matches the quadratic reference on random fixtures") {
  fixtures::Rng rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    const std::vector<BBox> boxes = fixtures::clustered_boxes(rng, 4, 5, 2);
    OpParams p;
    p.iou_thresh = 0.3 + 0.4 * (trial % 5) / 5.0;
    auto fast = nms(boxes, p);
    auto slow = oracle::ref_nms(boxes, p);
    CHECK(same_boxes(fast, slow, 0.0));
  }
}

TEST_CASE("nms invariants: idempotent, subset, separated survivors") {
  fixtures::Rng rng(55);
  OpParams p;
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<BBox> boxes = fixtures::clustered_boxes(rng, 3, 6, 2);
    auto out = nms(boxes, p);

    CHECK(same_boxes(nms(out, p), out, 0.0));

    for (const BBox& kept : out) {
      const bool found = std::any_of(boxes.begin(), boxes.end(), [&](const BBox& b) {
        return same_box(b, kept, 0.0);
      });
      CHECK(found);
    }

    for (std::size_t i = 0; i < out.size(); ++i) {
      for (std::size_t j = i + 1; j < out.size(); ++j) {
        if (out[i].class_id != out[j].class_id) continue;
        CHECK(iou(out[i], out[j]) < p.iou_thresh);
      }
    }
  }
}

TEST_CASE("operators are permutation invariant") {
  fixtures::Rng rng(77);
  std::vector<BBox> boxes = fixtures::clustered_boxes(rng, 3, 5, 2);
  OpParams p;
  auto base_nms = nms(boxes, p);
  auto base_soft = soft_nms(boxes, p);
  auto base_nmw = nmw_naive(boxes, p);
  for (int shuffle = 0; shuffle < 10; ++shuffle) {
    std::shuffle(boxes.begin(), boxes.end(), rng);
    CHECK(same_boxes(nms(boxes, p), base_nms, 0.0));
    CHECK(same_boxes(soft_nms(boxes, p), base_soft, 1e-12));
    CHECK(same_boxes(nmw_naive(boxes, p), base_nmw, 1e-12));
  }
}

TEST_CASE("soft_nms leaves non-overlapping boxes untouched") {
  OpParams p;
  const std::vector<BBox> apart = {box(0, 0, 5, 5, 0.9), box(50, 50, 60, 60, 0.4)};
  auto out = soft_nms(apart, p);
  REQUIRE(out.size() == 2);
  CHECK(out[0].score == 0.9);
  CHECK(out[1].score == 0.4);
}

TEST_CASE("soft_nms linear decay worked example") {
  // seed 10x10 at origin; second box shifted so iou is exactly 0.6
  const BBox seed = box(0, 0, 10, 10, 0.9);
  const BBox other = box(0, 2.5, 10, 12.5, 0.8);
  REQUIRE(iou(seed, other) == doctest::Approx(0.6).epsilon(1e-12));

  OpParams p;
  p.soft_method = SoftMethod::kLinear;
  p.iou_thresh = 0.5;
  auto out = soft_nms({seed, other}, p);
  REQUIRE(out.size() == 2);
  CHECK(out[0].score == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(out[1].score == doctest::Approx(0.8 * (1.0 - 0.6)).epsilon(1e-9));
  CHECK(out[1].score == doctest::Approx(0.32).epsilon(1e-9));
}

TEST_CASE("soft_nms gaussian decay worked example") {
  const BBox seed = box(0, 0, 10, 10, 0.9);
  const BBox other = box(0, 2.5, 10, 12.5, 0.8);
  OpParams p;
  p.soft_method = SoftMethod::kGaussian;
  p.soft_sigma = 0.5;
  auto out = soft_nms({seed, other}, p);
  REQUIRE(out.size() == 2);
  CHECK(out[1].score == doctest::Approx(0.8 * std::exp(-0.36 / 0.5)).epsilon(1e-12));
  CHECK(out[1].score == doctest::Approx(0.3894).epsilon(1e-4));
}

TEST_CASE("soft_nms with zero floor preserves the box count") {
  fixtures::Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const std::vector<BBox> boxes = fixtures::clustered_boxes(rng, 2, 6, 2);
    OpParams p;
    p.score_floor = 0.0;
    CHECK(soft_nms(boxes, p).size() == boxes.size());
  }
}

TEST_CASE("soft_nms never increases a score") {
  fixtures::Rng rng(32);
  for (const SoftMethod method : {SoftMethod::kLinear, SoftMethod::kGaussian}) {
    OpParams p;
    p.soft_method = method;
    p.score_floor = 0.0;
    const std::vector<BBox> boxes = fixtures::clustered_boxes(rng, 2, 8);
    double max_in = 0.0;
    for (const BBox& b : boxes) max_in = std::max(max_in, b.score);
    for (const BBox& b : soft_nms(boxes, p)) {
      CHECK(b.score <= max_in + 1e-15);
    }
    // per-box: decayed output never exceeds the matching input multiset
    double sum_in = 0.0, sum_out = 0.0;
    for (const BBox& b : boxes) sum_in += b.score;
    for (const BBox& b : soft_nms(boxes, p)) sum_out += b.score;
    CHECK(sum_out <= sum_in + 1e-12);
  }
}

TEST_CASE("soft_nms agrees with the reference") {
  fixtures::Rng rng(33);
  for (int trial = 0; trial < 100; ++trial) {
    const std::vector<BBox> boxes = fixtures::clustered_boxes(rng, 3, 5, 2);
    OpParams p;
    p.soft_method = trial % 2 == 0 ? SoftMethod::kLinear : SoftMethod::kGaussian;
    CHECK(same_boxes(soft_nms(boxes, p), oracle::ref_soft_nms(boxes, p), 1e-12));
  }
}

TEST_CASE("adj_nms trivial cases") {
  OpParams p;
  const BBox only = box(1, 1, 9, 9, 0.6);
  auto one = adj_nms({only}, p);
  REQUIRE(one.size() == 1);
  // a lone box suffers no decay: exp(0) = 1
  CHECK(one[0].score == 0.6);

  auto two = adj_nms({box(0, 0, 5, 5, 0.9), box(50, 50, 60, 60, 0.4)}, p);
  REQUIRE(two.size() == 2);
  CHECK(two[0].score == 0.9);
  CHECK(two[1].score == 0.4);
}

TEST_CASE("adj_nms equals nms followed by gaussian soft_nms") {
  fixtures::Rng rng(44);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<BBox> boxes = fixtures::clustered_boxes(rng, 3, 4, 2);
    OpParams p;
    auto composed = soft_nms(nms(boxes, p), p);  // defaults are gaussian
    CHECK(same_boxes(adj_nms(boxes, p), composed, 0.0));
  }
  // a cluster of three mutual overlaps plus one distant box
  const std::vector<BBox> cluster = {
      box(0, 0, 10, 10, 0.9), box(1, 0, 11, 10, 0.8), box(0, 1, 10, 11, 0.7),
      box(100, 100, 110, 110, 0.6)};
  OpParams p;
  CHECK(same_boxes(adj_nms(cluster, p), soft_nms(nms(cluster, p), p), 0.0));
}

TEST_CASE("nmw_naive single box and disjoint boxes pass through") {
  OpParams p;
  const BBox only = box(2, 3, 12, 13, 0.8);
  auto one = nmw_naive({only}, p);
  REQUIRE(one.size() == 1);
  CHECK(same_box(one[0], only, 0.0));

  const std::vector<BBox> apart = {box(0, 0, 5, 5, 0.9), box(50, 50, 60, 60, 0.4)};
  auto two = nmw_naive(apart, p);
  REQUIRE(two.size() == 2);
  CHECK(same_box(two[0], apart[0], 0.0));
  CHECK(same_box(two[1], apart[1], 0.0));
}

TEST_CASE("nmw_naive worked example: score-weighted mean, max score") {
  OpParams p;
  p.iou_thresh = 0.3;
  auto out = nmw_naive({box(0, 0, 10, 10, 0.9), box(2, 0, 12, 10, 0.3)}, p);
  REQUIRE(out.size() == 1);
  CHECK(out[0].x1 == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(out[0].y1 == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(out[0].x2 == doctest::Approx(10.5).epsilon(1e-12));
  CHECK(out[0].y2 == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(out[0].score == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("nmw_naive all-zero cluster falls back to the unweighted mean") {
  OpParams p;
  p.iou_thresh = 0.3;
  auto out = nmw_naive({box(0, 0, 10, 10, 0.0), box(2, 0, 12, 10, 0.0)}, p);
  REQUIRE(out.size() == 1);
  CHECK(out[0].x1 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out[0].x2 == doctest::Approx(11.0).epsilon(1e-12));
  CHECK(out[0].score == 0.0);
}

TEST_CASE("nmw_naive and wbf agree with their references") {
  fixtures::Rng rng(66);
  for (int trial = 0; trial < 100; ++trial) {
    const std::vector<BBox> boxes = fixtures::clustered_boxes(rng, 3, 5, 2);
    OpParams p;
    p.iou_thresh = 0.4;
    CHECK(same_boxes(nmw_naive(boxes, p), oracle::ref_nmw_naive(boxes, p), 1e-12));

    std::vector<WbfGroup> groups(2);
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      groups[i % 2].boxes.push_back(boxes[i]);
    }
    OpParams wp;
    wp.iou_thresh = 0.55;
    CHECK(same_boxes(wbf(groups, wp), oracle::ref_wbf(groups, wp), 1e-12));
  }
}

TEST_CASE("fused boxes stay inside the member hull") {
  fixtures::Rng rng(68);
  for (int trial = 0; trial < 40; ++trial) {
    const std::vector<BBox> boxes = fixtures::clustered_boxes(rng, 2, 5);
    double hx1 = 1e9, hy1 = 1e9, hx2 = -1e9, hy2 = -1e9;
    for (const BBox& b : boxes) {
      hx1 = std::min(hx1, b.x1);
      hy1 = std::min(hy1, b.y1);
      hx2 = std::max(hx2, b.x2);
      hy2 = std::max(hy2, b.y2);
    }
    OpParams p;
    for (const BBox& f : nmw_naive(boxes, p)) {
      CHECK(f.x1 >= hx1 - 1e-9);
      CHECK(f.y1 >= hy1 - 1e-9);
      CHECK(f.x2 <= hx2 + 1e-9);
      CHECK(f.y2 <= hy2 + 1e-9);
    }
    for (const BBox& f : wbf({{boxes, 1.0}}, p)) {
      CHECK(f.x1 >= hx1 - 1e-9);
      CHECK(f.y1 >= hy1 - 1e-9);
      CHECK(f.x2 <= hx2 + 1e-9);
      CHECK(f.y2 <= hy2 + 1e-9);
    }
  }
}

TEST_CASE("wbf single disjoint group with N=1 is the identity") {
  OpParams p;
  p.iou_thresh = 0.55;
  const std::vector<BBox> apart = {box(0, 0, 5, 5, 0.9), box(50, 50, 60, 60, 0.4),
                                   box(200, 0, 210, 10, 0.7)};
  auto out = wbf({{apart, 1.0}}, p);
  REQUIRE(out.size() == 3);
  CHECK(same_boxes(out, canonical_sort(apart), 0.0));
}

TEST_CASE("wbf worked example: identical boxes from two models") {
  OpParams p;
  p.iou_thresh = 0.55;
  p.wbf_model_count = 2;
  const BBox a = box(0, 0, 10, 10, 0.6);
  const BBox b = box(0, 0, 10, 10, 1.0);
  auto out = wbf({{{a}, 1.0}, {{b}, 1.0}}, p);
  REQUIRE(out.size() == 1);
  CHECK(out[0].x1 == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(out[0].x2 == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(out[0].score == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("wbf rejects an empty group list") {
  OpParams p;
  CHECK_THROWS_AS(wbf({}, p), DomainError);
}

TEST_CASE("wbf rescales lone clusters by 1/N") {
  OpParams p;
  p.wbf_model_count = 2;
  auto out = wbf({{{box(0, 0, 10, 10, 0.8)}, 1.0}, {{}, 1.0}}, p);
  REQUIRE(out.size() == 1);
  CHECK(out[0].score == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("class-aware operators commute with class partitioning") {
  fixtures::Rng rng(89);
  const std::vector<BBox> boxes = fixtures::clustered_boxes(rng, 3, 5, 3);
  OpParams p;

  std::map<ClassId, std::vector<BBox>> split;
  for (const BBox& b : boxes) split[b.class_id].push_back(b);

  auto check_op = [&](auto&& fn) {
    std::vector<BBox> concat;
    for (const auto& [cls, bucket] : split) {
      auto part = fn(bucket);
      concat.insert(concat.end(), part.begin(), part.end());
    }
    CHECK(same_boxes(fn(boxes), canonical_sort(concat), 1e-12));
  };
  check_op([&](const std::vector<BBox>& b) { return nms(b, p); });
  check_op([&](const std::vector<BBox>& b) { return soft_nms(b, p); });
  check_op([&](const std::vector<BBox>& b) { return nmw_naive(b, p); });
  check_op([&](const std::vector<BBox>& b) { return wbf({{b, 1.0}}, p); });
}

TEST_CASE("identity operators return their operands") {
  DetectionGroup a;
  a.group_id = "a";
  a.add("img", box(0, 0, 1, 1, 0.5));
  DetectionGroup b;
  b.group_id = "b";
  b.add("img", box(5, 5, 6, 6, 0.7));

  CHECK(identity_left(a, b).group_id == "a");
  CHECK(identity_right(a, b).group_id == "b");
  CHECK(identity_left(a, a).total_boxes() == identity_right(a, a).total_boxes());
}

TEST_CASE("apply_op: identities, empty pooling, wbf delegation") {
  DetectionGroup a;
  a.group_id = "a";
  a.add("img", box(0, 0, 10, 10, 0.6));
  DetectionGroup b;
  b.group_id = "b";
  b.add("img", box(0, 0, 10, 10, 1.0));
  DetectionGroup empty;
  empty.group_id = "empty";

  FusionOp o1{OpKind::kIdentityLeft, {}};
  auto left = apply_op(o1, a, b);
  CHECK(left.group_id == "(a+b|o1)");
  REQUIRE(left.boxes_of("img") != nullptr);
  CHECK(same_box((*left.boxes_of("img"))[0], box(0, 0, 10, 10, 0.6)));

  FusionOp op_nms{OpKind::kNms, {}};
  auto pooled = apply_op(op_nms, a, empty);
  CHECK(same_boxes(*pooled.boxes_of("img"), nms({box(0, 0, 10, 10, 0.6)}, {}), 0.0));

  FusionOp op_wbf{OpKind::kWbf, {}};
  op_wbf.params.iou_thresh = 0.55;
  auto fused = apply_op(op_wbf, a, b);
  REQUIRE(fused.boxes_of("img") != nullptr);
  REQUIRE(fused.boxes_of("img")->size() == 1);
  CHECK((*fused.boxes_of("img"))[0].score == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("op names round-trip") {
  for (OpKind kind : {OpKind::kNms, OpKind::kAdjNms, OpKind::kNmwNaive, OpKind::kWbf,
                      OpKind::kSoftNms, OpKind::kIdentityLeft, OpKind::kIdentityRight}) {
    auto parsed = op_from_name(op_name(kind));
    REQUIRE(parsed.has_value());
    CHECK(*parsed == kind);
  }
  CHECK(!op_from_name("magic").has_value());
}
