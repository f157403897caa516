#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "smrnet/grad_check.hpp"
#include "smrnet/model.hpp"

using namespace smrnet;

namespace {

template <class T>
TensorT<T> random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  auto t = TensorT<T>::zeros(shape);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Boxes on the 1/8-pixel lattice so the rasterization count is exact.
BBox random_lattice_box(Rng& rng, double extent) {
  auto snap = [](double v) { return std::round(v * 8.0) / 8.0; };
  const double x1 = snap(rng.uniform(0, extent - 2));
  const double y1 = snap(rng.uniform(0, extent - 2));
  const double w = snap(rng.uniform(1, extent - x1 - 1) + 1);
  const double h = snap(rng.uniform(1, extent - y1 - 1) + 1);
  return BBox{x1, y1, x1 + w, y1 + h};
}

// Counts 1/8-px cells inside intersection and union.
double iou_raster_oracle(const BBox& p, const BBox& q) {
  auto cell = [](const BBox& b, double x, double y) {
    return x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2;
  };
  const double x_lo = std::min(p.x1, q.x1), x_hi = std::max(p.x2, q.x2);
  const double y_lo = std::min(p.y1, q.y1), y_hi = std::max(p.y2, q.y2);
  int64_t inter = 0, uni = 0;
  for (double y = y_lo + 1.0 / 16; y < y_hi; y += 1.0 / 8)
    for (double x = x_lo + 1.0 / 16; x < x_hi; x += 1.0 / 8) {
      const bool in_p = cell(p, x, y), in_q = cell(q, x, y);
      if (in_p && in_q) ++inter;
      if (in_p || in_q) ++uni;
    }
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Independent greedy NMS over index sets.
std::vector<size_t> nms_bruteforce(const std::vector<Detection>& dets, double thresh) {
  std::vector<bool> removed(dets.size(), false);
  std::vector<size_t> kept;
  while (true) {
    int best = -1;
    for (size_t i = 0; i < dets.size(); ++i) {
      if (removed[i]) continue;
      if (best < 0 || dets[i].score > dets[static_cast<size_t>(best)].score)
        best = static_cast<int>(i);
    }
    if (best < 0) break;
    kept.push_back(static_cast<size_t>(best));
    removed[static_cast<size_t>(best)] = true;
    for (size_t j = 0; j < dets.size(); ++j) {
      if (removed[j]) continue;
      if (iou(dets[static_cast<size_t>(best)].box, dets[j].box) > thresh) removed[j] = true;
    }
  }
  return kept;
}

Detection random_detection(Rng& rng) {
  const double x1 = rng.uniform(0, 80);
  const double y1 = rng.uniform(0, 80);
  return Detection{BBox{x1, y1, x1 + rng.uniform(2, 40), y1 + rng.uniform(2, 40)}, 1,
                   rng.uniform(0, 1)};
}

}  // namespace

TEST_CASE("iou examples") {
  const BBox a{0, 0, 2, 2};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, BBox{5, 5, 7, 7}) == doctest::Approx(0.0));
  CHECK(iou(a, BBox{1, 1, 3, 3}) == doctest::Approx(1.0 / 7));
  CHECK(iou_raster_oracle(a, BBox{1, 1, 3, 3}) == doctest::Approx(1.0 / 7));
  CHECK_THROWS_AS(iou(a, BBox{1, 1, 1, 5}), std::invalid_argument);
}

TEST_CASE("iou properties and rasterization oracle") {
  Rng rng(127);
  for (int trial = 0; trial < 60; ++trial) {
    const BBox p = random_lattice_box(rng, 64);
    const BBox q = random_lattice_box(rng, 64);
    const double v = iou(p, q);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(iou(q, p) == doctest::Approx(v).epsilon(1e-12));
    CHECK(std::abs(v - iou_raster_oracle(p, q)) <= 1e-3);
  }
  // 1 iff identical
  const BBox p = random_lattice_box(rng, 64);
  BBox shifted = p;
  shifted.x1 += 0.5;
  CHECK(iou(p, p) == doctest::Approx(1.0));
  CHECK(iou(p, shifted) < 1.0);
}

TEST_CASE("generate_anchors counting and formula") {
  auto anchors = generate_anchors(2, 2, 8, {16, 32, 64}, {0.5, 1, 2});
  CHECK(anchors.size() == 36);

  auto square = generate_anchors(1, 1, 8, {32}, {1});
  CHECK(square[0].box.width() == doctest::Approx(32));
  CHECK(square[0].box.height() == doctest::Approx(32));
  CHECK(square[0].box.cx() == doctest::Approx(4));
  CHECK(square[0].box.cy() == doctest::Approx(4));
}

TEST_CASE("generate_anchors bitwise-matches an independent generator") {
  const std::vector<double> scales = {16, 32, 64};
  const std::vector<double> ratios = {0.5, 1, 2};
  auto got = generate_anchors(12, 12, 8, scales, ratios);
  size_t k = 0;
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j)
      for (double s : scales)
        for (double r : ratios) {
          const double cx = (j + 0.5) * 8.0;
          const double cy = (i + 0.5) * 8.0;
          const double w = s * std::sqrt(r);
          const double h = s / std::sqrt(r);
          REQUIRE(k < got.size());
          CHECK(got[k].box.x1 == cx - 0.5 * w);
          CHECK(got[k].box.y1 == cy - 0.5 * h);
          CHECK(got[k].box.x2 == cx + 0.5 * w);
          CHECK(got[k].box.y2 == cy + 0.5 * h);
          ++k;
        }
  CHECK(k == got.size());
}

TEST_CASE("box encode/decode") {
  const BBox anchor{10, 10, 26, 42};
  auto d0 = encode_box(anchor, anchor);
  for (double v : d0) CHECK(v == doctest::Approx(0.0));

  // width doubles under delta (0,0,ln2,0)
  auto wide = decode_box({0, 0, std::log(2.0), 0}, anchor);
  CHECK(wide.width() == doctest::Approx(2 * anchor.width()));
  CHECK(wide.height() == doctest::Approx(anchor.height()));
  CHECK(wide.cx() == doctest::Approx(anchor.cx()));

  CHECK_THROWS_AS(encode_box(anchor, BBox{1, 1, 1, 1}), std::invalid_argument);

  // roundtrip on 1000 random pairs
  Rng rng(131);
  for (int trial = 0; trial < 1000; ++trial) {
    const double ax1 = rng.uniform(0, 60), ay1 = rng.uniform(0, 60);
    const BBox a{ax1, ay1, ax1 + rng.uniform(4, 60), ay1 + rng.uniform(4, 60)};
    const double gx1 = rng.uniform(0, 60), gy1 = rng.uniform(0, 60);
    const BBox g{gx1, gy1, gx1 + rng.uniform(4, 60), gy1 + rng.uniform(4, 60)};
    const BBox back = decode_box(encode_box(g, a), a);
    CHECK(std::abs(back.x1 - g.x1) <= 1e-4);
    CHECK(std::abs(back.y1 - g.y1) <= 1e-4);
    CHECK(std::abs(back.x2 - g.x2) <= 1e-4);
    CHECK(std::abs(back.y2 - g.y2) <= 1e-4);
  }
}

TEST_CASE("nms examples") {
  const Detection one{BBox{0, 0, 10, 10}, 1, 0.7};
  auto kept = nms({one}, 0.5);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == doctest::Approx(0.7));

  const Detection strong{BBox{0, 0, 10, 10}, 1, 0.9};
  const Detection weak{BBox{0, 0, 10, 10}, 1, 0.8};
  kept = nms({weak, strong}, 0.5);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == doctest::Approx(0.9));
}

TEST_CASE("nms equals the brute-force oracle") {
  Rng rng(137);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Detection> dets;
    const int n = 1 + static_cast<int>(rng.uniform_int(50));
    for (int i = 0; i < n; ++i) dets.push_back(random_detection(rng));
    const double thresh = rng.uniform(0.2, 0.8);
    auto kept = nms(dets, thresh);
    auto want = nms_bruteforce(dets, thresh);
    REQUIRE(kept.size() == want.size());
    for (size_t i = 0; i < kept.size(); ++i) {
      CHECK(kept[i].score == dets[want[i]].score);
      CHECK(kept[i].box.x1 == dets[want[i]].box.x1);
    }
    // survivors never exceed the threshold pairwise
    for (size_t i = 0; i < kept.size(); ++i)
      for (size_t j = i + 1; j < kept.size(); ++j)
        CHECK(iou(kept[i].box, kept[j].box) <= thresh + 1e-12);
  }
}

TEST_CASE("rpn head zero weights give logits 0") {
  RpnHead<float> head(16, 9);
  auto fused = Tensor::zeros({1, 16, 6, 6});
  Rng rng(139);
  for (auto& v : fused.data()) v = static_cast<float>(rng.uniform(-1, 1));
  auto out = rpn_forward(head, fused);
  CHECK(out.logits.shape() == Shape{1, 9, 6, 6});
  CHECK(out.deltas.shape() == Shape{1, 36, 6, 6});
  for (float v : out.logits.data()) CHECK(v == 0.0f);  // sigmoid -> 0.5 objectness
}

TEST_CASE("rpn head shape accounting at A=9") {
  RpnHead<float> head(64, 9);
  Rng rng(149);
  head.init(rng);
  auto out = rpn_forward(head, Tensor::zeros({1, 64, 12, 12}));
  CHECK(out.logits.shape() == Shape{1, 9, 12, 12});
  CHECK(out.deltas.shape() == Shape{1, 36, 12, 12});
}

TEST_CASE("rpn head gradient check, both combine modes") {
  for (bool concat_mode : {false, true}) {
    RpnHead<double> head(8, 3, concat_mode);
    Rng rng(151);
    head.init(rng);
    auto x = random_tensor<double>({1, 8, 5, 5}, rng);
    CHECK(grad_check([&](const TensorT<double>& t) {
            auto out = rpn_forward(head, t);
            return concat<double>({reshape(out.logits, {1, out.logits.numel()}),
                                   reshape(out.deltas, {1, out.deltas.numel()})},
                                  1);
          }, x, /*max_coords=*/64) <= 1e-4);
  }
}

TEST_CASE("select_proposals ranking and tie-breaks") {
  const int A = 1, h = 3, w = 3;
  auto anchors = generate_anchors(h, w, 8, {16}, {1});
  ProposalParams params{100, 10, 0.7, 1.0};

  // a dominant cell becomes proposal #1
  std::vector<float> logits(9, 0.0f), deltas(36, 0.0f);
  logits[4] = 5.0f;  // cell (1,1)
  auto props = select_proposals(logits.data(), deltas.data(), anchors, A, h, w, 24, 24,
                                params);
  REQUIRE(!props.empty());
  CHECK(props[0].cx() == doctest::Approx(12.0));
  CHECK(props[0].cy() == doctest::Approx(12.0));

  // all-equal logits: stable tie-break by anchor index
  std::fill(logits.begin(), logits.end(), 0.25f);
  auto tied = select_proposals(logits.data(), deltas.data(), anchors, A, h, w, 24, 24,
                               params);
  REQUIRE(!tied.empty());
  CHECK(tied[0].cx() == doctest::Approx(anchors[0].box.cx()));
  CHECK(tied[0].cy() == doctest::Approx(anchors[0].box.cy()));
}

TEST_CASE("select_proposals matches a straight-line reference") {
  Rng rng(157);
  const int A = 9, h = 4, w = 4;
  auto anchors = generate_anchors(h, w, 8, {16, 32, 64}, {0.5, 1, 2});
  std::vector<float> logits(static_cast<size_t>(A * h * w));
  std::vector<float> deltas(static_cast<size_t>(4 * A * h * w));
  for (auto& v : logits) v = static_cast<float>(rng.uniform(-2, 2));
  for (auto& v : deltas) v = static_cast<float>(rng.uniform(-0.3, 0.3));
  ProposalParams params{50, 10, 0.7, 4.0};
  auto got = select_proposals(logits.data(), deltas.data(), anchors, A, h, w, 32, 32,
                              params);

  // reference: decode/clip/filter, sort, greedy nms, truncate
  struct Cand {
    BBox box;
    double score;
    size_t idx;
  };
  std::vector<Cand> cands;
  for (size_t k = 0; k < anchors.size(); ++k) {
    const int slot = static_cast<int>(k % A);
    const int64_t cell = anchors[k].cell_i * w + anchors[k].cell_j;
    std::array<double, 4> d;
    for (int t = 0; t < 4; ++t)
      d[static_cast<size_t>(t)] = deltas[static_cast<size_t>((4 * slot + t) * h * w + cell)];
    BBox b = clip_box(decode_box(d, anchors[k].box), 32, 32);
    if (b.width() < 4 || b.height() < 4) continue;
    const double z = logits[static_cast<size_t>(slot * h * w + cell)];
    cands.push_back({b, 1.0 / (1.0 + std::exp(-z)), cands.size()});
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Cand& a, const Cand& b) { return a.score > b.score; });
  if (cands.size() > 50) cands.resize(50);
  std::vector<BBox> want;
  std::vector<bool> dead(cands.size(), false);
  for (size_t i = 0; i < cands.size() && static_cast<int>(want.size()) < 10; ++i) {
    if (dead[i]) continue;
    want.push_back(cands[i].box);
    for (size_t j = i + 1; j < cands.size(); ++j)
      if (!dead[j] && iou(cands[i].box, cands[j].box) > 0.7) dead[j] = true;
  }
  REQUIRE(got.size() == want.size());
  for (size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].x1 == doctest::Approx(want[i].x1).epsilon(1e-12));
    CHECK(got[i].y2 == doctest::Approx(want[i].y2).epsilon(1e-12));
  }
}

TEST_CASE("roi_pool trivial and oracle cases") {
  // whole-map roi over a constant plane: every bin equals the constant
  auto fused = Tensor::full({1, 2, 6, 6}, 3.25f);
  auto pooled = roi_pool(fused, 0, BBox{0, 0, 48, 48}, 8.0, 7);
  CHECK(pooled.shape() == Shape{2, 7, 7});
  for (float v : pooled.data()) CHECK(v == doctest::Approx(3.25));

  // roi smaller than one cell: all bins equal that cell's value
  auto grid = Tensor::zeros({1, 1, 6, 6});
  for (int64_t i = 0; i < 36; ++i) grid.data()[static_cast<size_t>(i)] = static_cast<float>(i);
  auto tiny = roi_pool(grid, 0, BBox{17, 25, 19, 27}, 8.0, 7);  // cell (3,2)
  for (float v : tiny.data()) CHECK(v == doctest::Approx(grid.at({0, 0, 3, 2})));

  // fully outside roi rejected
  CHECK_THROWS_AS(roi_pool(grid, 0, BBox{100, 100, 120, 120}, 8.0, 7),
                  std::invalid_argument);

  // random roi against a loop oracle
  Rng rng(163);
  auto rnd = random_tensor<float>({1, 3, 8, 8}, rng);
  const BBox roi{9.5, 4.0, 55.0, 60.5};
  auto got = roi_pool(rnd, 0, roi, 8.0, 7);
  const int64_t x1 = static_cast<int64_t>(std::floor(roi.x1 / 8));
  const int64_t y1 = static_cast<int64_t>(std::floor(roi.y1 / 8));
  const int64_t x2 = static_cast<int64_t>(std::ceil(roi.x2 / 8));
  const int64_t y2 = static_cast<int64_t>(std::ceil(roi.y2 / 8));
  const int64_t rw = std::max<int64_t>(x2 - x1, 1), rh = std::max<int64_t>(y2 - y1, 1);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t bi = 0; bi < 7; ++bi)
      for (int64_t bj = 0; bj < 7; ++bj) {
        int64_t hs = std::max<int64_t>(y1 + bi * rh / 7, 0);
        int64_t he = std::min<int64_t>(y1 + (bi + 1) * rh / 7 + (((bi + 1) * rh) % 7 ? 1 : 0), 8);
        int64_t ws = std::max<int64_t>(x1 + bj * rw / 7, 0);
        int64_t we = std::min<int64_t>(x1 + (bj + 1) * rw / 7 + (((bj + 1) * rw) % 7 ? 1 : 0), 8);
        float want = 0;
        if (hs < he && ws < we) {
          want = -1e30f;
          for (int64_t y = hs; y < he; ++y)
            for (int64_t x = ws; x < we; ++x)
              want = std::max(want, rnd.at({0, c, y, x}));
        }
        CHECK(got.at({c, bi, bj}) == doctest::Approx(want));
      }
}

TEST_CASE("roi_pool gradient reaches the fused map") {
  Rng rng(167);
  auto fused = random_tensor<double>({1, 2, 6, 6}, rng);
  CHECK(grad_check([&](const TensorT<double>& t) {
          return roi_pool(t, 0, BBox{5, 5, 40, 40}, 8.0, 4);
        }, fused, /*max_coords=*/48) <= 1e-4);
}

TEST_CASE("detection head outputs and gradient") {
  // zero weights: uniform class posterior
  DetectionHead<float> zero_head(32, 16, 3);
  auto pooled = Tensor::zeros({2, 32});
  Rng rng(173);
  for (auto& v : pooled.data()) v = static_cast<float>(rng.uniform(-1, 1));
  auto out = detection_head(zero_head, pooled);
  auto probs = softmax(out.cls_logits);
  for (float v : probs.data()) CHECK(v == doctest::Approx(1.0f / 3));
  CHECK(out.reg.shape() == Shape{2, 12});

  // flatten accounting at Cf=64: 64*49 = 3136 inputs
  DetectionHead<float> sized(64 * 49, 256, 3);
  CHECK(sized.fc1.in_features() == 3136);

  DetectionHead<double> head(24, 12, 3);
  head.init(rng);
  auto x = random_tensor<double>({3, 24}, rng);
  CHECK(grad_check([&](const TensorT<double>& t) {
          auto o = detection_head(head, t);
          return concat<double>({o.cls_logits, o.reg}, 1);
        }, x) <= 1e-4);
}

TEST_CASE("anchor assignment marks exact-match anchors positive with zero residual") {
  auto anchors = generate_anchors(3, 3, 8, {16}, {1});
  const BBox gt = anchors[4].box;  // exactly anchor 4
  auto assign = detail::assign_anchors(anchors, {gt}, 0.7, 0.3);
  CHECK(assign.label[4] == 1);
  auto d = encode_box(gt, anchors[4].box);
  for (double v : d) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("training step: zero-init delta head on an anchor-aligned GT has zero reg loss") {
  ModelConfig mc = ModelConfig::tiny();
  SmrNet<float> model(mc);
  model.init(21);
  // zero the RPN regression conv: predicted deltas are exactly 0
  std::fill(model.rpn.box_deltas.weight.data().begin(),
            model.rpn.box_deltas.weight.data().end(), 0.0f);
  std::fill(model.rpn.box_deltas.bias.data().begin(),
            model.rpn.box_deltas.bias.data().end(), 0.0f);

  // ground truth equal to a stride-8 anchor (scale 32, ratio 1) well inside
  auto anchors = generate_anchors(12, 12, 8, mc.anchors.scales, mc.anchors.ratios);
  BBox gt;
  for (const auto& a : anchors)
    if (a.scale_idx == 1 && a.ratio_idx == 1 && a.cell_i == 6 && a.cell_j == 6) gt = a.box;
  REQUIRE(gt.valid());

  auto images = Tensor::full({2, 1, 96, 96}, 0.5f);
  std::vector<GtSample> gts(2);
  for (auto& g : gts) {
    g.boxes = {gt};
    g.classes = {1};
  }
  TrainConfig tc;
  SgdMomentum<float> opt(0.0, 0.0, 0.0);  // lr 0: observe losses without moving
  Rng rng(23);
  auto losses = training_step(model, opt, images, gts, tc, rng);
  CHECK(losses.rpn_reg == doctest::Approx(0.0));
  CHECK(losses.total > 0.0);
}

TEST_CASE("training step loss decreases on a repeated image (overfit smoke)") {
  ModelConfig mc = ModelConfig::tiny();
  SmrNet<float> model(mc);
  model.init(31);
  Rng data_rng(33);
  auto image = Tensor::zeros({4, 1, 96, 96});
  for (auto& v : image.data()) v = 0.5f;
  // draw one synthetic-looking bright square on gray
  for (int64_t n = 0; n < 4; ++n)
    for (int64_t y = 30; y < 62; ++y)
      for (int64_t x = 26; x < 58; ++x)
        image.data()[static_cast<size_t>(((n * 1 + 0) * 96 + y) * 96 + x)] = 0.9f;
  std::vector<GtSample> gts(4);
  for (auto& g : gts) {
    g.boxes = {BBox{26, 30, 58, 62}};
    g.classes = {1};
  }
  TrainConfig tc;
  SgdMomentum<float> opt(tc.lr, tc.momentum, tc.clip_norm);
  Rng rng(37);
  double first = 0, last = 0;
  for (int step = 0; step < 50; ++step) {
    const auto losses = training_step(model, opt, image, gts, tc, rng);
    if (step == 0) first = losses.total;
    last = losses.total;
    REQUIRE(std::isfinite(losses.total));
  }
  CHECK(last < first);
}

TEST_CASE("no ground truth is skipped with a warning, not a crash") {
  ModelConfig mc = ModelConfig::tiny();
  SmrNet<float> model(mc);
  model.init(41);
  auto images = Tensor::full({2, 1, 96, 96}, 0.5f);
  std::vector<GtSample> gts(2);  // empty boxes
  TrainConfig tc;
  SgdMomentum<float> opt(tc.lr, tc.momentum, tc.clip_norm);
  Rng rng(43);
  auto losses = training_step(model, opt, images, gts, tc, rng);
  CHECK(losses.total == 0.0);
}

TEST_CASE("infer determinism and ablation shape neutrality") {
  for (bool msff : {true, false}) {
    for (bool rw : {true, false}) {
      ModelConfig mc = ModelConfig::tiny();
      mc.msff_enabled = msff;
      mc.rw_enabled = rw;
      SmrNet<float> model(mc);
      model.init(47);
      auto img = Tensor::zeros({1, 1, 96, 96});
      Rng rng(53);
      for (auto& v : img.data()) v = static_cast<float>(rng.uniform(0, 1));
      auto d1 = infer(model, img);
      auto d2 = infer(model, img);
      REQUIRE(d1.size() == d2.size());
      for (size_t i = 0; i < d1.size(); ++i) {
        CHECK(d1[i].score == d2[i].score);
        CHECK(d1[i].class_id == d2[i].class_id);
        CHECK(d1[i].box.x1 == d2[i].box.x1);
      }
      for (const auto& d : d1) {
        CHECK(d.class_id >= 1);
        CHECK(d.class_id <= 2);
        CHECK(d.score >= 0.05);
        CHECK(d.box.valid());
      }
      CHECK(d1.size() <= 20);
    }
  }
}
