#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "gridadv/datagen.hpp"
#include "gridadv/losses.hpp"

using namespace gridadv;

namespace {

Tensor zero_raw(const DetectorConfig& cfg) {
  return Tensor({static_cast<std::size_t>(cfg.grid), static_cast<std::size_t>(cfg.grid),
                 static_cast<std::size_t>(cfg.anchors),
                 static_cast<std::size_t>(cfg.pred_slots())});
}

Tensor random_raw(const DetectorConfig& cfg, std::uint64_t seed) {
  Tensor raw = zero_raw(cfg);
  Rng rng(seed);
  for (auto& v : raw.data) v = rng.uniform(-2.0, 2.0);
  return raw;
}

GroundTruthSet two_objects() {
  GroundTruthSet gt;
  gt.items.push_back({0, Box{30, 30, 22, 26}});
  gt.items.push_back({2, Box{70, 64, 40, 36}});
  return gt;
}

// Independent recomputation of all three terms straight from the definitions,
// structured differently from the library (single flat pass, no decomposition
// bookkeeping).
LossBreakdown loop_oracle(const Tensor& raw, const TargetAssignment& asg,
                          const DetectorConfig& cfg) {
  const int S = cfg.grid;
  const int A = cfg.anchors;
  auto clamp_p = [](double p) { return std::min(1.0 - 1e-7, std::max(1e-7, p)); };
  LossBreakdown out;
  for (int cy = 0; cy < S; ++cy)
    for (int cx = 0; cx < S; ++cx)
      for (int a = 0; a < A; ++a) {
        const AnchorTarget& t = asg.at(cy, cx, a);
        const double p_obj = clamp_p(sigmoid(raw.at(cy, cx, a, 0)));
        if (t.has_obj) {
          out.obj_part += -std::log(p_obj);
          Box pred = decode_box(cfg, cy, cx, a, raw.at(cy, cx, a, 1), raw.at(cy, cx, a, 2),
                                raw.at(cy, cx, a, 3), raw.at(cy, cx, a, 4));
          out.l_loc += ciou_loss(pred, t.box);
          for (int c = 0; c < cfg.classes; ++c) {
            const double p = clamp_p(sigmoid(raw.at(cy, cx, a, 5 + c)));
            out.l_cls += c == t.class_id ? -std::log(p) : -std::log(1 - p);
          }
        } else {
          out.no_obj_part += -std::log(1 - p_obj);
        }
      }
  out.l_obj = out.obj_part + cfg.lambda_no_obj * out.no_obj_part;
  out.l_total = out.l_obj + out.l_loc + out.l_cls;
  return out;
}

}  // namespace

TEST_CASE("binary cross-entropy closed forms and clipping") {
  CHECK(bce(0.5, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce(0.5, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce(1.0, 1.0) == doctest::Approx(-std::log(1.0 - 1e-7)).epsilon(1e-9));
  // Fully-wrong prediction saturates at the clip value instead of infinity.
  CHECK(bce(0.0, 1.0) == doctest::Approx(-std::log(1e-7)).epsilon(1e-12));
  CHECK(bce(1.0, 0.0) == doctest::Approx(-std::log(1e-7)).epsilon(1e-9));
  CHECK(std::isfinite(bce(0.0, 1.0)));
}

TEST_CASE("zero raw predictions, empty scene: objectness is lambda * K * ln 2") {
  DetectorConfig cfg;
  Tensor raw = zero_raw(cfg);
  TargetAssignment asg = assign_targets(GroundTruthSet{}, cfg);
  const double K = cfg.grid * cfg.grid * static_cast<double>(cfg.anchors);
  CHECK(objectness_loss(raw, asg, cfg.lambda_no_obj) ==
        doctest::Approx(cfg.lambda_no_obj * K * std::log(2.0)).epsilon(1e-12));
  CHECK(classification_loss(raw, asg, cfg) == 0.0);
  CHECK(localization_loss(raw, asg, cfg) == 0.0);
}

TEST_CASE("zero raw predictions, one object: per-term closed forms") {
  DetectorConfig cfg;
  GroundTruthSet gt;
  gt.items.push_back({1, Box{40, 40, 24, 24}});
  TargetAssignment asg = assign_targets(gt, cfg);
  REQUIRE(asg.matched == 1);
  Tensor raw = zero_raw(cfg);
  const double K = cfg.grid * cfg.grid * static_cast<double>(cfg.anchors);

  // One positive anchor contributes ln 2; the other K-1 contribute lambda ln 2 each.
  CHECK(objectness_loss(raw, asg, cfg.lambda_no_obj) ==
        doctest::Approx((1 + cfg.lambda_no_obj * (K - 1)) * std::log(2.0)).epsilon(1e-12));
  // All class probabilities sit at 0.5, so C binary terms of ln 2.
  CHECK(classification_loss(raw, asg, cfg) ==
        doctest::Approx(cfg.classes * std::log(2.0)).epsilon(1e-12));

  // Localization equals the box loss of the directly decoded anchor box.
  int cy = -1, cx = -1, a = -1;
  for (int y = 0; y < cfg.grid; ++y)
    for (int x = 0; x < cfg.grid; ++x)
      for (int k = 0; k < cfg.anchors; ++k)
        if (asg.at(y, x, k).has_obj) { cy = y; cx = x; a = k; }
  REQUIRE(cy >= 0);
  Box pred = decode_box(cfg, cy, cx, a, 0, 0, 0, 0);
  CHECK(localization_loss(raw, asg, cfg) ==
        doctest::Approx(ciou_loss(pred, gt.items[0].box)).epsilon(1e-12));
}

TEST_CASE("breakdown matches an independent loop oracle and is additive") {
  DetectorConfig cfg;
  GroundTruthSet gt = two_objects();
  TargetAssignment asg = assign_targets(gt, cfg);
  REQUIRE(asg.matched == 2);
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    Tensor raw = random_raw(cfg, seed);
    LossBreakdown got = total_loss(raw, asg, cfg);
    LossBreakdown want = loop_oracle(raw, asg, cfg);
    CHECK(got.l_obj == doctest::Approx(want.l_obj).epsilon(1e-12));
    CHECK(got.l_loc == doctest::Approx(want.l_loc).epsilon(1e-12));
    CHECK(got.l_cls == doctest::Approx(want.l_cls).epsilon(1e-12));
    CHECK(got.obj_part == doctest::Approx(want.obj_part).epsilon(1e-12));
    CHECK(got.no_obj_part == doctest::Approx(want.no_obj_part).epsilon(1e-12));
    CHECK(got.l_total == doctest::Approx(got.l_obj + got.l_loc + got.l_cls).epsilon(1e-12));
    CHECK(objectness_loss(raw, asg, cfg.lambda_no_obj) == doctest::Approx(got.l_obj));
    CHECK(localization_loss(raw, asg, cfg) == doctest::Approx(got.l_loc));
    CHECK(classification_loss(raw, asg, cfg) == doctest::Approx(got.l_cls));
  }
}

TEST_CASE("objectness loss is affine in the background weight") {
  DetectorConfig cfg;
  TargetAssignment asg = assign_targets(two_objects(), cfg);
  Tensor raw = random_raw(cfg, 9);
  const double l0 = objectness_loss(raw, asg, 0.0);
  const double l1 = objectness_loss(raw, asg, 1.0);
  const double lh = objectness_loss(raw, asg, 0.3);
  CHECK(lh == doctest::Approx(l0 + 0.3 * (l1 - l0)).epsilon(1e-12));
  LossBreakdown b = total_loss(raw, asg, cfg);
  CHECK(l0 == doctest::Approx(b.obj_part).epsilon(1e-12));
  CHECK(l1 - l0 == doctest::Approx(b.no_obj_part).epsilon(1e-10));
}

TEST_CASE("raw-space gradients match finite differences for every selector") {
  DetectorConfig cfg;
  GroundTruthSet gt = two_objects();
  TargetAssignment asg = assign_targets(gt, cfg);
  Tensor raw = random_raw(cfg, 42);
  auto value = [&](const Tensor& r, LossSelector sel) {
    switch (sel) {
      case LossSelector::OBJ: return objectness_loss(r, asg, cfg.lambda_no_obj);
      case LossSelector::LOC: return localization_loss(r, asg, cfg);
      case LossSelector::CLS: return classification_loss(r, asg, cfg);
      default: return total_loss(r, asg, cfg).l_total;
    }
  };
  for (LossSelector sel :
       {LossSelector::OBJ, LossSelector::LOC, LossSelector::CLS, LossSelector::TOTAL}) {
    CAPTURE(to_string(sel));
    Tensor grad = loss_grad_raw(raw, asg, cfg, sel);
    REQUIRE(grad.same_shape(raw));
    Rng rng(1000 + static_cast<int>(sel));
    const double delta = 1e-6;
    for (int k = 0; k < 80; ++k) {
      const std::size_t idx = rng.next_u64() % raw.data.size();
      Tensor hi = raw, lo = raw;
      hi.data[idx] += delta;
      lo.data[idx] -= delta;
      const double fd = (value(hi, sel) - value(lo, sel)) / (2 * delta);
      const double an = grad.data[idx];
      const double denom = std::max({1e-6, std::abs(fd), std::abs(an)});
      const bool close = std::abs(fd - an) < 1e-8 || std::abs(fd - an) / denom < 1e-5;
      CAPTURE(idx);
      CAPTURE(fd);
      CAPTURE(an);
      CHECK(close);
    }
  }
}

TEST_CASE("total gradient equals the sum of the per-task gradients") {
  DetectorConfig cfg;
  TargetAssignment asg = assign_targets(two_objects(), cfg);
  Tensor raw = random_raw(cfg, 13);
  Tensor g_obj = loss_grad_raw(raw, asg, cfg, LossSelector::OBJ);
  Tensor g_loc = loss_grad_raw(raw, asg, cfg, LossSelector::LOC);
  Tensor g_cls = loss_grad_raw(raw, asg, cfg, LossSelector::CLS);
  Tensor g_tot = loss_grad_raw(raw, asg, cfg, LossSelector::TOTAL);
  for (std::size_t i = 0; i < raw.data.size(); ++i)
    CHECK(g_tot.data[i] ==
          doctest::Approx(g_obj.data[i] + g_loc.data[i] + g_cls.data[i]).epsilon(1e-10));
}

TEST_CASE("image-space gradient matches finite differences through the network") {
  DetectorConfig cfg;
  SceneSpec spec;
  Sample s = generate_scene(spec, 31);
  REQUIRE(!s.gt.items.empty());
  Params p = init_params(cfg, 3);
  TargetAssignment asg = assign_targets(s.gt, cfg);
  auto value = [&](const Image& x, LossSelector sel) {
    Tensor raw = forward(p, cfg, x);
    switch (sel) {
      case LossSelector::OBJ: return objectness_loss(raw, asg, cfg.lambda_no_obj);
      case LossSelector::LOC: return localization_loss(raw, asg, cfg);
      case LossSelector::CLS: return classification_loss(raw, asg, cfg);
      default: return total_loss(raw, asg, cfg).l_total;
    }
  };
  for (LossSelector sel :
       {LossSelector::OBJ, LossSelector::LOC, LossSelector::CLS, LossSelector::TOTAL}) {
    CAPTURE(to_string(sel));
    InputGradient ig = input_gradient(p, cfg, s.image, s.gt, sel);
    CHECK(!ig.degenerate);
    REQUIRE(ig.grad.same_shape(s.image));
    Rng rng(500 + static_cast<int>(sel));
    const double delta = 0.1;  // pixel units
    for (int k = 0; k < 40; ++k) {
      const std::size_t idx = rng.next_u64() % s.image.data.size();
      Image hi = s.image, lo = s.image;
      hi.data[idx] += delta;
      lo.data[idx] -= delta;
      const double fd = (value(hi, sel) - value(lo, sel)) / (2 * delta);
      const double an = ig.grad.data[idx];
      const double denom = std::max({1e-6, std::abs(fd), std::abs(an)});
      // Absolute escape covers near-zero gradients where the central
      // difference is dominated by cancellation noise.
      const bool close = std::abs(fd - an) < 2e-8 || std::abs(fd - an) / denom < 1e-4;
      CAPTURE(idx);
      CAPTURE(fd);
      CAPTURE(an);
      CHECK(close);
    }
  }
}

TEST_CASE("object-dependent losses flag scenes with nothing to match") {
  DetectorConfig cfg;
  SceneSpec spec;
  spec.min_objects = 0;
  spec.max_objects = 0;
  Sample s = generate_scene(spec, 1);
  REQUIRE(s.gt.items.empty());
  Params p = init_params(cfg, 3);
  for (LossSelector sel : {LossSelector::LOC, LossSelector::CLS}) {
    InputGradient ig = input_gradient(p, cfg, s.image, s.gt, sel);
    CHECK(ig.degenerate);
    for (double v : ig.grad.data) CHECK(v == 0.0);
  }
  InputGradient obj = input_gradient(p, cfg, s.image, s.gt, LossSelector::OBJ);
  CHECK(!obj.degenerate);
  double mag = 0;
  for (double v : obj.grad.data) mag += std::abs(v);
  CHECK(mag > 0.0);
}

TEST_CASE("selector names round-trip") {
  for (LossSelector sel :
       {LossSelector::OBJ, LossSelector::LOC, LossSelector::CLS, LossSelector::TOTAL})
    CHECK(selector_from_string(to_string(sel)) == sel);
  CHECK_THROWS_AS(selector_from_string("bogus"), ValidationError);
}
