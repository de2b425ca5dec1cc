#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "gridadv/box.hpp"
#include "gridadv/core.hpp"

using namespace gridadv;

TEST_CASE("iou basics") {
  Box a{10, 10, 10, 10};
  CHECK(iou(a, a) == doctest::Approx(1.0));
  Box far{50, 50, 10, 10};
  CHECK(iou(a, far) == 0.0);
  // half-overlap: intersection 50, union 150
  Box b{15, 10, 10, 10};
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK(iou(b, a) == doctest::Approx(iou(a, b)));
}

TEST_CASE("iou rejects degenerate boxes") {
  CHECK_THROWS_AS(iou(Box{0, 0, 0, 1}, Box{0, 0, 1, 1}), ValidationError);
}

TEST_CASE("ciou identical boxes is zero") {
  Box a{30, 40, 12, 18};
  CHECK(ciou_loss(a, a) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ciou disjoint same-shape boxes: hand geometry") {
  // same 10x10 shape, centers 10 apart vertically, touching edges (IoU 0)
  Box p{10, 10, 10, 10};
  Box g{10, 20, 10, 10};
  // enclosing box 10 x 20 -> c^2 = 100 + 400 = 500; v = 0 (equal aspect)
  CHECK(ciou_loss(p, g) == doctest::Approx(1.0 + 100.0 / 500.0).epsilon(1e-9));
}

TEST_CASE("ciou aspect term matches closed form") {
  // concentric, aspect 2:1 vs 1:2
  Box p{50, 50, 20, 10};
  Box g{50, 50, 10, 20};
  const double inter = 10.0 * 10.0;
  const double overlap = inter / (200 + 200 - inter);
  const double diff = std::atan(10.0 / 20.0) - std::atan(20.0 / 10.0);
  const double v = 4.0 / (M_PI * M_PI) * diff * diff;
  const double alpha = v / ((1 - overlap) + v + 1e-12);
  // centers coincide so the distance term vanishes
  CHECK(ciou_loss(p, g) == doctest::Approx(1 - overlap + alpha * v).epsilon(1e-9));
}

namespace {

// CIoU with the aspect trade-off factor frozen at a given value; this is the
// function the analytic gradient differentiates (no gradient through alpha).
double ciou_frozen_alpha(const gridadv::Box& p, const gridadv::Box& g, double alpha) {
  const double ov = iou(p, g);
  const double dx = p.cx - g.cx, dy = p.cy - g.cy;
  const double cw = std::max(p.x2(), g.x2()) - std::min(p.x1(), g.x1());
  const double ch = std::max(p.y2(), g.y2()) - std::min(p.y1(), g.y1());
  const double diff = std::atan(g.w / g.h) - std::atan(p.w / p.h);
  const double v = 4.0 / (M_PI * M_PI) * diff * diff;
  return 1 - ov + (dx * dx + dy * dy) / (cw * cw + ch * ch) + alpha * v;
}

}  // namespace

TEST_CASE("ciou analytic gradient matches central differences") {
  Rng rng(42);
  int checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Box g{rng.uniform(20, 80), rng.uniform(20, 80), rng.uniform(8, 40), rng.uniform(8, 40)};
    Box p{rng.uniform(20, 80), rng.uniform(20, 80), rng.uniform(8, 40), rng.uniform(8, 40)};
    const double ov = iou(p, g);
    const double diff = std::atan(g.w / g.h) - std::atan(p.w / p.h);
    const double v = 4.0 / (M_PI * M_PI) * diff * diff;
    const double alpha = v / ((1 - ov) + v + 1e-12);
    BoxGrad an = ciou_loss_grad(p, g);
    const double eps = 1e-6;
    double* fields[4] = {&p.cx, &p.cy, &p.w, &p.h};
    double grads[4] = {an.dcx, an.dcy, an.dw, an.dh};
    for (int f = 0; f < 4; ++f) {
      const double saved = *fields[f];
      *fields[f] = saved + eps;
      const double hi = ciou_frozen_alpha(p, g, alpha);
      *fields[f] = saved - eps;
      const double lo = ciou_frozen_alpha(p, g, alpha);
      *fields[f] = saved;
      const double fd = (hi - lo) / (2 * eps);
      const double denom = std::max({1e-6, std::abs(fd), std::abs(grads[f])});
      const bool close = std::abs(fd - grads[f]) < 1e-9 || std::abs(fd - grads[f]) / denom < 1e-5;
      CHECK(close);
      ++checked;
    }
  }
  CHECK(checked == 200);
}

TEST_CASE("ciou bounds on in-image boxes") {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    auto sample = [&] {
      double w = rng.uniform(4, 90);
      double h = rng.uniform(4, 90);
      return Box{w / 2 + rng.uniform() * (96 - w), h / 2 + rng.uniform() * (96 - h), w, h};
    };
    Box p = sample(), g = sample();
    const double l = ciou_loss(p, g);
    CHECK(l >= 0.0);
    CHECK(l < 3.0);
  }
}
