#include "gridadv/box.hpp"

#include <algorithm>
#include <cmath>

namespace gridadv {

namespace {
constexpr double kAspectScale = 4.0 / (M_PI * M_PI);

void check_extents(const Box& b, const char* who) {
  if (!(b.w > 0) || !(b.h > 0)) {
    throw ValidationError(std::string(who) + " box has non-positive extent");
  }
}
}  // namespace

double iou(const Box& a, const Box& b) {
  check_extents(a, "first");
  check_extents(b, "second");
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

double ciou_loss(const Box& pred, const Box& gt) {
  check_extents(pred, "predicted");
  check_extents(gt, "ground-truth");
  const double overlap = iou(pred, gt);

  const double dx = pred.cx - gt.cx;
  const double dy = pred.cy - gt.cy;
  const double rho2 = dx * dx + dy * dy;
  const double cw = std::max(pred.x2(), gt.x2()) - std::min(pred.x1(), gt.x1());
  const double ch = std::max(pred.y2(), gt.y2()) - std::min(pred.y1(), gt.y1());
  const double c2 = cw * cw + ch * ch;

  const double diff = std::atan(gt.w / gt.h) - std::atan(pred.w / pred.h);
  const double v = kAspectScale * diff * diff;
  const double alpha = v / ((1.0 - overlap) + v + 1e-12);

  return 1.0 - overlap + rho2 / c2 + alpha * v;
}

BoxGrad ciou_loss_grad(const Box& pred, const Box& gt) {
  check_extents(pred, "predicted");
  check_extents(gt, "ground-truth");

  const double x1p = pred.x1(), x2p = pred.x2(), y1p = pred.y1(), y2p = pred.y2();
  const double x1g = gt.x1(), x2g = gt.x2(), y1g = gt.y1(), y2g = gt.y2();

  // IoU and its gradient, tracking which box owns each active edge.
  const double iw = std::min(x2p, x2g) - std::max(x1p, x1g);
  const double ih = std::min(y2p, y2g) - std::max(y1p, y1g);
  const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
  const double uni = pred.area() + gt.area() - inter;
  const double overlap = inter / uni;

  double dI_dcx = 0, dI_dcy = 0, dI_dw = 0, dI_dh = 0;
  if (inter > 0) {
    const double l_active = (x1p > x1g) ? 1.0 : 0.0;  // pred edge bounds the intersection
    const double r_active = (x2p < x2g) ? 1.0 : 0.0;
    const double t_active = (y1p > y1g) ? 1.0 : 0.0;
    const double b_active = (y2p < y2g) ? 1.0 : 0.0;
    const double diw_dcx = r_active - l_active;
    const double diw_dw = 0.5 * (r_active + l_active);
    const double dih_dcy = b_active - t_active;
    const double dih_dh = 0.5 * (b_active + t_active);
    dI_dcx = ih * diw_dcx;
    dI_dw = ih * diw_dw;
    dI_dcy = iw * dih_dcy;
    dI_dh = iw * dih_dh;
  }
  const double dA_dw = pred.h, dA_dh = pred.w;
  const double u2 = uni * uni;
  // dIoU = (dI*U - I*dU)/U^2 with dU = dA - dI
  const double dIoU_dcx = (dI_dcx * uni + inter * dI_dcx) / u2;
  const double dIoU_dcy = (dI_dcy * uni + inter * dI_dcy) / u2;
  const double dIoU_dw = (dI_dw * uni - inter * (dA_dw - dI_dw)) / u2;
  const double dIoU_dh = (dI_dh * uni - inter * (dA_dh - dI_dh)) / u2;

  // Center-distance term.
  const double dx = pred.cx - gt.cx;
  const double dy = pred.cy - gt.cy;
  const double rho2 = dx * dx + dy * dy;
  const double cw = std::max(x2p, x2g) - std::min(x1p, x1g);
  const double ch = std::max(y2p, y2g) - std::min(y1p, y1g);
  const double c2 = cw * cw + ch * ch;

  const double el = (x1p < x1g) ? 1.0 : 0.0;  // pred edge is the enclosing edge
  const double er = (x2p > x2g) ? 1.0 : 0.0;
  const double et = (y1p < y1g) ? 1.0 : 0.0;
  const double eb = (y2p > y2g) ? 1.0 : 0.0;
  const double dcw_dcx = er - el;
  const double dcw_dw = 0.5 * (er + el);
  const double dch_dcy = eb - et;
  const double dch_dh = 0.5 * (eb + et);

  const double c4 = c2 * c2;
  auto center_term = [&](double drho2, double dc2) { return (drho2 * c2 - rho2 * dc2) / c4; };
  const double dT2_dcx = center_term(2 * dx, 2 * cw * dcw_dcx);
  const double dT2_dcy = center_term(2 * dy, 2 * ch * dch_dcy);
  const double dT2_dw = center_term(0.0, 2 * cw * dcw_dw);
  const double dT2_dh = center_term(0.0, 2 * ch * dch_dh);

  // Aspect-ratio term; the trade-off factor is held constant.
  const double diff = std::atan(gt.w / gt.h) - std::atan(pred.w / pred.h);
  const double v = kAspectScale * diff * diff;
  const double alpha = v / ((1.0 - overlap) + v + 1e-12);
  const double wh2 = pred.w * pred.w + pred.h * pred.h;
  const double dv_dw = -2.0 * kAspectScale * diff * pred.h / wh2;
  const double dv_dh = 2.0 * kAspectScale * diff * pred.w / wh2;

  BoxGrad g;
  g.dcx = -dIoU_dcx + dT2_dcx;
  g.dcy = -dIoU_dcy + dT2_dcy;
  g.dw = -dIoU_dw + dT2_dw + alpha * dv_dw;
  g.dh = -dIoU_dh + dT2_dh + alpha * dv_dh;
  return g;
}

}  // namespace gridadv
