#pragma once

#include "gridadv/core.hpp"

namespace gridadv {

// Axis-aligned box, center/size convention, absolute pixels, origin top-left.
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;

  double x1() const { return cx - w / 2; }
  double y1() const { return cy - h / 2; }
  double x2() const { return cx + w / 2; }
  double y2() const { return cy + h / 2; }
  double area() const { return w * h; }
};

double iou(const Box& a, const Box& b);

// CIoU loss: 1 - IoU + center-distance penalty + aspect-ratio penalty.
// The trade-off factor on the aspect term is treated as a constant during
// differentiation. Throws ValidationError on zero-extent boxes.
double ciou_loss(const Box& pred, const Box& gt);

struct BoxGrad {
  double dcx = 0, dcy = 0, dw = 0, dh = 0;
};

// Analytic gradient of ciou_loss with respect to the predicted box.
BoxGrad ciou_loss_grad(const Box& pred, const Box& gt);

}  // namespace gridadv
