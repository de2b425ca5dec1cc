#include "gridadv/losses.hpp"

#include <algorithm>
#include <cmath>

namespace gridadv {

std::string to_string(LossSelector s) {
  switch (s) {
    case LossSelector::OBJ: return "obj";
    case LossSelector::LOC: return "loc";
    case LossSelector::CLS: return "cls";
    case LossSelector::TOTAL: return "total";
  }
  return "total";
}

LossSelector selector_from_string(const std::string& s) {
  if (s == "obj") return LossSelector::OBJ;
  if (s == "loc") return LossSelector::LOC;
  if (s == "cls") return LossSelector::CLS;
  if (s == "total") return LossSelector::TOTAL;
  throw ValidationError("unknown loss selector: " + s);
}

namespace {
constexpr double kProbClamp = 1e-7;

double clamp_p(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

// d(BCE)/d(logit); zero where the probability clamp is active.
double bce_grad_logit(double logit, double target) {
  const double p = sigmoid(logit);
  if (p < kProbClamp || p > 1.0 - kProbClamp) return 0.0;
  return p - target;
}
}  // namespace

double bce(double p, double target) {
  const double q = clamp_p(p);
  return -(target * std::log(q) + (1.0 - target) * std::log(1.0 - q));
}

double objectness_loss(const Tensor& raw, const TargetAssignment& asg, double lambda_no_obj) {
  double obj_part = 0, no_obj_part = 0;
  const int S = asg.grid, A = asg.anchors;
  for (int cy = 0; cy < S; ++cy)
    for (int cx = 0; cx < S; ++cx)
      for (int a = 0; a < A; ++a) {
        const double p = sigmoid(raw.at(cy, cx, a, 0));
        if (asg.at(cy, cx, a).has_obj)
          obj_part += bce(p, 1.0);
        else
          no_obj_part += bce(p, 0.0);
      }
  return obj_part + lambda_no_obj * no_obj_part;
}

double localization_loss(const Tensor& raw, const TargetAssignment& asg,
                         const DetectorConfig& config) {
  double loss = 0;
  for (int cy = 0; cy < asg.grid; ++cy)
    for (int cx = 0; cx < asg.grid; ++cx)
      for (int a = 0; a < asg.anchors; ++a) {
        const AnchorTarget& t = asg.at(cy, cx, a);
        if (!t.has_obj) continue;
        Box pred = decode_box(config, cy, cx, a, raw.at(cy, cx, a, 1), raw.at(cy, cx, a, 2),
                              raw.at(cy, cx, a, 3), raw.at(cy, cx, a, 4));
        loss += ciou_loss(pred, t.box);
      }
  return loss;
}

double classification_loss(const Tensor& raw, const TargetAssignment& asg,
                           const DetectorConfig& config) {
  double loss = 0;
  for (int cy = 0; cy < asg.grid; ++cy)
    for (int cx = 0; cx < asg.grid; ++cx)
      for (int a = 0; a < asg.anchors; ++a) {
        const AnchorTarget& t = asg.at(cy, cx, a);
        if (!t.has_obj) continue;
        for (int c = 0; c < config.classes; ++c) {
          const double target = (c == t.class_id) ? 1.0 : 0.0;
          loss += bce(sigmoid(raw.at(cy, cx, a, 5 + c)), target);
        }
      }
  return loss;
}

LossBreakdown total_loss(const Tensor& raw, const TargetAssignment& asg,
                         const DetectorConfig& config) {
  LossBreakdown b;
  const int S = asg.grid, A = asg.anchors;
  for (int cy = 0; cy < S; ++cy)
    for (int cx = 0; cx < S; ++cx)
      for (int a = 0; a < A; ++a) {
        const double p = sigmoid(raw.at(cy, cx, a, 0));
        if (asg.at(cy, cx, a).has_obj)
          b.obj_part += bce(p, 1.0);
        else
          b.no_obj_part += bce(p, 0.0);
      }
  b.l_obj = b.obj_part + config.lambda_no_obj * b.no_obj_part;
  b.l_loc = localization_loss(raw, asg, config);
  b.l_cls = classification_loss(raw, asg, config);
  b.l_total = b.l_obj + b.l_loc + b.l_cls;
  return b;
}

Tensor loss_grad_raw(const Tensor& raw, const TargetAssignment& asg, const DetectorConfig& config,
                     LossSelector sel) {
  Tensor g(raw.shape);
  const bool want_obj = sel == LossSelector::OBJ || sel == LossSelector::TOTAL;
  const bool want_loc = sel == LossSelector::LOC || sel == LossSelector::TOTAL;
  const bool want_cls = sel == LossSelector::CLS || sel == LossSelector::TOTAL;
  const double cell = config.cell_pixels();

  for (int cy = 0; cy < asg.grid; ++cy)
    for (int cx = 0; cx < asg.grid; ++cx)
      for (int a = 0; a < asg.anchors; ++a) {
        const AnchorTarget& t = asg.at(cy, cx, a);
        if (want_obj) {
          const double target = t.has_obj ? 1.0 : 0.0;
          const double w = t.has_obj ? 1.0 : config.lambda_no_obj;
          g.at(cy, cx, a, 0) += w * bce_grad_logit(raw.at(cy, cx, a, 0), target);
        }
        if (!t.has_obj) continue;
        if (want_loc) {
          const double tx = raw.at(cy, cx, a, 1), ty = raw.at(cy, cx, a, 2);
          const double tw = raw.at(cy, cx, a, 3), th = raw.at(cy, cx, a, 4);
          Box pred = decode_box(config, cy, cx, a, tx, ty, tw, th);
          BoxGrad bg = ciou_loss_grad(pred, t.box);
          const double sx = sigmoid(tx), sy = sigmoid(ty);
          g.at(cy, cx, a, 1) += bg.dcx * cell * sx * (1 - sx);
          g.at(cy, cx, a, 2) += bg.dcy * cell * sy * (1 - sy);
          // w = prior * exp(tw) with tw clamped to [-8, 8]
          if (std::abs(tw) < 8.0) g.at(cy, cx, a, 3) += bg.dw * pred.w;
          if (std::abs(th) < 8.0) g.at(cy, cx, a, 4) += bg.dh * pred.h;
        }
        if (want_cls) {
          for (int c = 0; c < config.classes; ++c) {
            const double target = (c == t.class_id) ? 1.0 : 0.0;
            g.at(cy, cx, a, 5 + c) += bce_grad_logit(raw.at(cy, cx, a, 5 + c), target);
          }
        }
      }
  return g;
}

InputGradient input_gradient(const Params& params, const DetectorConfig& config, const Image& image,
                             const GroundTruthSet& gt, LossSelector sel) {
  TargetAssignment asg = assign_targets(gt, config);
  InputGradient out;
  if ((sel == LossSelector::LOC || sel == LossSelector::CLS) && asg.matched == 0) {
    out.grad = Image(image.shape);
    out.degenerate = true;
    return out;
  }
  ForwardCache cache;
  Tensor raw = forward(params, config, image, &cache);
  Tensor graw = loss_grad_raw(raw, asg, config, sel);
  out.grad = backward_input(params, config, cache, graw);
  return out;
}

}  // namespace gridadv
