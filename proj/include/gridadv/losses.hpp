#pragma once

#include "gridadv/detector.hpp"

namespace gridadv {

enum class LossSelector { OBJ, LOC, CLS, TOTAL };

std::string to_string(LossSelector s);
LossSelector selector_from_string(const std::string& s);

struct LossBreakdown {
  double l_obj = 0, l_loc = 0, l_cls = 0, l_total = 0;
  double obj_part = 0, no_obj_part = 0;  // l_obj = obj_part + lambda * no_obj_part

  double by_selector(LossSelector s) const {
    switch (s) {
      case LossSelector::OBJ: return l_obj;
      case LossSelector::LOC: return l_loc;
      case LossSelector::CLS: return l_cls;
      case LossSelector::TOTAL: return l_total;
    }
    return l_total;
  }
};

// Binary cross-entropy with probabilities clipped to [1e-7, 1-1e-7].
double bce(double p, double target);

double objectness_loss(const Tensor& raw, const TargetAssignment& asg, double lambda_no_obj);
double localization_loss(const Tensor& raw, const TargetAssignment& asg, const DetectorConfig& config);
double classification_loss(const Tensor& raw, const TargetAssignment& asg, const DetectorConfig& config);
LossBreakdown total_loss(const Tensor& raw, const TargetAssignment& asg, const DetectorConfig& config);

// dLoss/dRaw for the selected loss; same shape as raw.
Tensor loss_grad_raw(const Tensor& raw, const TargetAssignment& asg, const DetectorConfig& config,
                     LossSelector sel);

struct InputGradient {
  Image grad;       // [0,255] pixel units, same shape as the input image
  bool degenerate = false;  // LOC/CLS requested with no assignable objects
};

InputGradient input_gradient(const Params& params, const DetectorConfig& config, const Image& image,
                             const GroundTruthSet& gt, LossSelector sel);

}  // namespace gridadv
