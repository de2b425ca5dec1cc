#pragma once

#include <map>

#include "gridadv/advtrain.hpp"

namespace gridadv {

struct EvalOptions {
  double conf_threshold = 0.005;  // pre-NMS decode threshold
  double nms_iou = 0.45;
  double match_iou = 0.5;  // TP criterion
  double fp_confidence = 0.5;
};

struct EvalResult {
  double map = 0;  // mean over classes that have ground truth
  std::vector<double> per_class_ap;
  std::vector<bool> class_has_gt;
  int n_detections = 0;
  int n_gt = 0;
  int fp_count = 0;  // false positives at the fixed confidence threshold
};

// Pascal-VOC style AP with all-point interpolation, greedy highest-confidence
// matching, one GT matched at most once per image.
double average_precision(const std::vector<std::vector<Detection>>& dets_per_image,
                         const std::vector<GroundTruthSet>& gts, int class_id,
                         double iou_threshold = 0.5);

EvalResult evaluate_detections(const std::vector<std::vector<Detection>>& dets_per_image,
                               const std::vector<GroundTruthSet>& gts, const DetectorConfig& config,
                               const EvalOptions& opt = {});

// Runs the decode -> NMS -> AP pipeline; with an attack spec, adversarial
// inputs are generated white-box against `params` first.
EvalResult evaluate(const Params& params, const DetectorConfig& config, const Dataset& dataset,
                    const std::optional<AttackSpec>& attack = std::nullopt,
                    const EvalOptions& opt = {});

struct DegradationCell {
  AttackMethod method = AttackMethod::FGSM;
  double epsilon = 0;
  LossSelector source = LossSelector::OBJ;
  double attacked_map = 0;
  double delta_map = 0;  // (attacked - clean) * 100, negative when degraded
};

struct DegradationTable {
  double clean_map = 0;
  std::vector<AttackMethod> methods;
  std::vector<double> eps_grid;
  std::vector<LossSelector> sources;
  std::vector<DegradationCell> cells;  // full cross-product, row-major (method, eps, source)

  const DegradationCell& cell(AttackMethod m, double eps, LossSelector s) const;
};

DegradationTable degradation_sweep(const Params& params, const DetectorConfig& config,
                                   const Dataset& dataset, const std::vector<AttackMethod>& methods,
                                   const std::vector<LossSelector>& sources,
                                   const std::vector<double>& eps_grid, int pgd_iterations = 10,
                                   double pgd_step = 1.0, const EvalOptions& opt = {});

struct DefenseRow {
  TrainingVariant variant = TrainingVariant::STD;
  double clean_map = 0;
  std::vector<double> attacked_map;  // one per attack spec
};

struct DefenseTable {
  std::vector<AttackSpec> attacks;
  std::vector<DefenseRow> rows;
};

DefenseTable compare_defenses(const std::map<TrainingVariant, Params>& models,
                              const DetectorConfig& config, const Dataset& dataset,
                              const std::vector<AttackSpec>& attack_specs,
                              const EvalOptions& opt = {});

struct ImageCosines {
  std::string image_id;
  double obj_loc = 0, obj_cls = 0, loc_cls = 0;
};

struct GradientDomainReport {
  std::vector<ImageCosines> per_image;
  double mean_obj_loc = 0, mean_obj_cls = 0, mean_loc_cls = 0;
  double median_obj_loc = 0, median_obj_cls = 0, median_loc_cls = 0;
  // fraction of images where the objectness gradient is closer to both other
  // task gradients than those are to each other
  double obj_bridges_fraction = 0;
  int excluded_empty_gt = 0;
};

// Unit-normalized sign-gradient cosine statistics over the first n_images.
// When export_path is given, writes vectors (float32 rows) + labels sidecar.
GradientDomainReport gradient_domain_analysis(const Params& params, const DetectorConfig& config,
                                              const Dataset& dataset, int n_images,
                                              const std::optional<std::string>& export_path = std::nullopt);

// Report writers (CSV plus a markdown rendering next to it).
void write_degradation_table(const std::string& csv_path, const DegradationTable& table);
void write_defense_table(const std::string& csv_path, const DefenseTable& table);
void write_gradient_report(const std::string& csv_path, const GradientDomainReport& report);

}  // namespace gridadv
