#include "gridadv/evalreport.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace fs = std::filesystem;

namespace gridadv {

namespace {

struct FlatDet {
  int image = 0;
  double confidence = 0;
  Box box;
};

// Greedy matching shared by AP and FP counting. Returns per-detection TP flags
// for detections of one class, processed in descending confidence.
std::vector<char> match_detections(const std::vector<FlatDet>& dets,
                                   const std::vector<std::vector<Box>>& gt_boxes,
                                   double iou_threshold) {
  std::vector<std::vector<char>> used(gt_boxes.size());
  for (std::size_t i = 0; i < gt_boxes.size(); ++i) used[i].assign(gt_boxes[i].size(), 0);
  std::vector<char> tp(dets.size(), 0);
  for (std::size_t d = 0; d < dets.size(); ++d) {
    const auto& boxes = gt_boxes[dets[d].image];
    int best = -1;
    double best_iou = iou_threshold;
    for (std::size_t g = 0; g < boxes.size(); ++g) {
      if (used[dets[d].image][g]) continue;
      const double v = iou(dets[d].box, boxes[g]);
      if (v >= best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      tp[d] = 1;
      used[dets[d].image][best] = 1;
    }
  }
  return tp;
}

std::vector<FlatDet> flatten_class(const std::vector<std::vector<Detection>>& dets_per_image,
                                   int class_id) {
  std::vector<FlatDet> flat;
  for (std::size_t i = 0; i < dets_per_image.size(); ++i)
    for (const auto& d : dets_per_image[i])
      if (d.class_id == class_id) flat.push_back({static_cast<int>(i), d.confidence, d.box});
  std::stable_sort(flat.begin(), flat.end(),
                   [](const FlatDet& a, const FlatDet& b) { return a.confidence > b.confidence; });
  return flat;
}

std::vector<std::vector<Box>> class_gt_boxes(const std::vector<GroundTruthSet>& gts, int class_id) {
  std::vector<std::vector<Box>> out(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i)
    for (const auto& g : gts[i].items)
      if (g.class_id == class_id) out[i].push_back(g.box);
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

double average_precision(const std::vector<std::vector<Detection>>& dets_per_image,
                         const std::vector<GroundTruthSet>& gts, int class_id,
                         double iou_threshold) {
  auto gt_boxes = class_gt_boxes(gts, class_id);
  int n_gt = 0;
  for (const auto& b : gt_boxes) n_gt += static_cast<int>(b.size());
  if (n_gt == 0) throw ValidationError("AP undefined: class has no ground-truth instances");

  auto flat = flatten_class(dets_per_image, class_id);
  if (flat.empty()) return 0.0;
  auto tp = match_detections(flat, gt_boxes, iou_threshold);

  // all-point interpolation: area under the precision envelope
  std::vector<double> recall(flat.size()), precision(flat.size());
  int tp_cum = 0;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    tp_cum += tp[i];
    recall[i] = static_cast<double>(tp_cum) / n_gt;
    precision[i] = static_cast<double>(tp_cum) / static_cast<double>(i + 1);
  }
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0;
  double prev_recall = 0;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

EvalResult evaluate_detections(const std::vector<std::vector<Detection>>& dets_per_image,
                               const std::vector<GroundTruthSet>& gts, const DetectorConfig& config,
                               const EvalOptions& opt) {
  EvalResult res;
  res.per_class_ap.assign(config.classes, 0.0);
  res.class_has_gt.assign(config.classes, false);
  double ap_sum = 0;
  int defined = 0;
  for (int c = 0; c < config.classes; ++c) {
    auto gt_boxes = class_gt_boxes(gts, c);
    int n_gt = 0;
    for (const auto& b : gt_boxes) n_gt += static_cast<int>(b.size());
    if (n_gt == 0) continue;  // AP undefined for this class; excluded from mAP
    res.class_has_gt[c] = true;
    res.per_class_ap[c] = average_precision(dets_per_image, gts, c, opt.match_iou);
    ap_sum += res.per_class_ap[c];
    ++defined;

    // false positives among confident detections of this class
    auto flat = flatten_class(dets_per_image, c);
    auto tp = match_detections(flat, gt_boxes, opt.match_iou);
    for (std::size_t i = 0; i < flat.size(); ++i)
      if (!tp[i] && flat[i].confidence >= opt.fp_confidence) ++res.fp_count;
  }
  res.map = defined > 0 ? ap_sum / defined : 0.0;
  for (const auto& dets : dets_per_image) res.n_detections += static_cast<int>(dets.size());
  for (const auto& gt : gts) res.n_gt += static_cast<int>(gt.items.size());
  return res;
}

EvalResult evaluate(const Params& params, const DetectorConfig& config, const Dataset& dataset,
                    const std::optional<AttackSpec>& attack, const EvalOptions& opt) {
  std::vector<std::vector<Detection>> dets_per_image;
  std::vector<GroundTruthSet> gts;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Sample& s = dataset[i];
    Image input = s.image;
    if (attack) {
      AttackSpec per = *attack;
      per.seed = attack->seed + static_cast<std::uint64_t>(i);
      input = run_attack(params, config, s.image, s.gt, per).image;
    }
    Tensor raw = forward(params, config, input);
    dets_per_image.push_back(nms(decode(raw, config, opt.conf_threshold), opt.nms_iou));
    gts.push_back(s.gt);
  }
  return evaluate_detections(dets_per_image, gts, config, opt);
}

const DegradationCell& DegradationTable::cell(AttackMethod m, double eps, LossSelector s) const {
  for (const auto& c : cells)
    if (c.method == m && c.epsilon == eps && c.source == s) return c;
  throw ValidationError("degradation cell not found");
}

DegradationTable degradation_sweep(const Params& params, const DetectorConfig& config,
                                   const Dataset& dataset, const std::vector<AttackMethod>& methods,
                                   const std::vector<LossSelector>& sources,
                                   const std::vector<double>& eps_grid, int pgd_iterations,
                                   double pgd_step, const EvalOptions& opt) {
  if (methods.empty() || sources.empty() || eps_grid.empty())
    throw ValidationError("degradation sweep grid must be non-empty");
  DegradationTable table;
  table.methods = methods;
  table.eps_grid = eps_grid;
  table.sources = sources;
  table.clean_map = evaluate(params, config, dataset, std::nullopt, opt).map;
  for (AttackMethod m : methods) {
    for (double eps : eps_grid) {
      for (LossSelector src : sources) {
        AttackSpec spec = (m == AttackMethod::FGSM)
                              ? AttackSpec::fgsm_spec(src, eps)
                              : AttackSpec::pgd_spec(src, eps, pgd_step, pgd_iterations);
        DegradationCell cell;
        cell.method = m;
        cell.epsilon = eps;
        cell.source = src;
        try {
          cell.attacked_map = evaluate(params, config, dataset, spec, opt).map;
        } catch (const std::exception& e) {
          throw ValidationError("sweep cell (" + to_string(m) + ", eps=" + std::to_string(eps) +
                                ", " + to_string(src) + ") failed: " + e.what());
        }
        cell.delta_map = (cell.attacked_map - table.clean_map) * 100.0;
        table.cells.push_back(cell);
      }
    }
  }
  return table;
}

DefenseTable compare_defenses(const std::map<TrainingVariant, Params>& models,
                              const DetectorConfig& config, const Dataset& dataset,
                              const std::vector<AttackSpec>& attack_specs, const EvalOptions& opt) {
  if (models.size() < 2) throw ValidationError("compare_defenses needs at least 2 models");
  DefenseTable table;
  table.attacks = attack_specs;
  for (const auto& [variant, params] : models) {
    DefenseRow row;
    row.variant = variant;
    row.clean_map = evaluate(params, config, dataset, std::nullopt, opt).map;
    for (const auto& spec : attack_specs)
      row.attacked_map.push_back(evaluate(params, config, dataset, spec, opt).map);
    table.rows.push_back(std::move(row));
  }
  return table;
}

GradientDomainReport gradient_domain_analysis(const Params& params, const DetectorConfig& config,
                                              const Dataset& dataset, int n_images,
                                              const std::optional<std::string>& export_path) {
  if (n_images < 1) throw ValidationError("n_images must be >= 1");
  const int n = std::min<int>(n_images, static_cast<int>(dataset.size()));
  GradientDomainReport rep;

  std::vector<std::vector<float>> export_rows;
  std::vector<std::string> export_labels;
  std::size_t dim = 0;

  for (int i = 0; i < n; ++i) {
    const Sample& s = dataset[i];
    if (s.gt.items.empty()) {
      ++rep.excluded_empty_gt;
      continue;
    }
    std::vector<std::vector<double>> vecs;
    const LossSelector tasks[3] = {LossSelector::OBJ, LossSelector::LOC, LossSelector::CLS};
    for (LossSelector t : tasks) {
      InputGradient g = input_gradient(params, config, s.image, s.gt, t);
      std::vector<double> v(g.grad.data.size());
      double norm2 = 0;
      for (std::size_t k = 0; k < v.size(); ++k) {
        v[k] = g.grad.data[k] > 0 ? 1.0 : (g.grad.data[k] < 0 ? -1.0 : 0.0);
        norm2 += v[k] * v[k];
      }
      const double norm = std::sqrt(norm2);
      if (norm > 0)
        for (auto& x : v) x /= norm;
      dim = v.size();
      if (export_path) {
        export_rows.emplace_back(v.begin(), v.end());
        export_labels.push_back(s.id + "," + to_string(t));
      }
      vecs.push_back(std::move(v));
    }
    auto cosine = [](const std::vector<double>& a, const std::vector<double>& b) {
      return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);  // unit vectors
    };
    ImageCosines c;
    c.image_id = s.id;
    c.obj_loc = cosine(vecs[0], vecs[1]);
    c.obj_cls = cosine(vecs[0], vecs[2]);
    c.loc_cls = cosine(vecs[1], vecs[2]);
    rep.per_image.push_back(c);
  }

  std::vector<double> ol, oc, lc;
  int bridges = 0;
  for (const auto& c : rep.per_image) {
    ol.push_back(c.obj_loc);
    oc.push_back(c.obj_cls);
    lc.push_back(c.loc_cls);
    if (std::min(c.obj_loc, c.obj_cls) > c.loc_cls) ++bridges;
  }
  const double cnt = std::max<std::size_t>(1, rep.per_image.size());
  rep.mean_obj_loc = std::accumulate(ol.begin(), ol.end(), 0.0) / cnt;
  rep.mean_obj_cls = std::accumulate(oc.begin(), oc.end(), 0.0) / cnt;
  rep.mean_loc_cls = std::accumulate(lc.begin(), lc.end(), 0.0) / cnt;
  rep.median_obj_loc = median(ol);
  rep.median_obj_cls = median(oc);
  rep.median_loc_cls = median(lc);
  rep.obj_bridges_fraction = rep.per_image.empty() ? 0.0 : static_cast<double>(bridges) / rep.per_image.size();

  if (export_path && !export_rows.empty()) {
    Tensor t({static_cast<int>(export_rows.size()), static_cast<int>(dim)});
    for (std::size_t r = 0; r < export_rows.size(); ++r)
      for (std::size_t k = 0; k < dim; ++k) t.at(static_cast<int>(r), static_cast<int>(k)) = export_rows[r][k];
    save_tensor_f32(*export_path, t);
    std::ofstream labels(*export_path + ".labels.csv");
    labels << "row,image,task\n";
    for (std::size_t r = 0; r < export_labels.size(); ++r) labels << r << "," << export_labels[r] << "\n";
    if (!labels) throw IoError("failed writing vector labels sidecar");
  }
  return rep;
}

namespace {
std::string md_path_for(const std::string& csv_path) {
  fs::path p(csv_path);
  p.replace_extension(".md");
  return p.string();
}
}  // namespace

void write_degradation_table(const std::string& csv_path, const DegradationTable& table) {
  std::ofstream csv(csv_path);
  csv << "method,epsilon,source,attacked_map,delta_map\n";
  char buf[128];
  for (const auto& c : table.cells) {
    std::snprintf(buf, sizeof(buf), "%s,%g,%s,%.6f,%.4f\n", to_string(c.method).c_str(), c.epsilon,
                  to_string(c.source).c_str(), c.attacked_map, c.delta_map);
    csv << buf;
  }
  if (!csv) throw IoError("failed writing " + csv_path);

  std::ofstream md(md_path_for(csv_path));
  std::snprintf(buf, sizeof(buf), "Clean mAP: %.2f\n\n", table.clean_map * 100);
  md << buf << "| method | eps |";
  for (auto s : table.sources) md << " d_mAP(" << to_string(s) << ") |";
  md << "\n|---|---|";
  for (std::size_t i = 0; i < table.sources.size(); ++i) md << "---|";
  md << "\n";
  for (auto m : table.methods) {
    for (double eps : table.eps_grid) {
      md << "| " << to_string(m) << " | " << eps << " |";
      for (auto s : table.sources) {
        std::snprintf(buf, sizeof(buf), " %.2f |", table.cell(m, eps, s).delta_map);
        md << buf;
      }
      md << "\n";
    }
  }
  if (!md) throw IoError("failed writing markdown for " + csv_path);
}

void write_defense_table(const std::string& csv_path, const DefenseTable& table) {
  std::ofstream csv(csv_path);
  csv << "variant,clean_map";
  for (const auto& a : table.attacks) csv << "," << a.label();
  csv << "\n";
  char buf[64];
  for (const auto& r : table.rows) {
    csv << to_string(r.variant);
    std::snprintf(buf, sizeof(buf), ",%.6f", r.clean_map);
    csv << buf;
    for (double v : r.attacked_map) {
      std::snprintf(buf, sizeof(buf), ",%.6f", v);
      csv << buf;
    }
    csv << "\n";
  }
  if (!csv) throw IoError("failed writing " + csv_path);

  std::ofstream md(md_path_for(csv_path));
  md << "| model | clean |";
  for (const auto& a : table.attacks) md << " " << a.label() << " |";
  md << "\n|---|---|";
  for (std::size_t i = 0; i < table.attacks.size(); ++i) md << "---|";
  md << "\n";
  for (const auto& r : table.rows) {
    md << "| m_" << to_string(r.variant) << " |";
    std::snprintf(buf, sizeof(buf), " %.2f |", r.clean_map * 100);
    md << buf;
    for (double v : r.attacked_map) {
      std::snprintf(buf, sizeof(buf), " %.2f |", v * 100);
      md << buf;
    }
    md << "\n";
  }
  if (!md) throw IoError("failed writing markdown for " + csv_path);
}

void write_gradient_report(const std::string& csv_path, const GradientDomainReport& report) {
  std::ofstream csv(csv_path);
  csv << "image,cos_obj_loc,cos_obj_cls,cos_loc_cls\n";
  char buf[160];
  for (const auto& c : report.per_image) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f\n", c.image_id.c_str(), c.obj_loc, c.obj_cls,
                  c.loc_cls);
    csv << buf;
  }
  if (!csv) throw IoError("failed writing " + csv_path);

  std::ofstream md(md_path_for(csv_path));
  md << "| pair | mean | median |\n|---|---|---|\n";
  std::snprintf(buf, sizeof(buf), "| obj-loc | %.4f | %.4f |\n", report.mean_obj_loc, report.median_obj_loc);
  md << buf;
  std::snprintf(buf, sizeof(buf), "| obj-cls | %.4f | %.4f |\n", report.mean_obj_cls, report.median_obj_cls);
  md << buf;
  std::snprintf(buf, sizeof(buf), "| loc-cls | %.4f | %.4f |\n", report.mean_loc_cls, report.median_loc_cls);
  md << buf;
  std::snprintf(buf, sizeof(buf), "\nobj bridges both domains on %.1f%% of images (%d excluded, empty GT)\n",
                report.obj_bridges_fraction * 100, report.excluded_empty_gt);
  md << buf;
  if (!md) throw IoError("failed writing markdown for " + csv_path);
}

}  // namespace gridadv
