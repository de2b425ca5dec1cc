#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gridadv/evalreport.hpp"

using namespace gridadv;
namespace fs = std::filesystem;

namespace {

Detection det(const Box& b, int cls, double conf) { return Detection{b, cls, conf}; }

// Three images, one class, five detections; every precision/recall point is
// enumerable by hand.
//   img0 GT: G1, G2   img1 GT: G3   img2 GT: none        (3 ground truths)
//   conf 0.9 img0 hits G1   -> TP   P=1/1 R=1/3
//   conf 0.8 img2 anywhere  -> FP   P=1/2 R=1/3
//   conf 0.7 img0 hits G2   -> TP   P=2/3 R=2/3
//   conf 0.6 img1 hits G3   -> TP   P=3/4 R=3/3
//   conf 0.5 img0 hits G1   -> FP (G1 already matched)  P=3/5 R=1
// All-point interpolation: 1*(1/3) + 3/4*(1/3) + 3/4*(1/3) = 5/6.
struct HandCase {
  std::vector<std::vector<Detection>> dets;
  std::vector<GroundTruthSet> gts;
};

HandCase hand_case() {
  const Box g1{20, 20, 10, 10}, g2{60, 60, 12, 12}, g3{40, 40, 14, 14};
  const Box far{80, 20, 8, 8};
  HandCase c;
  c.gts.resize(3);
  c.gts[0].items = {{0, g1}, {0, g2}};
  c.gts[1].items = {{0, g3}};
  c.dets.resize(3);
  c.dets[0] = {det(g1, 0, 0.9), det(g2, 0, 0.7), det(g1, 0, 0.5)};
  c.dets[1] = {det(g3, 0, 0.6)};
  c.dets[2] = {det(far, 0, 0.8)};
  return c;
}

}  // namespace

TEST_CASE("average precision matches the hand-enumerated case exactly") {
  HandCase c = hand_case();
  CHECK(average_precision(c.dets, c.gts, 0) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("perfect detections score one, hopeless ones score zero") {
  const Box g{30, 30, 12, 12};
  std::vector<GroundTruthSet> gts(2);
  gts[0].items = {{1, g}};
  gts[1].items = {{1, Box{70, 70, 10, 10}}};
  std::vector<std::vector<Detection>> perfect(2);
  perfect[0] = {det(g, 1, 0.9)};
  perfect[1] = {det(Box{70, 70, 10, 10}, 1, 0.8)};
  CHECK(average_precision(perfect, gts, 1) == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<std::vector<Detection>> wrong(2);
  wrong[0] = {det(Box{80, 80, 6, 6}, 1, 0.9)};  // IoU 0 with every GT
  wrong[1] = {};
  CHECK(average_precision(wrong, gts, 1) == 0.0);

  std::vector<std::vector<Detection>> none(2);
  CHECK(average_precision(none, gts, 1) == 0.0);
}

TEST_CASE("a duplicate hit on an already-matched object counts as a false positive") {
  const Box g{30, 30, 12, 12};
  std::vector<GroundTruthSet> gts(1);
  gts[0].items = {{0, g}};
  std::vector<std::vector<Detection>> dets(1);
  dets[0] = {det(g, 0, 0.9), det(g, 0, 0.8)};
  // P/R points: (1, 1) then (1/2, 1); envelope is 1 everywhere up to r=1.
  CHECK(average_precision(dets, gts, 0) == doctest::Approx(1.0).epsilon(1e-12));
  // Reversed: the greedy match still goes to the higher-confidence one first.
  dets[0] = {det(g, 0, 0.8), det(g, 0, 0.9)};
  CHECK(average_precision(dets, gts, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("classes without ground truth are excluded from the mean") {
  DetectorConfig cfg;
  HandCase c = hand_case();  // only class 0 has GT
  EvalResult r = evaluate_detections(c.dets, c.gts, cfg);
  REQUIRE(r.per_class_ap.size() == static_cast<std::size_t>(cfg.classes));
  CHECK(r.class_has_gt[0]);
  CHECK(!r.class_has_gt[1]);
  CHECK(!r.class_has_gt[2]);
  CHECK(r.map == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(r.n_gt == 3);
  CHECK(r.n_detections == 5);
  // Detections at conf >= 0.5 that matched nothing: the img2 one and the duplicate.
  CHECK(r.fp_count == 2);
}

TEST_CASE("mean is taken over the classes that do have ground truth") {
  DetectorConfig cfg;
  const Box a{25, 25, 10, 10}, b{70, 40, 12, 12};
  std::vector<GroundTruthSet> gts(1);
  gts[0].items = {{0, a}, {2, b}};
  std::vector<std::vector<Detection>> dets(1);
  dets[0] = {det(a, 0, 0.9), det(Box{50, 80, 8, 8}, 2, 0.8)};  // class 2 missed
  EvalResult r = evaluate_detections(dets, gts, cfg);
  CHECK(r.per_class_ap[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.per_class_ap[2] == 0.0);
  CHECK(r.map == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("full pipeline: zero-budget attack reproduces the clean evaluation") {
  DetectorConfig cfg;
  Params p = init_params(cfg, 6);
  SceneSpec spec;
  Dataset ds;
  for (int i = 0; i < 5; ++i) {
    ds.push_back(generate_scene(spec, 700 + i));
    ds.back().id = "e" + std::to_string(i);
  }
  EvalResult clean = evaluate(p, cfg, ds);
  EvalResult again = evaluate(p, cfg, ds);
  CHECK(clean.map == again.map);  // bitwise deterministic
  AttackSpec zero = AttackSpec::pgd_spec(LossSelector::OBJ, 0.0);
  EvalResult attacked = evaluate(p, cfg, ds, zero);
  CHECK(attacked.map == clean.map);
  CHECK(attacked.fp_count == clean.fp_count);
  CHECK(attacked.n_detections == clean.n_detections);
}

TEST_CASE("degradation sweep layout, zero row, and cell lookup") {
  DetectorConfig cfg;
  Params p = init_params(cfg, 6);
  SceneSpec spec;
  Dataset ds;
  for (int i = 0; i < 4; ++i) {
    ds.push_back(generate_scene(spec, 750 + i));
    ds.back().id = "s" + std::to_string(i);
  }
  std::vector<AttackMethod> methods = {AttackMethod::FGSM, AttackMethod::PGD};
  std::vector<LossSelector> sources = {LossSelector::OBJ, LossSelector::CLS};
  std::vector<double> eps = {0.0, 2.0};
  DegradationTable t = degradation_sweep(p, cfg, ds, methods, sources, eps);
  CHECK(t.cells.size() == methods.size() * sources.size() * eps.size());
  for (AttackMethod m : methods)
    for (LossSelector s : sources) {
      const DegradationCell& c0 = t.cell(m, 0.0, s);
      CHECK(c0.delta_map == 0.0);  // zero budget: attacked == clean
      CHECK(c0.attacked_map == doctest::Approx(t.clean_map));
      const DegradationCell& c2 = t.cell(m, 2.0, s);
      CHECK(c2.method == m);
      CHECK(c2.source == s);
      CHECK(c2.epsilon == 2.0);
      CHECK(c2.delta_map == doctest::Approx((c2.attacked_map - t.clean_map) * 100));
    }
  CHECK_THROWS_AS(t.cell(AttackMethod::FGSM, 99.0, LossSelector::OBJ), ValidationError);

  fs::path dir = fs::temp_directory_path() / "gridadv_reports";
  fs::create_directories(dir);
  write_degradation_table((dir / "deg.csv").string(), t);
  CHECK(fs::exists(dir / "deg.csv"));
  CHECK(fs::exists(dir / "deg.md"));
  fs::remove_all(dir);
}

TEST_CASE("defense comparison evaluates every model under every attack") {
  DetectorConfig cfg;
  SceneSpec spec;
  Dataset ds;
  for (int i = 0; i < 3; ++i) {
    ds.push_back(generate_scene(spec, 800 + i));
    ds.back().id = "d" + std::to_string(i);
  }
  std::map<TrainingVariant, Params> models;
  models[TrainingVariant::STD] = init_params(cfg, 1);
  models[TrainingVariant::OBJ] = init_params(cfg, 2);
  std::vector<AttackSpec> attacks = {AttackSpec::pgd_spec(LossSelector::OBJ, 2.0),
                                     AttackSpec::fgsm_spec(LossSelector::CLS, 2.0)};
  DefenseTable t = compare_defenses(models, cfg, ds, attacks);
  REQUIRE(t.rows.size() == 2);
  for (const DefenseRow& row : t.rows) {
    CHECK(row.attacked_map.size() == attacks.size());
    for (double v : row.attacked_map) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  fs::path dir = fs::temp_directory_path() / "gridadv_reports2";
  fs::create_directories(dir);
  write_defense_table((dir / "def.csv").string(), t);
  CHECK(fs::exists(dir / "def.csv"));
  CHECK(fs::exists(dir / "def.md"));
  fs::remove_all(dir);
}

TEST_CASE("gradient-domain cosines are bounded, deterministic, and skip empty scenes") {
  DetectorConfig cfg;
  Params p = init_params(cfg, 3);
  SceneSpec spec;
  Dataset ds;
  for (int i = 0; i < 6; ++i) {
    ds.push_back(generate_scene(spec, 850 + i));
    ds.back().id = "g" + std::to_string(i);
  }
  SceneSpec empty_spec;
  empty_spec.min_objects = 0;
  empty_spec.max_objects = 0;
  ds.push_back(generate_scene(empty_spec, 860));
  ds.back().id = "empty";

  GradientDomainReport r = gradient_domain_analysis(p, cfg, ds, static_cast<int>(ds.size()));
  CHECK(r.excluded_empty_gt == 1);
  REQUIRE(r.per_image.size() == ds.size() - 1);
  for (const ImageCosines& c : r.per_image) {
    CHECK(std::abs(c.obj_loc) <= 1.0 + 1e-12);
    CHECK(std::abs(c.obj_cls) <= 1.0 + 1e-12);
    CHECK(std::abs(c.loc_cls) <= 1.0 + 1e-12);
  }
  CHECK(r.obj_bridges_fraction >= 0.0);
  CHECK(r.obj_bridges_fraction <= 1.0);
  GradientDomainReport r2 = gradient_domain_analysis(p, cfg, ds, static_cast<int>(ds.size()));
  CHECK(r.mean_obj_loc == r2.mean_obj_loc);
  CHECK(r.obj_bridges_fraction == r2.obj_bridges_fraction);

  fs::path dir = fs::temp_directory_path() / "gridadv_reports3";
  fs::create_directories(dir);
  write_gradient_report((dir / "grad.csv").string(), r);
  CHECK(fs::exists(dir / "grad.csv"));
  CHECK(fs::exists(dir / "grad.md"));
  fs::remove_all(dir);
}
