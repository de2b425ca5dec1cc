// Command-line front end: data generation, training, attacks, evaluation, and
// the report sweeps, all driven by one JSON experiment config.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "gridadv/advtrain.hpp"
#include "gridadv/evalreport.hpp"
#include "json.hpp"

using namespace gridadv;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct DatasetSection {
  SceneSpec scene;
  int train_count = 200;
  int test_count = 100;
  std::uint64_t seed = 1;
};

struct AttackSection {
  std::vector<AttackMethod> methods = {AttackMethod::FGSM, AttackMethod::PGD};
  std::vector<LossSelector> sources = {LossSelector::OBJ, LossSelector::LOC, LossSelector::CLS,
                                       LossSelector::TOTAL};
  std::vector<double> eps_grid = {2, 4, 6, 8};
  int pgd_iterations = 10;
  double pgd_step = 1.0;
  double defense_eps = 4.0;  // budget for the defense-comparison columns
};

struct ExperimentConfig {
  std::string output_dir = "out";
  std::string data_dir;  // defaults to <output_dir>/data
  DatasetSection dataset;
  DetectorConfig detector;
  TrainConfig training;
  AttackSection attacks;
  int analysis_images = 50;

  std::string train_dir() const { return data_dir + "/train"; }
  std::string test_dir() const { return data_dir + "/test"; }
};

void reject_unknown(const json& j, const std::vector<std::string>& allowed,
                    const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ValidationError("unknown key '" + key + "' in " + where);
  }
}

// Overlay user keys onto the section's defaults so partial configs work, then
// round-trip through the owning module's parser for validation.
template <typename T>
T merge_section(const json& user, const T& defaults, const std::string& where) {
  json merged = json::parse(defaults.to_json());
  std::vector<std::string> allowed;
  for (const auto& [key, _] : merged.items()) allowed.push_back(key);
  reject_unknown(user, allowed, where);
  for (const auto& [key, value] : user.items()) merged[key] = value;
  return T::from_json(merged.dump());
}

TrainConfig training_from_json(const json& j) {
  TrainConfig tc;
  reject_unknown(j, {"epochs", "batch_size", "learning_rate", "epsilon", "variant", "seed"},
                 "training");
  if (j.contains("epochs")) tc.epochs = j.at("epochs").get<int>();
  if (j.contains("batch_size")) tc.batch_size = j.at("batch_size").get<int>();
  if (j.contains("learning_rate")) tc.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("epsilon")) tc.epsilon = j.at("epsilon").get<double>();
  if (j.contains("variant")) tc.variant = variant_from_string(j.at("variant").get<std::string>());
  if (j.contains("seed")) tc.seed = j.at("seed").get<std::uint64_t>();
  tc.validate();
  return tc;
}

AttackSection attacks_from_json(const json& j) {
  AttackSection a;
  reject_unknown(j, {"methods", "sources", "eps_grid", "pgd_iterations", "pgd_step", "defense_eps"},
                 "attacks");
  if (j.contains("methods")) {
    a.methods.clear();
    for (const auto& m : j.at("methods")) a.methods.push_back(method_from_string(m.get<std::string>()));
  }
  if (j.contains("sources")) {
    a.sources.clear();
    for (const auto& s : j.at("sources")) a.sources.push_back(selector_from_string(s.get<std::string>()));
  }
  if (j.contains("eps_grid")) a.eps_grid = j.at("eps_grid").get<std::vector<double>>();
  if (j.contains("pgd_iterations")) a.pgd_iterations = j.at("pgd_iterations").get<int>();
  if (j.contains("pgd_step")) a.pgd_step = j.at("pgd_step").get<double>();
  if (j.contains("defense_eps")) a.defense_eps = j.at("defense_eps").get<double>();
  if (a.methods.empty() || a.sources.empty() || a.eps_grid.empty())
    throw ValidationError("attacks section must keep at least one method, source, and epsilon");
  return a;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("config file " + path + " is not valid JSON: " + e.what());
  }
  reject_unknown(j, {"output_dir", "data_dir", "dataset", "detector", "training", "attacks",
                     "analysis_images"},
                 "experiment config");
  ExperimentConfig c;
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    reject_unknown(d, {"scene", "train_count", "test_count", "seed"}, "dataset");
    if (d.contains("scene")) c.dataset.scene = merge_section(d.at("scene"), SceneSpec{}, "dataset.scene");
    if (d.contains("train_count")) c.dataset.train_count = d.at("train_count").get<int>();
    if (d.contains("test_count")) c.dataset.test_count = d.at("test_count").get<int>();
    if (d.contains("seed")) c.dataset.seed = d.at("seed").get<std::uint64_t>();
    if (c.dataset.train_count < 0 || c.dataset.test_count < 0)
      throw ValidationError("dataset counts must be non-negative");
  }
  if (j.contains("detector"))
    c.detector = merge_section(j.at("detector"), DetectorConfig{}, "detector");
  if (j.contains("training")) c.training = training_from_json(j.at("training"));
  if (j.contains("attacks")) c.attacks = attacks_from_json(j.at("attacks"));
  if (j.contains("analysis_images")) c.analysis_images = j.at("analysis_images").get<int>();
  c.data_dir = j.contains("data_dir") ? j.at("data_dir").get<std::string>()
                                      : c.output_dir + "/data";
  return c;
}

json resolved_json(const ExperimentConfig& c) {
  json j;
  j["output_dir"] = c.output_dir;
  j["data_dir"] = c.data_dir;
  j["dataset"] = {{"scene", json::parse(c.dataset.scene.to_json())},
                  {"train_count", c.dataset.train_count},
                  {"test_count", c.dataset.test_count},
                  {"seed", c.dataset.seed}};
  j["detector"] = json::parse(c.detector.to_json());
  j["training"] = {{"epochs", c.training.epochs},
                   {"batch_size", c.training.batch_size},
                   {"learning_rate", c.training.learning_rate},
                   {"epsilon", c.training.epsilon},
                   {"variant", to_string(c.training.variant)},
                   {"seed", c.training.seed}};
  json methods = json::array(), sources = json::array();
  for (AttackMethod m : c.attacks.methods) methods.push_back(to_string(m));
  for (LossSelector s : c.attacks.sources) sources.push_back(to_string(s));
  j["attacks"] = {{"methods", methods},
                  {"sources", sources},
                  {"eps_grid", c.attacks.eps_grid},
                  {"pgd_iterations", c.attacks.pgd_iterations},
                  {"pgd_step", c.attacks.pgd_step},
                  {"defense_eps", c.attacks.defense_eps}};
  j["analysis_images"] = c.analysis_images;
  return j;
}

// Shared per-command state resolved from --config/--seed/--out/--limit.
struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  int limit = -1;

  ExperimentConfig resolve(const std::string& command) const {
    ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    const bool default_data_dir = c.data_dir.empty() || c.data_dir == c.output_dir + "/data";
    if (out) {
      c.output_dir = *out;
      if (default_data_dir) c.data_dir = c.output_dir + "/data";
    }
    if (c.data_dir.empty()) c.data_dir = c.output_dir + "/data";
    if (seed) {
      c.dataset.seed = *seed;
      c.training.seed = *seed;
    }
    if (limit >= 0) {
      c.dataset.train_count = std::min(c.dataset.train_count, limit);
      c.dataset.test_count = std::min(c.dataset.test_count, limit);
    }
    json log = resolved_json(c);
    log["command"] = command;
    std::cout << log.dump(2) << "\n";
    return c;
  }
};

Dataset load_limited(const std::string& dir, int limit) {
  Dataset ds = load_dataset(dir);
  if (limit >= 0 && static_cast<int>(ds.size()) > limit) ds.resize(limit);
  return ds;
}

AttackSpec spec_from_flags(const ExperimentConfig& c, const std::string& method,
                           const std::string& source, double eps) {
  if (method_from_string(method) == AttackMethod::FGSM)
    return AttackSpec::fgsm_spec(selector_from_string(source), eps);
  return AttackSpec::pgd_spec(selector_from_string(source), eps, c.attacks.pgd_step,
                              c.attacks.pgd_iterations);
}

void write_eval_json(const std::string& path, const EvalResult& r) {
  json j;
  j["map"] = r.map;
  j["per_class_ap"] = r.per_class_ap;
  j["n_detections"] = r.n_detections;
  j["n_gt"] = r.n_gt;
  j["fp_count"] = r.fp_count;
  std::ofstream(path) << j.dump(2) << "\n";
}

int cmd_gen_data(const ExperimentConfig& c) {
  fs::create_directories(c.data_dir);
  generate_dataset(c.dataset.scene, c.dataset.train_count, c.dataset.seed, c.train_dir(), "train");
  generate_dataset(c.dataset.scene, c.dataset.test_count, c.dataset.seed + 0x7E57, c.test_dir(),
                   "test");
  std::cout << "wrote " << c.dataset.train_count << " train / " << c.dataset.test_count
            << " test images under " << c.data_dir << "\n";
  return 0;
}

int cmd_train(const ExperimentConfig& c, const std::string& variant) {
  TrainConfig tc = c.training;
  if (!variant.empty()) tc.variant = variant_from_string(variant);
  Dataset train = load_dataset(c.train_dir());
  fs::create_directories(c.output_dir);
  TrainedModel m = train_model(train, c.detector, tc);
  const std::string stem = c.output_dir + "/m_" + to_string(tc.variant);
  save_checkpoint(stem + ".ckpt", m.params, c.detector);
  write_training_log(stem + ".log.jsonl", m);
  std::cout << "trained " << to_string(tc.variant) << ": final mean loss "
            << m.history.back().mean_total << ", checkpoint " << stem << ".ckpt\n";
  return 0;
}

int cmd_attack(const ExperimentConfig& c, const std::string& checkpoint, const std::string& method,
               const std::string& source, double eps, int limit) {
  Params p = load_checkpoint(checkpoint, c.detector);
  Dataset test = load_dataset(c.test_dir());
  AttackSpec spec = spec_from_flags(c, method, source, eps);
  const std::string dir = c.output_dir + "/adv_" + spec.label();
  fs::create_directories(dir);
  AttackBatchResult r = attack_batch(p, c.detector, test, spec, limit, dir);
  std::cout << "attacked " << r.summary.count << " images (" << r.summary.degenerate_count
            << " degenerate), mean Linf " << r.summary.mean_linf << ", artifacts in " << dir
            << "\n";
  return 0;
}

int cmd_eval(const ExperimentConfig& c, const std::string& checkpoint, const std::string& method,
             const std::string& source, double eps, int limit) {
  Params p = load_checkpoint(checkpoint, c.detector);
  Dataset test = load_limited(c.test_dir(), limit);
  std::optional<AttackSpec> attack;
  if (eps > 0) attack = spec_from_flags(c, method, source, eps);
  EvalResult r = evaluate(p, c.detector, test, attack);
  fs::create_directories(c.output_dir);
  const std::string name = attack ? "eval_" + attack->label() + ".json" : "eval_clean.json";
  write_eval_json(c.output_dir + "/" + name, r);
  std::cout << (attack ? attack->label() : std::string("clean")) << " mAP " << r.map << " ("
            << r.fp_count << " confident false positives) -> " << c.output_dir << "/" << name
            << "\n";
  return 0;
}

int cmd_sweep(const ExperimentConfig& c, const std::string& checkpoint, int limit) {
  Params p = load_checkpoint(checkpoint, c.detector);
  Dataset test = load_limited(c.test_dir(), limit);
  DegradationTable t = degradation_sweep(p, c.detector, test, c.attacks.methods, c.attacks.sources,
                                         c.attacks.eps_grid, c.attacks.pgd_iterations,
                                         c.attacks.pgd_step);
  fs::create_directories(c.output_dir);
  write_degradation_table(c.output_dir + "/degradation.csv", t);
  std::cout << "clean mAP " << t.clean_map << ", " << t.cells.size() << " attack cells -> "
            << c.output_dir << "/degradation.csv\n";
  return 0;
}

int cmd_compare(const ExperimentConfig& c, const std::string& checkpoint_dir, int limit) {
  std::map<TrainingVariant, Params> models;
  for (TrainingVariant v : all_variants()) {
    const std::string path = checkpoint_dir + "/m_" + to_string(v) + ".ckpt";
    if (fs::exists(path)) models[v] = load_checkpoint(path, c.detector);
  }
  if (models.size() < 2)
    throw ValidationError("need at least two m_<variant>.ckpt checkpoints in " + checkpoint_dir);
  Dataset test = load_limited(c.test_dir(), limit);
  std::vector<AttackSpec> attacks;
  for (LossSelector s : c.attacks.sources)
    attacks.push_back(AttackSpec::pgd_spec(s, c.attacks.defense_eps, c.attacks.pgd_step,
                                           c.attacks.pgd_iterations));
  DefenseTable t = compare_defenses(models, c.detector, test, attacks);
  fs::create_directories(c.output_dir);
  write_defense_table(c.output_dir + "/defense.csv", t);
  std::cout << t.rows.size() << " models x " << attacks.size() << " attacks -> " << c.output_dir
            << "/defense.csv\n";
  return 0;
}

int cmd_analyze(const ExperimentConfig& c, const std::string& checkpoint, int limit) {
  Params p = load_checkpoint(checkpoint, c.detector);
  Dataset test = load_dataset(c.test_dir());
  int n = std::min<int>(c.analysis_images, static_cast<int>(test.size()));
  if (limit >= 0) n = std::min(n, limit);
  fs::create_directories(c.output_dir);
  GradientDomainReport r = gradient_domain_analysis(p, c.detector, test, n,
                                                    c.output_dir + "/gradients.bin");
  write_gradient_report(c.output_dir + "/gradients.csv", r);
  std::cout << "cosines over " << r.per_image.size() << " images (" << r.excluded_empty_gt
            << " skipped): mean obj/loc " << r.mean_obj_loc << ", obj/cls " << r.mean_obj_cls
            << ", loc/cls " << r.mean_loc_cls << "; objectness bridges "
            << r.obj_bridges_fraction << " -> " << c.output_dir << "/gradients.csv\n";
  return 0;
}

int fail(const std::string& kind, const std::string& message) {
  json err;
  err["error"] = kind;
  err["message"] = message;
  std::cerr << err.dump() << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grid-detector adversarial attack and training toolkit"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string variant, checkpoint, checkpoint_dir;
  std::string method = "pgd", source = "obj";
  double eps = 4.0, eval_eps = 0.0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "experiment config JSON");
    sub->add_option("--seed", common.seed, "override dataset and training seeds");
    sub->add_option("--out", common.out, "override the output directory");
    sub->add_option("--limit", common.limit, "cap the number of dataset items");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate the train/test datasets");
  add_common(gen);

  CLI::App* train = app.add_subcommand("train", "train one model variant");
  add_common(train);
  train->add_option("--variant", variant, "std|all|mtd|loc|cls|obj|oa (default from config)");

  CLI::App* attack = app.add_subcommand("attack", "write adversarial examples for the test set");
  add_common(attack);
  attack->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  attack->add_option("--method", method, "fgsm|pgd");
  attack->add_option("--source", source, "obj|loc|cls|total");
  attack->add_option("--eps", eps, "attack budget in pixel units");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint, optionally under attack");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval->add_option("--method", method, "fgsm|pgd");
  eval->add_option("--source", source, "obj|loc|cls|total");
  eval->add_option("--eps", eval_eps, "attack budget; 0 evaluates clean");

  CLI::App* sweep = app.add_subcommand("sweep", "degradation table over the attack grid");
  add_common(sweep);
  sweep->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

  CLI::App* compare = app.add_subcommand("compare", "defense table across trained variants");
  add_common(compare);
  compare->add_option("--checkpoint-dir", checkpoint_dir, "directory of m_<variant>.ckpt files")
      ->required();

  CLI::App* analyze = app.add_subcommand("analyze", "per-task gradient cosine statistics");
  add_common(analyze);
  analyze->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(common.resolve("gen-data"));
    if (train->parsed()) return cmd_train(common.resolve("train"), variant);
    if (attack->parsed())
      return cmd_attack(common.resolve("attack"), checkpoint, method, source, eps, common.limit);
    if (eval->parsed())
      return cmd_eval(common.resolve("eval"), checkpoint, method, source, eval_eps, common.limit);
    if (sweep->parsed()) return cmd_sweep(common.resolve("sweep"), checkpoint, common.limit);
    if (compare->parsed()) return cmd_compare(common.resolve("compare"), checkpoint_dir, common.limit);
    if (analyze->parsed()) return cmd_analyze(common.resolve("analyze"), checkpoint, common.limit);
  } catch (const ValidationError& e) {
    return fail("validation", e.what());
  } catch (const IoError& e) {
    return fail("io", e.what());
  } catch (const GenerationError& e) {
    return fail("generation", e.what());
  } catch (const TrainingError& e) {
    return fail("training", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 1;
}
