#include "gridadv/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace gridadv {

std::string to_string(AttackMethod m) { return m == AttackMethod::FGSM ? "fgsm" : "pgd"; }

AttackMethod method_from_string(const std::string& s) {
  if (s == "fgsm") return AttackMethod::FGSM;
  if (s == "pgd") return AttackMethod::PGD;
  throw ValidationError("unknown attack method: " + s);
}

void AttackSpec::validate() const {
  if (epsilon < 0 || epsilon > 255) throw ValidationError("epsilon must be in [0,255]");
  if (iterations < 1) throw ValidationError("iterations must be >= 1");
  if (!(step_size > 0) && epsilon > 0) throw ValidationError("step_size must be > 0");
  if (method == AttackMethod::FGSM && (iterations != 1 || step_size != epsilon))
    throw ValidationError("FGSM requires T=1 and step_size=epsilon");
}

AttackSpec AttackSpec::fgsm_spec(LossSelector sel, double eps, bool random_init, std::uint64_t seed) {
  AttackSpec s;
  s.selector = sel;
  s.method = AttackMethod::FGSM;
  s.epsilon = eps;
  s.step_size = eps;
  s.iterations = 1;
  s.random_init = random_init;
  s.seed = seed;
  return s;
}

AttackSpec AttackSpec::pgd_spec(LossSelector sel, double eps, double step, int iters) {
  AttackSpec s;
  s.selector = sel;
  s.method = AttackMethod::PGD;
  s.epsilon = eps;
  s.step_size = step;
  s.iterations = iters;
  return s;
}

std::string AttackSpec::label() const {
  std::string m = method == AttackMethod::FGSM ? "fgsm" : "pgd" + std::to_string(iterations);
  char eps_buf[32];
  std::snprintf(eps_buf, sizeof(eps_buf), "%g", epsilon);
  return m + "_" + gridadv::to_string(selector) + "_eps" + eps_buf;
}

Image project(const Image& x_adv, const Image& x_clean, double epsilon) {
  if (!x_adv.same_shape(x_clean)) throw ValidationError("project: shape mismatch");
  Image out = x_adv;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double delta = std::clamp(out.data[i] - x_clean.data[i], -epsilon, epsilon);
    out.data[i] = std::clamp(x_clean.data[i] + delta, 0.0, 255.0);
  }
  return out;
}

namespace {

double linf_dist(const Image& a, const Image& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

double sgn(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

double selected_loss(const Params& params, const DetectorConfig& config, const Image& image,
                     const TargetAssignment& asg, LossSelector sel) {
  Tensor raw = forward(params, config, image);
  switch (sel) {
    case LossSelector::OBJ: return objectness_loss(raw, asg, config.lambda_no_obj);
    case LossSelector::LOC: return localization_loss(raw, asg, config);
    case LossSelector::CLS: return classification_loss(raw, asg, config);
    case LossSelector::TOTAL: return total_loss(raw, asg, config).l_total;
  }
  return 0;
}

AdversarialExample iterate_attack(const Params& params, const DetectorConfig& config,
                                  const Image& image, const GroundTruthSet& gt,
                                  const AttackSpec& spec) {
  spec.validate();
  TargetAssignment asg = assign_targets(gt, config);
  AdversarialExample ex;
  ex.spec = spec;

  const bool degenerate =
      (spec.selector == LossSelector::LOC || spec.selector == LossSelector::CLS) && asg.matched == 0;
  if (degenerate || spec.epsilon == 0) {
    ex.image = image;
    ex.degenerate = degenerate;
    ex.achieved_loss = selected_loss(params, config, image, asg, spec.selector);
    ex.linf = 0;
    return ex;
  }

  Image x = image;
  if (spec.random_init) {
    Rng rng(spec.seed);
    for (auto& v : x.data) v += rng.uniform(-spec.epsilon, spec.epsilon);
    x = project(x, image, spec.epsilon);
  }
  for (int it = 0; it < spec.iterations; ++it) {
    InputGradient g = input_gradient(params, config, x, gt, spec.selector);
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += spec.step_size * sgn(g.grad.data[i]);
    x = project(x, image, spec.epsilon);
  }
  ex.image = std::move(x);
  ex.achieved_loss = selected_loss(params, config, ex.image, asg, spec.selector);
  ex.linf = linf_dist(ex.image, image);
  return ex;
}

}  // namespace

AdversarialExample fgsm(const Params& params, const DetectorConfig& config, const Image& image,
                        const GroundTruthSet& gt, const AttackSpec& spec) {
  if (spec.method != AttackMethod::FGSM) throw ValidationError("fgsm called with non-FGSM spec");
  return iterate_attack(params, config, image, gt, spec);
}

AdversarialExample pgd(const Params& params, const DetectorConfig& config, const Image& image,
                       const GroundTruthSet& gt, const AttackSpec& spec) {
  if (spec.method != AttackMethod::PGD) throw ValidationError("pgd called with non-PGD spec");
  return iterate_attack(params, config, image, gt, spec);
}

AdversarialExample run_attack(const Params& params, const DetectorConfig& config, const Image& image,
                              const GroundTruthSet& gt, const AttackSpec& spec) {
  return spec.method == AttackMethod::FGSM ? fgsm(params, config, image, gt, spec)
                                           : pgd(params, config, image, gt, spec);
}

AttackBatchResult attack_batch(const Params& params, const DetectorConfig& config,
                               const Dataset& dataset, const AttackSpec& spec, int limit,
                               const std::optional<std::string>& out_dir) {
  spec.validate();
  AttackBatchResult res;
  const int n = limit < 0 ? static_cast<int>(dataset.size())
                          : std::min<int>(limit, static_cast<int>(dataset.size()));
  if (out_dir) {
    std::error_code ec;
    fs::create_directories(*out_dir, ec);
    if (ec) throw IoError("cannot create attack output dir: " + *out_dir);
  }
  for (int i = 0; i < n; ++i) {
    AttackSpec per = spec;
    per.seed = spec.seed + static_cast<std::uint64_t>(i);
    AdversarialExample ex = run_attack(params, config, dataset[i].image, dataset[i].gt, per);
    ex.clean_id = dataset[i].id;
    res.summary.count++;
    res.summary.degenerate_count += ex.degenerate ? 1 : 0;
    res.summary.mean_achieved_loss += ex.achieved_loss;
    res.summary.mean_linf += ex.linf;
    if (out_dir) save_tensor_f32((fs::path(*out_dir) / (ex.clean_id + ".adv.bin")).string(), ex.image);
    res.examples.push_back(std::move(ex));
  }
  if (res.summary.count > 0) {
    res.summary.mean_achieved_loss /= res.summary.count;
    res.summary.mean_linf /= res.summary.count;
  }
  if (out_dir) {
    json j;
    j["attack"] = spec.label();
    j["count"] = res.summary.count;
    j["degenerate_count"] = res.summary.degenerate_count;
    j["mean_achieved_loss"] = res.summary.mean_achieved_loss;
    j["mean_linf"] = res.summary.mean_linf;
    std::ofstream f(fs::path(*out_dir) / "summary.json");
    f << j.dump(2) << "\n";
    if (!f) throw IoError("failed writing attack summary.json");
  }
  return res;
}

}  // namespace gridadv
