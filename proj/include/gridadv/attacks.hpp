#pragma once

#include <optional>

#include "gridadv/losses.hpp"

namespace gridadv {

enum class AttackMethod { FGSM, PGD };

std::string to_string(AttackMethod m);
AttackMethod method_from_string(const std::string& s);

struct AttackSpec {
  LossSelector selector = LossSelector::OBJ;
  AttackMethod method = AttackMethod::PGD;
  double epsilon = 4.0;       // [0,255] pixel units
  double step_size = 1.0;     // [0,255] pixel units
  int iterations = 10;
  bool random_init = false;
  std::uint64_t seed = 0;

  void validate() const;
  static AttackSpec fgsm_spec(LossSelector sel, double eps, bool random_init = false,
                              std::uint64_t seed = 0);
  static AttackSpec pgd_spec(LossSelector sel, double eps, double step = 1.0, int iters = 10);
  std::string label() const;  // e.g. "pgd10_obj_eps4"
};

struct AdversarialExample {
  Image image;
  std::string clean_id;
  AttackSpec spec;
  double achieved_loss = 0;
  double linf = 0;
  bool degenerate = false;
};

// L-infinity ball projection around x_clean, then pixel-range clamp. Idempotent.
Image project(const Image& x_adv, const Image& x_clean, double epsilon);

AdversarialExample fgsm(const Params& params, const DetectorConfig& config, const Image& image,
                        const GroundTruthSet& gt, const AttackSpec& spec);

AdversarialExample pgd(const Params& params, const DetectorConfig& config, const Image& image,
                       const GroundTruthSet& gt, const AttackSpec& spec);

// Dispatch on spec.method.
AdversarialExample run_attack(const Params& params, const DetectorConfig& config, const Image& image,
                              const GroundTruthSet& gt, const AttackSpec& spec);

struct AttackBatchSummary {
  int count = 0;
  int degenerate_count = 0;
  double mean_achieved_loss = 0;
  double mean_linf = 0;
};

struct AttackBatchResult {
  std::vector<AdversarialExample> examples;
  AttackBatchSummary summary;
};

// Attacks the first `limit` dataset items (limit < 0: all). When out_dir is
// given, writes one float tensor file per image plus summary.json.
AttackBatchResult attack_batch(const Params& params, const DetectorConfig& config,
                               const Dataset& dataset, const AttackSpec& spec, int limit = -1,
                               const std::optional<std::string>& out_dir = std::nullopt);

}  // namespace gridadv
