#pragma once

#include <map>

#include "gridadv/attacks.hpp"

namespace gridadv {

enum class TrainingVariant { STD, ALL, MTD, LOC, CLS, OBJ, OA };

std::string to_string(TrainingVariant v);
TrainingVariant variant_from_string(const std::string& s);
std::vector<TrainingVariant> all_variants();

struct TrainConfig {
  int epochs = 20;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double epsilon = 4.0;  // training-attack budget
  TrainingVariant variant = TrainingVariant::STD;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  double mean_total = 0, mean_obj = 0, mean_loc = 0, mean_cls = 0;
  // how often each source won the max-total-loss selection (OA/MTD)
  int picked_obj = 0, picked_loc = 0, picked_cls = 0;
};

// One record per OA/MTD selection: total losses of every candidate and the pick.
struct SelectionRecord {
  double loss_obj = 0, loss_loc = 0, loss_cls = 0;
  LossSelector picked = LossSelector::OBJ;
};

struct TrainedModel {
  Params params;
  std::uint64_t config_hash = 0;
  TrainingVariant variant = TrainingVariant::STD;
  std::uint64_t seed = 0;
  std::vector<EpochStats> history;
  std::vector<SelectionRecord> selections;  // empty for non-selecting variants
  double clean_val_map = -1;                // filled in by evaluation when available
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CraftedAdversary {
  Image image;
  std::optional<SelectionRecord> selection;
};

// Per-image training adversary for the given variant (FGSM with random init).
CraftedAdversary craft_training_adversary(const Params& params, const DetectorConfig& config,
                                          const Sample& sample, TrainingVariant variant, double eps,
                                          std::uint64_t seed);

TrainedModel train_standard(const Dataset& dataset, const DetectorConfig& config,
                            const TrainConfig& tc);

TrainedModel adversarial_train(const Dataset& dataset, const DetectorConfig& config,
                               const TrainConfig& tc);

// Dispatches on tc.variant.
TrainedModel train_model(const Dataset& dataset, const DetectorConfig& config, const TrainConfig& tc);

// Seven models, identical schedule, differing only in variant. Checkpoints and
// JSON-lines training logs are persisted under out_dir when given.
std::map<TrainingVariant, TrainedModel> train_all_variants(
    const Dataset& dataset, const DetectorConfig& config, const TrainConfig& base,
    const std::optional<std::string>& out_dir = std::nullopt);

void write_training_log(const std::string& path, const TrainedModel& model);

}  // namespace gridadv
