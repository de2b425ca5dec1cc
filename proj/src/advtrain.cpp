#include "gridadv/advtrain.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace gridadv {

std::string to_string(TrainingVariant v) {
  switch (v) {
    case TrainingVariant::STD: return "std";
    case TrainingVariant::ALL: return "all";
    case TrainingVariant::MTD: return "mtd";
    case TrainingVariant::LOC: return "loc";
    case TrainingVariant::CLS: return "cls";
    case TrainingVariant::OBJ: return "obj";
    case TrainingVariant::OA: return "oa";
  }
  return "std";
}

TrainingVariant variant_from_string(const std::string& s) {
  for (TrainingVariant v : all_variants())
    if (to_string(v) == s) return v;
  throw ValidationError("unknown training variant: " + s);
}

std::vector<TrainingVariant> all_variants() {
  return {TrainingVariant::STD, TrainingVariant::ALL, TrainingVariant::MTD, TrainingVariant::LOC,
          TrainingVariant::CLS, TrainingVariant::OBJ, TrainingVariant::OA};
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ValidationError("learning_rate must be > 0");
  if (epsilon < 0) throw ValidationError("training epsilon must be >= 0");
}

namespace {

// Adam with bias correction.
struct Adam {
  double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ParamGrads m, v;
  long step_count = 0;

  Adam(const Params& p, double lr_) : lr(lr_), m(ParamGrads::zeros_like(p)), v(ParamGrads::zeros_like(p)) {}

  void step(Params& p, const ParamGrads& g) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, step_count);
    const double bc2 = 1.0 - std::pow(beta2, step_count);
    for (std::size_t li = 0; li < p.layers.size(); ++li) {
      auto update = [&](double& w, double& mm, double& vv, double grad) {
        mm = beta1 * mm + (1 - beta1) * grad;
        vv = beta2 * vv + (1 - beta2) * grad * grad;
        w -= lr * (mm / bc1) / (std::sqrt(vv / bc2) + eps);
      };
      auto& L = p.layers[li];
      for (std::size_t i = 0; i < L.weight.data.size(); ++i)
        update(L.weight.data[i], m.weight[li].data[i], v.weight[li].data[i], g.weight[li].data[i]);
      for (std::size_t i = 0; i < L.bias.size(); ++i)
        update(L.bias[i], m.bias[li][i], v.bias[li][i], g.bias[li][i]);
    }
  }
};

void shuffle_indices(std::vector<int>& idx, Rng& rng) {
  for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i)
    std::swap(idx[i], idx[rng.uniform_int(i + 1)]);
}

// Forward + total loss + parameter gradients for one image, scaled by 1/B.
LossBreakdown accumulate_image(const Params& params, const DetectorConfig& config,
                               const Image& image, const TargetAssignment& asg, double inv_batch,
                               ParamGrads& grads) {
  ForwardCache cache;
  Tensor raw = forward(params, config, image, &cache);
  LossBreakdown b = total_loss(raw, asg, config);
  Tensor graw = loss_grad_raw(raw, asg, config, LossSelector::TOTAL);
  backward_params(params, config, cache, graw, grads, inv_batch);
  return b;
}

}  // namespace

CraftedAdversary craft_training_adversary(const Params& params, const DetectorConfig& config,
                                          const Sample& sample, TrainingVariant variant, double eps,
                                          std::uint64_t seed) {
  if (variant == TrainingVariant::STD)
    throw ValidationError("no adversary is crafted for the standard variant");

  auto craft = [&](LossSelector sel, std::uint64_t s) {
    return fgsm(params, config, sample.image, sample.gt,
                AttackSpec::fgsm_spec(sel, eps, /*random_init=*/true, s));
  };

  CraftedAdversary out;
  switch (variant) {
    case TrainingVariant::ALL:
      out.image = craft(LossSelector::TOTAL, seed).image;
      return out;
    case TrainingVariant::OBJ:
      out.image = craft(LossSelector::OBJ, seed).image;
      return out;
    case TrainingVariant::LOC:
      out.image = craft(LossSelector::LOC, seed).image;
      return out;
    case TrainingVariant::CLS:
      out.image = craft(LossSelector::CLS, seed).image;
      return out;
    default:
      break;
  }

  // OA / MTD: craft candidates and keep the one with max total loss.
  TargetAssignment asg = assign_targets(sample.gt, config);
  auto total_of = [&](const Image& img) {
    Tensor raw = forward(params, config, img);
    return total_loss(raw, asg, config).l_total;
  };

  SelectionRecord rec;
  std::vector<std::pair<LossSelector, Image>> candidates;
  if (variant == TrainingVariant::OA) {
    candidates.emplace_back(LossSelector::OBJ, craft(LossSelector::OBJ, seed * 3 + 0).image);
    candidates.emplace_back(LossSelector::LOC, craft(LossSelector::LOC, seed * 3 + 1).image);
    candidates.emplace_back(LossSelector::CLS, craft(LossSelector::CLS, seed * 3 + 2).image);
  } else {  // MTD chooses between loc and cls only
    candidates.emplace_back(LossSelector::LOC, craft(LossSelector::LOC, seed * 3 + 1).image);
    candidates.emplace_back(LossSelector::CLS, craft(LossSelector::CLS, seed * 3 + 2).image);
  }

  int best = 0;
  double best_loss = -1;
  std::vector<double> losses;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double l = total_of(candidates[i].second);
    losses.push_back(l);
    if (l > best_loss) {  // strict: ties keep the earlier (fixed-order) candidate
      best_loss = l;
      best = static_cast<int>(i);
    }
  }
  if (variant == TrainingVariant::OA) {
    rec.loss_obj = losses[0];
    rec.loss_loc = losses[1];
    rec.loss_cls = losses[2];
  } else {
    rec.loss_loc = losses[0];
    rec.loss_cls = losses[1];
  }
  rec.picked = candidates[best].first;
  out.image = std::move(candidates[best].second);
  out.selection = rec;
  return out;
}

namespace {

TrainedModel run_training(const Dataset& dataset, const DetectorConfig& config,
                          const TrainConfig& tc) {
  tc.validate();
  config.validate();
  if (dataset.empty()) throw ValidationError("training dataset is empty");

  TrainedModel model;
  model.params = init_params(config, tc.seed);
  model.config_hash = config.hash();
  model.variant = tc.variant;
  model.seed = tc.seed;

  Adam opt(model.params, tc.learning_rate);
  Rng shuffle_rng(tc.seed ^ 0xD1CE5EEDULL);
  std::vector<int> idx(dataset.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);

  const bool adversarial = tc.variant != TrainingVariant::STD;
  std::uint64_t craft_counter = 0;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    shuffle_indices(idx, shuffle_rng);
    EpochStats stats;
    int images_seen = 0;
    for (std::size_t start = 0; start < idx.size(); start += tc.batch_size) {
      const std::size_t end = std::min(idx.size(), start + tc.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      ParamGrads grads = ParamGrads::zeros_like(model.params);
      double batch_total = 0;

      for (std::size_t j = start; j < end; ++j) {
        const Sample& s = dataset[idx[j]];
        TargetAssignment asg = assign_targets(s.gt, config);
        LossBreakdown clean = accumulate_image(model.params, config, s.image, asg, inv_b, grads);
        LossBreakdown step = clean;

        if (adversarial) {
          const std::uint64_t craft_seed = tc.seed + 0x5EED0000ULL + craft_counter++;
          CraftedAdversary adv =
              craft_training_adversary(model.params, config, s, tc.variant, tc.epsilon, craft_seed);
          if (adv.selection) {
            model.selections.push_back(*adv.selection);
            switch (adv.selection->picked) {
              case LossSelector::OBJ: stats.picked_obj++; break;
              case LossSelector::LOC: stats.picked_loc++; break;
              case LossSelector::CLS: stats.picked_cls++; break;
              default: break;
            }
          }
          LossBreakdown advb = accumulate_image(model.params, config, adv.image, asg, inv_b, grads);
          step.l_obj += advb.l_obj;
          step.l_loc += advb.l_loc;
          step.l_cls += advb.l_cls;
          step.l_total += advb.l_total;
        }

        if (!std::isfinite(step.l_total)) {
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", image " +
                              s.id + " (obj=" + std::to_string(step.l_obj) +
                              " loc=" + std::to_string(step.l_loc) +
                              " cls=" + std::to_string(step.l_cls) + ")");
        }
        stats.mean_total += step.l_total;
        stats.mean_obj += step.l_obj;
        stats.mean_loc += step.l_loc;
        stats.mean_cls += step.l_cls;
        ++images_seen;
        batch_total += step.l_total * inv_b;
      }
      (void)batch_total;
      opt.step(model.params, grads);
    }
    stats.mean_total /= images_seen;
    stats.mean_obj /= images_seen;
    stats.mean_loc /= images_seen;
    stats.mean_cls /= images_seen;
    model.history.push_back(stats);
  }
  return model;
}

}  // namespace

TrainedModel train_standard(const Dataset& dataset, const DetectorConfig& config,
                            const TrainConfig& tc) {
  if (tc.variant != TrainingVariant::STD)
    throw ValidationError("train_standard requires the std variant");
  return run_training(dataset, config, tc);
}

TrainedModel adversarial_train(const Dataset& dataset, const DetectorConfig& config,
                               const TrainConfig& tc) {
  if (tc.variant == TrainingVariant::STD)
    throw ValidationError("adversarial_train requires a non-std variant");
  return run_training(dataset, config, tc);
}

TrainedModel train_model(const Dataset& dataset, const DetectorConfig& config, const TrainConfig& tc) {
  return run_training(dataset, config, tc);
}

std::map<TrainingVariant, TrainedModel> train_all_variants(
    const Dataset& dataset, const DetectorConfig& config, const TrainConfig& base,
    const std::optional<std::string>& out_dir) {
  if (out_dir) {
    std::error_code ec;
    fs::create_directories(*out_dir, ec);
    if (ec) throw IoError("cannot create training output dir: " + *out_dir);
  }
  std::map<TrainingVariant, TrainedModel> models;
  for (TrainingVariant v : all_variants()) {
    TrainConfig tc = base;
    tc.variant = v;
    TrainedModel m = train_model(dataset, config, tc);
    if (out_dir) {
      save_checkpoint((fs::path(*out_dir) / ("m_" + to_string(v) + ".ckpt")).string(), m.params, config);
      write_training_log((fs::path(*out_dir) / ("m_" + to_string(v) + ".log.jsonl")).string(), m);
    }
    models.emplace(v, std::move(m));
  }
  return models;
}

void write_training_log(const std::string& path, const TrainedModel& model) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write training log: " + path);
  for (std::size_t e = 0; e < model.history.size(); ++e) {
    const EpochStats& s = model.history[e];
    json j;
    j["epoch"] = e;
    j["variant"] = to_string(model.variant);
    j["total"] = s.mean_total;
    j["obj"] = s.mean_obj;
    j["loc"] = s.mean_loc;
    j["cls"] = s.mean_cls;
    j["picked_obj"] = s.picked_obj;
    j["picked_loc"] = s.picked_loc;
    j["picked_cls"] = s.picked_cls;
    f << j.dump() << "\n";
  }
  if (!f) throw IoError("failed writing training log: " + path);
}

}  // namespace gridadv
