#pragma once

#include <string>
#include <vector>

#include "gridadv/box.hpp"
#include "gridadv/core.hpp"
#include "gridadv/datagen.hpp"

namespace gridadv {

// Single-scale grid detector: 4 stride-2 conv layers to an SxS map, then a
// 1x1 head emitting A*(5+C) channels per cell. Raw predictions are laid out
// as {S, S, A, 5+C} with slots [obj, tx, ty, tw, th, cls...].
struct DetectorConfig {
  int image_size = 96;
  int input_channels = 3;
  int grid = 6;
  int anchors = 2;
  int classes = 3;
  std::vector<std::pair<double, double>> anchor_priors = {{24.0, 24.0}, {48.0, 48.0}};
  std::vector<int> trunk_channels = {8, 16, 16, 16};
  double lambda_no_obj = 0.5;

  int total_boxes() const { return grid * grid * anchors; }
  double cell_pixels() const { return static_cast<double>(image_size) / grid; }
  int pred_slots() const { return 5 + classes; }

  void validate() const;
  std::string to_json() const;
  static DetectorConfig from_json(const std::string& text);
  std::uint64_t hash() const { return fnv1a64(to_json()); }
};

struct ConvLayer {
  std::string name;
  int in_c = 0, out_c = 0, ksize = 3, stride = 2, pad = 1;
  bool relu = true;  // SiLU activation after the conv
  Tensor weight;     // {out_c, in_c, k, k}
  std::vector<double> bias;

  int param_count() const {
    return out_c * in_c * ksize * ksize + out_c;
  }
};

struct Params {
  std::vector<ConvLayer> layers;
  std::uint64_t config_hash = 0;

  int param_count() const {
    int n = 0;
    for (const auto& l : layers) n += l.param_count();
    return n;
  }
};

// Gradients with the same layout as Params.
struct ParamGrads {
  std::vector<Tensor> weight;
  std::vector<std::vector<double>> bias;

  static ParamGrads zeros_like(const Params& p);
  void accumulate(const ParamGrads& other, double scale = 1.0);
  void scale(double s);
};

Params init_params(const DetectorConfig& config, std::uint64_t seed);

// Activations kept for the backward passes.
struct ForwardCache {
  Tensor input_norm;               // image / 255
  std::vector<Tensor> pre_act;     // conv output before activation, per layer
  std::vector<Tensor> post_act;    // after activation (last layer: identity)
};

// Raw prediction grid {S, S, A, 5+C}. Pass a cache to enable backward calls.
Tensor forward(const Params& params, const DetectorConfig& config, const Image& image,
               ForwardCache* cache = nullptr);

// dLoss/dImage, in [0,255] pixel units (the /255 normalization is chained).
Image backward_input(const Params& params, const DetectorConfig& config, const ForwardCache& cache,
                     const Tensor& grad_raw);

// Accumulates dLoss/dParams into `grads` (scaled by `scale`).
void backward_params(const Params& params, const DetectorConfig& config, const ForwardCache& cache,
                     const Tensor& grad_raw, ParamGrads& grads, double scale = 1.0);

struct AnchorTarget {
  bool has_obj = false;  // I_obj; I_no_obj is the complement
  int class_id = -1;
  Box box;
};

struct TargetAssignment {
  int grid = 0, anchors = 0;
  std::vector<AnchorTarget> slots;  // indexed cell_y * S * A + cell_x * A + a
  int matched = 0;
  int dropped = 0;  // objects that collided on an already-taken (cell, anchor)

  const AnchorTarget& at(int cy, int cx, int a) const {
    return slots[(cy * grid + cx) * anchors + a];
  }
};

TargetAssignment assign_targets(const GroundTruthSet& gt, const DetectorConfig& config);

struct Detection {
  Box box;
  int class_id = -1;
  double confidence = 0;
};

// Box transform for anchor (cy, cx, a) from raw slots, without image clamping.
Box decode_box(const DetectorConfig& config, int cy, int cx, int a, double tx, double ty, double tw,
               double th);

std::vector<Detection> decode(const Tensor& raw, const DetectorConfig& config,
                              double conf_threshold);

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold = 0.45);

// Binary checkpoint with embedded config hash; load refuses a mismatch.
void save_checkpoint(const std::string& path, const Params& params, const DetectorConfig& config);
Params load_checkpoint(const std::string& path, const DetectorConfig& config);

}  // namespace gridadv
