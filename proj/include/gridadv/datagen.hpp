#pragma once

#include <string>
#include <vector>

#include "gridadv/box.hpp"
#include "gridadv/core.hpp"

namespace gridadv {

enum class Background { Flat, Gradient, Noise };

std::string to_string(Background b);
Background background_from_string(const std::string& s);

// Scene recipe for the synthetic traffic-like dataset. Class archetypes are
// colored shapes: 0 = rectangle, 1 = disc, 2 = triangle (cycled when C > 3).
struct SceneSpec {
  int image_size = 96;
  int channels = 3;
  int min_objects = 1;
  int max_objects = 3;
  int num_classes = 3;
  int min_object_size = 20;
  int max_object_size = 44;
  Background background = Background::Gradient;

  void validate() const;
  std::string to_json() const;
  static SceneSpec from_json(const std::string& json_text);
  std::uint64_t hash() const { return fnv1a64(to_json()); }
};

struct GtItem {
  int class_id = 0;
  Box box;
};

struct GroundTruthSet {
  std::vector<GtItem> items;
};

struct Sample {
  Image image;  // {H, W, C} in [0, 255]
  GroundTruthSet gt;
  std::string id;
};

using Dataset = std::vector<Sample>;

struct ManifestItem {
  std::string image_file;  // relative to dataset root
  int annotation_index = 0;
};

struct DatasetManifest {
  std::string root;
  std::string split = "train";
  int item_count = 0;
  std::vector<ManifestItem> items;
  std::uint64_t seed = 0;
  std::string spec_hash;
  SceneSpec spec;
};

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Deterministic for fixed (spec, seed). Objects are re-sampled until pairwise
// IoU stays below 0.3; throws GenerationError when placement is infeasible.
Sample generate_scene(const SceneSpec& spec, std::uint64_t seed);

// Persists n_items scenes (per-item seed = seed + index) under out_path:
// manifest.json, images/*.png, annotations.jsonl.
DatasetManifest generate_dataset(const SceneSpec& spec, int n_items, std::uint64_t seed,
                                 const std::string& out_path, const std::string& split = "train");

DatasetManifest load_manifest(const std::string& path);
Dataset load_dataset(const std::string& path);

// PNG I/O for {H, W, C} images; values rounded to the nearest integer on save.
void save_png(const std::string& path, const Image& img);
Image load_png(const std::string& path, int expected_channels);

}  // namespace gridadv
