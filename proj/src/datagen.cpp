#include "gridadv/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <opencv2/imgcodecs.hpp>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace gridadv {

std::string to_string(Background b) {
  switch (b) {
    case Background::Flat: return "flat";
    case Background::Gradient: return "gradient";
    case Background::Noise: return "noise";
  }
  return "flat";
}

Background background_from_string(const std::string& s) {
  if (s == "flat") return Background::Flat;
  if (s == "gradient") return Background::Gradient;
  if (s == "noise") return Background::Noise;
  throw ValidationError("unknown background mode: " + s);
}

void SceneSpec::validate() const {
  if (image_size < 16) throw ValidationError("image_size too small");
  if (channels != 1 && channels != 3) throw ValidationError("channels must be 1 or 3");
  if (min_objects < 0 || max_objects < min_objects) throw ValidationError("bad object count range");
  if (num_classes < 1) throw ValidationError("num_classes must be >= 1");
  if (min_object_size < 4 || max_object_size < min_object_size)
    throw ValidationError("bad object size range");
  if (max_object_size > image_size) throw ValidationError("objects cannot fit inside the image");
}

std::string SceneSpec::to_json() const {
  json j;
  j["image_size"] = image_size;
  j["channels"] = channels;
  j["min_objects"] = min_objects;
  j["max_objects"] = max_objects;
  j["num_classes"] = num_classes;
  j["min_object_size"] = min_object_size;
  j["max_object_size"] = max_object_size;
  j["background"] = to_string(background);
  return j.dump();
}

SceneSpec SceneSpec::from_json(const std::string& text) {
  json j = json::parse(text);
  SceneSpec s;
  s.image_size = j.at("image_size").get<int>();
  s.channels = j.at("channels").get<int>();
  s.min_objects = j.at("min_objects").get<int>();
  s.max_objects = j.at("max_objects").get<int>();
  s.num_classes = j.at("num_classes").get<int>();
  s.min_object_size = j.at("min_object_size").get<int>();
  s.max_object_size = j.at("max_object_size").get<int>();
  s.background = background_from_string(j.at("background").get<std::string>());
  s.validate();
  return s;
}

namespace {

struct Color {
  double c[3];
};

Color class_color(int class_id, Rng& rng) {
  static const double base[3][3] = {{200, 60, 60}, {60, 185, 60}, {70, 90, 215}};
  Color c;
  for (int i = 0; i < 3; ++i) {
    c.c[i] = std::clamp(base[class_id % 3][i] + rng.uniform(-25.0, 25.0), 0.0, 255.0);
  }
  return c;
}

void paint_background(Image& img, const SceneSpec& spec, Rng& rng) {
  const int n = spec.image_size, ch = spec.channels;
  double a[3], b[3];
  for (int i = 0; i < 3; ++i) {
    a[i] = rng.uniform(30.0, 180.0);
    b[i] = rng.uniform(30.0, 180.0);
  }
  const bool horizontal = rng.uniform() < 0.5;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      for (int c = 0; c < ch; ++c) {
        double v = a[c];
        if (spec.background == Background::Gradient) {
          double t = horizontal ? static_cast<double>(x) / (n - 1) : static_cast<double>(y) / (n - 1);
          v = a[c] + (b[c] - a[c]) * t;
        } else if (spec.background == Background::Noise) {
          v = a[c] + rng.uniform(-20.0, 20.0);
        }
        img.at(y, x, c) = std::clamp(v, 0.0, 255.0);
      }
    }
  }
}

// Draws the class shape inside the placement box and returns the tight box
// measured from the painted pixel mask.
Box draw_object(Image& img, const SceneSpec& spec, int class_id, const Box& place, const Color& col) {
  const int shape = class_id % 3;
  const int x_lo = static_cast<int>(std::lround(place.x1()));
  const int y_lo = static_cast<int>(std::lround(place.y1()));
  const int x_hi = static_cast<int>(std::lround(place.x2()));
  const int y_hi = static_cast<int>(std::lround(place.y2()));
  int minx = img.shape[1], maxx = -1, miny = img.shape[0], maxy = -1;
  for (int y = y_lo; y < y_hi; ++y) {
    for (int x = x_lo; x < x_hi; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      bool inside = false;
      if (shape == 0) {
        inside = true;
      } else if (shape == 1) {
        const double rx = (px - place.cx) / (place.w / 2);
        const double ry = (py - place.cy) / (place.h / 2);
        inside = rx * rx + ry * ry <= 1.0;
      } else {
        // isoceles triangle, apex at top center
        const double t = (py - place.y1()) / place.h;  // 0 at apex row
        const double half = t * place.w / 2;
        inside = t >= 0 && t <= 1 && std::abs(px - place.cx) <= half;
      }
      if (!inside) continue;
      for (int c = 0; c < spec.channels; ++c) img.at(y, x, c) = col.c[c % 3];
      minx = std::min(minx, x);
      maxx = std::max(maxx, x);
      miny = std::min(miny, y);
      maxy = std::max(maxy, y);
    }
  }
  if (maxx < 0) throw GenerationError("object rendered no pixels");
  Box tight;
  tight.w = maxx - minx + 1;
  tight.h = maxy - miny + 1;
  tight.cx = minx + tight.w / 2;
  tight.cy = miny + tight.h / 2;
  return tight;
}

}  // namespace

Sample generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed ^ spec.hash());
  Sample s;
  s.image = Image({spec.image_size, spec.image_size, spec.channels});
  paint_background(s.image, spec, rng);

  const int count = spec.min_objects + (spec.max_objects > spec.min_objects
                                            ? rng.uniform_int(spec.max_objects - spec.min_objects + 1)
                                            : 0);
  std::vector<Box> placed;
  for (int i = 0; i < count; ++i) {
    const int class_id = rng.uniform_int(spec.num_classes);
    bool ok = false;
    for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
      Box place;
      place.w = rng.uniform_int(spec.max_object_size - spec.min_object_size + 1) + spec.min_object_size;
      place.h = rng.uniform_int(spec.max_object_size - spec.min_object_size + 1) + spec.min_object_size;
      place.cx = place.w / 2 + rng.uniform() * (spec.image_size - place.w);
      place.cy = place.h / 2 + rng.uniform() * (spec.image_size - place.h);
      bool overlaps = false;
      for (const Box& p : placed) {
        if (iou(place, p) > 0.3) {
          overlaps = true;
          break;
        }
      }
      if (overlaps) continue;
      Color col = class_color(class_id, rng);
      Box tight = draw_object(s.image, spec, class_id, place, col);
      placed.push_back(place);
      s.gt.items.push_back({class_id, tight});
      ok = true;
    }
    if (!ok) throw GenerationError("could not place object " + std::to_string(i) + " without excessive overlap");
  }
  // quantize to what PNG storage will hold
  for (double& v : s.image.data) v = std::clamp(std::round(v), 0.0, 255.0);
  return s;
}

void save_png(const std::string& path, const Image& img) {
  const int h = img.shape[0], w = img.shape[1], ch = img.shape[2];
  cv::Mat m(h, w, ch == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (ch == 3) {
        auto& px = m.at<cv::Vec3b>(y, x);
        // our channel order is RGB; OpenCV stores BGR
        px[2] = static_cast<unsigned char>(std::clamp(std::lround(img.at(y, x, 0)), 0l, 255l));
        px[1] = static_cast<unsigned char>(std::clamp(std::lround(img.at(y, x, 1)), 0l, 255l));
        px[0] = static_cast<unsigned char>(std::clamp(std::lround(img.at(y, x, 2)), 0l, 255l));
      } else {
        m.at<unsigned char>(y, x) =
            static_cast<unsigned char>(std::clamp(std::lround(img.at(y, x, 0)), 0l, 255l));
      }
    }
  }
  if (!cv::imwrite(path, m)) throw IoError("failed to write " + path);
}

Image load_png(const std::string& path, int expected_channels) {
  cv::Mat m = cv::imread(path, expected_channels == 3 ? cv::IMREAD_COLOR : cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw IoError("failed to read image: " + path);
  Image img({m.rows, m.cols, expected_channels});
  for (int y = 0; y < m.rows; ++y) {
    for (int x = 0; x < m.cols; ++x) {
      if (expected_channels == 3) {
        const auto& px = m.at<cv::Vec3b>(y, x);
        img.at(y, x, 0) = px[2];
        img.at(y, x, 1) = px[1];
        img.at(y, x, 2) = px[0];
      } else {
        img.at(y, x, 0) = m.at<unsigned char>(y, x);
      }
    }
  }
  return img;
}

namespace {

std::string item_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%05d", index);
  return buf;
}

json gt_to_json(const std::string& image_file, const GroundTruthSet& gt) {
  json objs = json::array();
  for (const auto& it : gt.items) {
    objs.push_back({{"class_id", it.class_id},
                    {"cx", it.box.cx},
                    {"cy", it.box.cy},
                    {"w", it.box.w},
                    {"h", it.box.h}});
  }
  return json{{"image", image_file}, {"objects", objs}};
}

GroundTruthSet gt_from_json(const json& j) {
  GroundTruthSet gt;
  for (const auto& o : j.at("objects")) {
    GtItem it;
    it.class_id = o.at("class_id").get<int>();
    it.box.cx = o.at("cx").get<double>();
    it.box.cy = o.at("cy").get<double>();
    it.box.w = o.at("w").get<double>();
    it.box.h = o.at("h").get<double>();
    gt.items.push_back(it);
  }
  return gt;
}

}  // namespace

DatasetManifest generate_dataset(const SceneSpec& spec, int n_items, std::uint64_t seed,
                                 const std::string& out_path, const std::string& split) {
  spec.validate();
  if (n_items < 0) throw ValidationError("n_items must be >= 0");
  std::error_code ec;
  fs::create_directories(fs::path(out_path) / "images", ec);
  if (ec) throw IoError("cannot create dataset directory: " + out_path);

  DatasetManifest man;
  man.root = out_path;
  man.split = split;
  man.item_count = n_items;
  man.seed = seed;
  man.spec = spec;
  man.spec_hash = to_hex(spec.hash());

  std::ofstream ann(fs::path(out_path) / "annotations.jsonl");
  if (!ann) throw IoError("cannot write annotations.jsonl under " + out_path);
  for (int i = 0; i < n_items; ++i) {
    Sample s = generate_scene(spec, seed + static_cast<std::uint64_t>(i));
    const std::string rel = "images/" + item_name(i) + ".png";
    save_png((fs::path(out_path) / rel).string(), s.image);
    ann << gt_to_json(rel, s.gt).dump() << "\n";
    man.items.push_back({rel, i});
  }
  ann.close();
  if (!ann) throw IoError("failed writing annotations.jsonl");

  json j;
  j["split"] = man.split;
  j["item_count"] = man.item_count;
  j["seed"] = man.seed;
  j["spec_hash"] = man.spec_hash;
  j["spec"] = json::parse(spec.to_json());
  json items = json::array();
  for (const auto& it : man.items) items.push_back({{"image", it.image_file}, {"annotation_index", it.annotation_index}});
  j["items"] = items;
  std::ofstream mf(fs::path(out_path) / "manifest.json");
  mf << j.dump(2) << "\n";
  if (!mf) throw IoError("failed writing manifest.json");
  return man;
}

DatasetManifest load_manifest(const std::string& path) {
  const fs::path mp = fs::path(path) / "manifest.json";
  std::ifstream f(mp);
  if (!f) throw IoError("manifest not found: " + mp.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError("corrupt manifest " + mp.string() + ": " + e.what());
  }
  DatasetManifest man;
  man.root = path;
  man.split = j.at("split").get<std::string>();
  man.item_count = j.at("item_count").get<int>();
  man.seed = j.at("seed").get<std::uint64_t>();
  man.spec_hash = j.at("spec_hash").get<std::string>();
  man.spec = SceneSpec::from_json(j.at("spec").dump());
  if (man.spec_hash != to_hex(man.spec.hash()))
    throw IoError("manifest spec hash mismatch in " + mp.string());
  for (const auto& it : j.at("items")) {
    man.items.push_back({it.at("image").get<std::string>(), it.at("annotation_index").get<int>()});
  }
  if (static_cast<int>(man.items.size()) != man.item_count)
    throw IoError("manifest item count mismatch in " + mp.string());
  return man;
}

Dataset load_dataset(const std::string& path) {
  DatasetManifest man = load_manifest(path);
  std::ifstream ann(fs::path(path) / "annotations.jsonl");
  if (!ann) throw IoError("annotations.jsonl not found under " + path);
  std::vector<GroundTruthSet> gts;
  std::vector<std::string> gt_files;
  std::string line;
  int lineno = 0;
  while (std::getline(ann, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      gt_files.push_back(j.at("image").get<std::string>());
      gts.push_back(gt_from_json(j));
    } catch (const json::exception& e) {
      throw IoError("corrupt annotation at line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (static_cast<int>(gts.size()) != man.item_count)
    throw IoError("annotation count does not match manifest item count");

  Dataset ds;
  const double n = man.spec.image_size;
  for (const auto& it : man.items) {
    const fs::path img_path = fs::path(path) / it.image_file;
    if (!fs::exists(img_path)) throw IoError("missing image file for item '" + it.image_file + "'");
    Sample s;
    s.id = fs::path(it.image_file).stem().string();
    s.image = load_png(img_path.string(), man.spec.channels);
    s.gt = gts.at(it.annotation_index);
    for (const auto& g : s.gt.items) {
      if (!(g.box.w > 0) || !(g.box.h > 0) || g.box.x1() < -0.5 || g.box.y1() < -0.5 ||
          g.box.x2() > n + 0.5 || g.box.y2() > n + 0.5) {
        throw IoError("out-of-bounds ground-truth box in item '" + it.image_file + "'");
      }
    }
    ds.push_back(std::move(s));
  }
  return ds;
}

}  // namespace gridadv
