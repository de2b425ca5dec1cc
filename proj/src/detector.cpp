#include "gridadv/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

using nlohmann::json;

namespace gridadv {

void DetectorConfig::validate() const {
  if (grid < 1 || anchors < 1 || classes < 1) throw ValidationError("bad detector grid/anchors/classes");
  if (static_cast<int>(anchor_priors.size()) != anchors)
    throw ValidationError("anchor_priors size must equal anchors");
  for (auto [w, h] : anchor_priors)
    if (!(w > 0) || !(h > 0)) throw ValidationError("anchor priors must be positive");
  if (trunk_channels.size() != 4) throw ValidationError("trunk must have 4 stage widths");
  for (int c : trunk_channels)
    if (c < 1) throw ValidationError("trunk channel width must be >= 1");
  if (image_size != grid * 16)
    throw ValidationError("image_size must be grid * 16 (four stride-2 stages)");
  if (input_channels != 1 && input_channels != 3) throw ValidationError("input_channels must be 1 or 3");
  if (lambda_no_obj < 0 || lambda_no_obj > 1) throw ValidationError("lambda_no_obj must be in [0,1]");
}

std::string DetectorConfig::to_json() const {
  json j;
  j["image_size"] = image_size;
  j["input_channels"] = input_channels;
  j["grid"] = grid;
  j["anchors"] = anchors;
  j["classes"] = classes;
  json priors = json::array();
  for (auto [w, h] : anchor_priors) priors.push_back({w, h});
  j["anchor_priors"] = priors;
  j["trunk_channels"] = trunk_channels;
  j["lambda_no_obj"] = lambda_no_obj;
  return j.dump();
}

DetectorConfig DetectorConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  DetectorConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.input_channels = j.at("input_channels").get<int>();
  c.grid = j.at("grid").get<int>();
  c.anchors = j.at("anchors").get<int>();
  c.classes = j.at("classes").get<int>();
  c.anchor_priors.clear();
  for (const auto& p : j.at("anchor_priors")) c.anchor_priors.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
  c.trunk_channels = j.at("trunk_channels").get<std::vector<int>>();
  c.lambda_no_obj = j.at("lambda_no_obj").get<double>();
  c.validate();
  return c;
}

ParamGrads ParamGrads::zeros_like(const Params& p) {
  ParamGrads g;
  for (const auto& l : p.layers) {
    g.weight.emplace_back(Tensor(l.weight.shape));
    g.bias.emplace_back(l.bias.size(), 0.0);
  }
  return g;
}

void ParamGrads::accumulate(const ParamGrads& other, double s) {
  for (std::size_t i = 0; i < weight.size(); ++i) {
    for (std::size_t j = 0; j < weight[i].data.size(); ++j) weight[i].data[j] += s * other.weight[i].data[j];
    for (std::size_t j = 0; j < bias[i].size(); ++j) bias[i][j] += s * other.bias[i][j];
  }
}

void ParamGrads::scale(double s) {
  for (auto& w : weight)
    for (auto& v : w.data) v *= s;
  for (auto& b : bias)
    for (auto& v : b) v *= s;
}

Params init_params(const DetectorConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed ^ config.hash());
  Params p;
  p.config_hash = config.hash();

  auto make_layer = [&](const std::string& name, int in_c, int out_c, int k, int stride, int pad,
                        bool relu) {
    ConvLayer l;
    l.name = name;
    l.in_c = in_c;
    l.out_c = out_c;
    l.ksize = k;
    l.stride = stride;
    l.pad = pad;
    l.relu = relu;
    l.weight = Tensor({out_c, in_c, k, k});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_c * k * k));
    for (auto& v : l.weight.data) v = rng.uniform(-bound, bound);
    l.bias.assign(out_c, 0.0);
    return l;
  };

  int in_c = config.input_channels;
  for (int i = 0; i < 4; ++i) {
    p.layers.push_back(make_layer("trunk" + std::to_string(i), in_c, config.trunk_channels[i], 3, 2, 1, true));
    in_c = config.trunk_channels[i];
  }
  ConvLayer head = make_layer("head", in_c, config.anchors * config.pred_slots(), 1, 1, 0, false);
  // start objectness logits low: almost all anchors are background
  for (int a = 0; a < config.anchors; ++a) head.bias[a * config.pred_slots()] = -2.0;
  p.layers.push_back(head);
  return p;
}

namespace {

int out_dim(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

Tensor conv_forward(const ConvLayer& l, const Tensor& in) {
  const int ih = in.shape[0], iw = in.shape[1];
  const int oh = out_dim(ih, l.ksize, l.stride, l.pad);
  const int ow = out_dim(iw, l.ksize, l.stride, l.pad);
  Tensor out({oh, ow, l.out_c});
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (int oc = 0; oc < l.out_c; ++oc) {
        double acc = l.bias[oc];
        for (int ky = 0; ky < l.ksize; ++ky) {
          const int iy = oy * l.stride + ky - l.pad;
          if (iy < 0 || iy >= ih) continue;
          for (int kx = 0; kx < l.ksize; ++kx) {
            const int ix = ox * l.stride + kx - l.pad;
            if (ix < 0 || ix >= iw) continue;
            const double* wrow = &l.weight.data[((static_cast<std::size_t>(oc) * l.in_c) * l.ksize + ky) * l.ksize + kx];
            const double* irow = &in.data[(static_cast<std::size_t>(iy) * iw + ix) * l.in_c];
            // weight layout {out,in,ky,kx}: stride between in-channels is k*k
            const std::size_t wstride = static_cast<std::size_t>(l.ksize) * l.ksize;
            for (int ic = 0; ic < l.in_c; ++ic) acc += wrow[ic * wstride] * irow[ic];
          }
        }
        out.at(oy, ox, oc) = acc;
      }
    }
  }
  return out;
}

// SiLU: x * sigmoid(x). Smooth, so input-gradient finite-difference checks
// are not polluted by activation kinks.
double silu(double x) { return x * sigmoid(x); }
double silu_grad(double x) {
  const double s = sigmoid(x);
  return s + x * s * (1 - s);
}

// grad_out is d/d(pre-activation). Fills grad_in (optional) and weight grads (optional).
void conv_backward(const ConvLayer& l, const Tensor& in, const Tensor& grad_pre, Tensor* grad_in,
                   Tensor* grad_w, std::vector<double>* grad_b, double scale) {
  const int ih = in.shape[0], iw = in.shape[1];
  const int oh = grad_pre.shape[0], ow = grad_pre.shape[1];
  const std::size_t wstride = static_cast<std::size_t>(l.ksize) * l.ksize;
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (int oc = 0; oc < l.out_c; ++oc) {
        const double g = grad_pre.at(oy, ox, oc) * scale;
        if (g == 0.0) continue;
        if (grad_b) (*grad_b)[oc] += g;
        for (int ky = 0; ky < l.ksize; ++ky) {
          const int iy = oy * l.stride + ky - l.pad;
          if (iy < 0 || iy >= ih) continue;
          for (int kx = 0; kx < l.ksize; ++kx) {
            const int ix = ox * l.stride + kx - l.pad;
            if (ix < 0 || ix >= iw) continue;
            const double* wrow = &l.weight.data[((static_cast<std::size_t>(oc) * l.in_c) * l.ksize + ky) * l.ksize + kx];
            const double* irow = &in.data[(static_cast<std::size_t>(iy) * iw + ix) * l.in_c];
            if (grad_in) {
              double* grow = &grad_in->data[(static_cast<std::size_t>(iy) * iw + ix) * l.in_c];
              for (int ic = 0; ic < l.in_c; ++ic) grow[ic] += g * wrow[ic * wstride];
            }
            if (grad_w) {
              double* wgrow = &grad_w->data[((static_cast<std::size_t>(oc) * l.in_c) * l.ksize + ky) * l.ksize + kx];
              for (int ic = 0; ic < l.in_c; ++ic) wgrow[ic * wstride] += g * irow[ic];
            }
          }
        }
      }
    }
  }
}

void check_params(const Params& params, const DetectorConfig& config) {
  if (params.config_hash != config.hash())
    throw ValidationError("params were initialized for a different detector config");
}

// Shared backward walk; grad_raw is d/d(head output).
Image backward_impl(const Params& params, const DetectorConfig& config, const ForwardCache& cache,
                    const Tensor& grad_raw, ParamGrads* grads, bool want_input, double scale) {
  const int n_layers = static_cast<int>(params.layers.size());
  Tensor grad_post = grad_raw;
  grad_post.shape = cache.pre_act.back().shape;  // {S,S,A*(5+C)} view of the same data
  Tensor grad_in;
  for (int li = n_layers - 1; li >= 0; --li) {
    const ConvLayer& l = params.layers[li];
    Tensor grad_pre = std::move(grad_post);
    if (l.relu) {
      const Tensor& pre = cache.pre_act[li];
      for (std::size_t i = 0; i < grad_pre.data.size(); ++i) grad_pre.data[i] *= silu_grad(pre.data[i]);
    }
    const Tensor& in = (li == 0) ? cache.input_norm : cache.post_act[li - 1];
    const bool need_in = li > 0 || want_input;
    if (need_in) grad_in = Tensor(in.shape);
    conv_backward(l, in, grad_pre, need_in ? &grad_in : nullptr,
                  grads ? &grads->weight[li] : nullptr, grads ? &grads->bias[li] : nullptr, scale);
    grad_post = std::move(grad_in);
  }
  if (!want_input) return {};
  // chain through x/255 normalization: gradient in [0,255] pixel units
  for (auto& v : grad_post.data) v /= 255.0;
  return grad_post;
}

}  // namespace

Tensor forward(const Params& params, const DetectorConfig& config, const Image& image,
               ForwardCache* cache) {
  check_params(params, config);
  if (image.shape.size() != 3 || image.shape[0] != config.image_size ||
      image.shape[1] != config.image_size || image.shape[2] != config.input_channels)
    throw ValidationError("image shape does not match detector config");

  Tensor x = image;
  for (auto& v : x.data) v /= 255.0;
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.input_norm = x;
  c.pre_act.clear();
  c.post_act.clear();
  for (const auto& l : params.layers) {
    Tensor pre = conv_forward(l, c.post_act.empty() ? c.input_norm : c.post_act.back());
    Tensor post = pre;
    if (l.relu)
      for (auto& v : post.data) v = silu(v);
    c.pre_act.push_back(std::move(pre));
    c.post_act.push_back(std::move(post));
  }
  Tensor raw = c.post_act.back();
  raw.shape = {config.grid, config.grid, config.anchors, config.pred_slots()};
  return raw;
}

Image backward_input(const Params& params, const DetectorConfig& config, const ForwardCache& cache,
                     const Tensor& grad_raw) {
  return backward_impl(params, config, cache, grad_raw, nullptr, true, 1.0);
}

void backward_params(const Params& params, const DetectorConfig& config, const ForwardCache& cache,
                     const Tensor& grad_raw, ParamGrads& grads, double scale) {
  backward_impl(params, config, cache, grad_raw, &grads, false, scale);
}

TargetAssignment assign_targets(const GroundTruthSet& gt, const DetectorConfig& config) {
  config.validate();
  TargetAssignment asg;
  asg.grid = config.grid;
  asg.anchors = config.anchors;
  asg.slots.assign(config.total_boxes(), AnchorTarget{});
  const double cell = config.cell_pixels();
  for (const auto& item : gt.items) {
    const int cx_idx = std::clamp(static_cast<int>(item.box.cx / cell), 0, config.grid - 1);
    const int cy_idx = std::clamp(static_cast<int>(item.box.cy / cell), 0, config.grid - 1);
    int best_a = 0;
    double best_iou = -1;
    for (int a = 0; a < config.anchors; ++a) {
      const auto [pw, ph] = config.anchor_priors[a];
      const double inter = std::min(item.box.w, pw) * std::min(item.box.h, ph);
      const double shape_iou = inter / (item.box.w * item.box.h + pw * ph - inter);
      if (shape_iou > best_iou) {
        best_iou = shape_iou;
        best_a = a;
      }
    }
    AnchorTarget& slot = asg.slots[(cy_idx * config.grid + cx_idx) * config.anchors + best_a];
    if (slot.has_obj) {
      ++asg.dropped;
      continue;
    }
    slot.has_obj = true;
    slot.class_id = item.class_id;
    slot.box = item.box;
    ++asg.matched;
  }
  return asg;
}

Box decode_box(const DetectorConfig& config, int cy, int cx, int a, double tx, double ty, double tw,
               double th) {
  const double cell = config.cell_pixels();
  const auto [pw, ph] = config.anchor_priors[a];
  Box b;
  b.cx = (cx + sigmoid(tx)) * cell;
  b.cy = (cy + sigmoid(ty)) * cell;
  b.w = pw * std::exp(std::clamp(tw, -8.0, 8.0));
  b.h = ph * std::exp(std::clamp(th, -8.0, 8.0));
  return b;
}

std::vector<Detection> decode(const Tensor& raw, const DetectorConfig& config,
                              double conf_threshold) {
  std::vector<Detection> dets;
  const double n = config.image_size;
  for (int cy = 0; cy < config.grid; ++cy) {
    for (int cx = 0; cx < config.grid; ++cx) {
      for (int a = 0; a < config.anchors; ++a) {
        const double obj_p = sigmoid(raw.at(cy, cx, a, 0));
        int best_c = 0;
        double best_p = -1;
        for (int c = 0; c < config.classes; ++c) {
          const double p = sigmoid(raw.at(cy, cx, a, 5 + c));
          if (p > best_p) {
            best_p = p;
            best_c = c;
          }
        }
        const double conf = obj_p * best_p;
        if (conf < conf_threshold) continue;
        Box b = decode_box(config, cy, cx, a, raw.at(cy, cx, a, 1), raw.at(cy, cx, a, 2),
                           raw.at(cy, cx, a, 3), raw.at(cy, cx, a, 4));
        const double x1 = std::clamp(b.x1(), 0.0, n), x2 = std::clamp(b.x2(), 0.0, n);
        const double y1 = std::clamp(b.y1(), 0.0, n), y2 = std::clamp(b.y2(), 0.0, n);
        if (x2 - x1 <= 0 || y2 - y1 <= 0) continue;
        Detection d;
        d.box = {(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1};
        d.class_id = best_c;
        d.confidence = conf;
        dets.push_back(d);
      }
    }
  }
  return dets;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.class_id == d.class_id && iou(k.box, d.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

namespace {
constexpr char kCkptMagic[4] = {'G', 'A', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const Params& params, const DetectorConfig& config) {
  check_params(params, config);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint for write: " + path);
  f.write(kCkptMagic, 4);
  std::uint32_t v = kCkptVersion;
  f.write(reinterpret_cast<const char*>(&v), 4);
  std::uint64_t h = params.config_hash;
  f.write(reinterpret_cast<const char*>(&h), 8);
  std::uint32_t n = static_cast<std::uint32_t>(params.layers.size());
  f.write(reinterpret_cast<const char*>(&n), 4);
  for (const auto& l : params.layers) {
    std::uint32_t wn = static_cast<std::uint32_t>(l.weight.data.size());
    std::uint32_t bn = static_cast<std::uint32_t>(l.bias.size());
    f.write(reinterpret_cast<const char*>(&wn), 4);
    f.write(reinterpret_cast<const char*>(&bn), 4);
    f.write(reinterpret_cast<const char*>(l.weight.data.data()), wn * sizeof(double));
    f.write(reinterpret_cast<const char*>(l.bias.data()), bn * sizeof(double));
  }
  if (!f) throw IoError("checkpoint write failed: " + path);
}

Params load_checkpoint(const std::string& path, const DetectorConfig& config) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kCkptMagic, 4) != 0) throw IoError("bad checkpoint magic: " + path);
  std::uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  if (v != kCkptVersion) throw IoError("unsupported checkpoint version in " + path);
  std::uint64_t h = 0;
  f.read(reinterpret_cast<char*>(&h), 8);
  if (h != config.hash())
    throw IoError("checkpoint config hash mismatch: " + path + " was trained with a different config");
  std::uint32_t n = 0;
  f.read(reinterpret_cast<char*>(&n), 4);
  Params p = init_params(config, 0);  // get the layer skeleton
  if (n != p.layers.size()) throw IoError("checkpoint layer count mismatch: " + path);
  for (auto& l : p.layers) {
    std::uint32_t wn = 0, bn = 0;
    f.read(reinterpret_cast<char*>(&wn), 4);
    f.read(reinterpret_cast<char*>(&bn), 4);
    if (wn != l.weight.data.size() || bn != l.bias.size())
      throw IoError("checkpoint layer shape mismatch: " + path);
    f.read(reinterpret_cast<char*>(l.weight.data.data()), wn * sizeof(double));
    f.read(reinterpret_cast<char*>(l.bias.data()), bn * sizeof(double));
  }
  if (!f) throw IoError("truncated checkpoint: " + path);
  return p;
}

}  // namespace gridadv
