#include "dext/detector.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dext/error.hpp"

namespace dext {
namespace {

float clip01(float v) { return std::clamp(v, 0.0f, 1.0f); }

kernels::ConvGeometry geometry(int in_c, int in_hw, int out_c, int kernel, int stride, int padding) {
  return kernels::ConvGeometry{in_c, in_hw, in_hw, out_c, kernel, stride, padding};
}

}  // namespace

Box corners(const Anchor& a) {
  return Box{a.cx - 0.5f * a.w, a.cy - 0.5f * a.h, a.cx + 0.5f * a.w, a.cy + 0.5f * a.h};
}

Box decode_offsets(const Anchor& a, const Offsets& t) {
  const float cx = a.cx + t.tx * a.w;
  const float cy = a.cy + t.ty * a.h;
  const float w = a.w * std::exp(std::min(t.tw, kMaxLogScale));
  const float h = a.h * std::exp(std::min(t.th, kMaxLogScale));
  return Box{clip01(cx - 0.5f * w), clip01(cy - 0.5f * h), clip01(cx + 0.5f * w), clip01(cy + 0.5f * h)};
}

double iou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, static_cast<double>(std::min(a.x_max, b.x_max)) - std::max(a.x_min, b.x_min));
  const double ih = std::max(0.0, static_cast<double>(std::min(a.y_max, b.y_max)) - std::max(a.y_min, b.y_min));
  const double inter = iw * ih;
  const double area_a = static_cast<double>(a.x_max - a.x_min) * (a.y_max - a.y_min);
  const double area_b = static_cast<double>(b.x_max - b.x_min) * (b.y_max - b.y_min);
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold) {
  std::stable_sort(detections.begin(), detections.end(), [](const Detection& l, const Detection& r) {
    if (l.score != r.score) return l.score > r.score;
    return l.anchor_index < r.anchor_index;
  });
  std::vector<Detection> kept;
  for (auto& d : detections) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == d.class_id && iou(k.box, d.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(std::move(d));
  }
  return kept;
}

Var decode_boxes(Tape& tape, Var offsets, std::span<const Anchor> anchors) {
  const Tensor& t = tape.value(offsets);
  if (t.shape != Shape{static_cast<int>(anchors.size()), 4}) {
    throw Error(ErrorCode::ShapeMismatch, "decode_boxes offsets " + shape_string(t.shape));
  }
  Tensor out(t.shape);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const Box b = decode_offsets(anchors[a], {t[4 * a], t[4 * a + 1], t[4 * a + 2], t[4 * a + 3]});
    out[4 * a] = b.x_min;
    out[4 * a + 1] = b.y_min;
    out[4 * a + 2] = b.x_max;
    out[4 * a + 3] = b.y_max;
  }
  std::vector<Anchor> saved(anchors.begin(), anchors.end());
  return tape.record({offsets}, std::move(out), [saved = std::move(saved)](const BackwardArgs& args) {
    const Tensor& t = *args.inputs[0];
    const Tensor& g = args.grad_output;
    Tensor& dst = *args.grad_inputs[0];
    for (std::size_t a = 0; a < saved.size(); ++a) {
      const Anchor& an = saved[a];
      const float tx = t[4 * a], ty = t[4 * a + 1], tw = t[4 * a + 2], th = t[4 * a + 3];
      const float cx = an.cx + tx * an.w;
      const float cy = an.cy + ty * an.h;
      const float half_w = 0.5f * an.w * std::exp(std::min(tw, kMaxLogScale));
      const float half_h = 0.5f * an.h * std::exp(std::min(th, kMaxLogScale));
      const float dhw = tw < kMaxLogScale ? half_w : 0.0f;  // d(half_w)/d(tw)
      const float dhh = th < kMaxLogScale ? half_h : 0.0f;
      auto inside = [](float v) { return v > 0.0f && v < 1.0f; };
      // x_min = cx - half_w, y_min = cy - half_h, x_max = cx + half_w, y_max = cy + half_h
      if (inside(cx - half_w)) {
        dst[4 * a] += g[4 * a] * an.w;
        dst[4 * a + 2] -= g[4 * a] * dhw;
      }
      if (inside(cy - half_h)) {
        dst[4 * a + 1] += g[4 * a + 1] * an.h;
        dst[4 * a + 3] -= g[4 * a + 1] * dhh;
      }
      if (inside(cx + half_w)) {
        dst[4 * a] += g[4 * a + 2] * an.w;
        dst[4 * a + 2] += g[4 * a + 2] * dhw;
      }
      if (inside(cy + half_h)) {
        dst[4 * a + 1] += g[4 * a + 3] * an.h;
        dst[4 * a + 3] += g[4 * a + 3] * dhh;
      }
    }
  });
}

Detection RawOutputs::at(int anchor_index) const {
  const int k = logits.dim(1);
  const auto a = static_cast<std::size_t>(anchor_index);
  if (anchor_index < 0 || a >= static_cast<std::size_t>(logits.dim(0))) {
    throw Error(ErrorCode::TargetUnreachable, "anchor index " + std::to_string(anchor_index));
  }
  Detection d;
  d.anchor_index = anchor_index;
  d.logits.assign(logits.data.begin() + a * k, logits.data.begin() + (a + 1) * k);
  const float* p = probs.data.data() + a * k;
  d.class_id = static_cast<int>(std::max_element(p, p + k) - p);
  d.score = p[d.class_id];
  d.box = Box{boxes[4 * a], boxes[4 * a + 1], boxes[4 * a + 2], boxes[4 * a + 3]};
  return d;
}

RawOutputs run(const DifferentiableDetector& model, const Tensor& image) {
  if (image.shape != model.input_shape()) {
    throw Error(ErrorCode::InputSizeMismatch,
                "image " + shape_string(image.shape) + " vs model " + shape_string(model.input_shape()));
  }
  Tape tape;
  const Var x = tape.input(image);
  const HeadOutputs heads = model.forward(tape, x);
  const Var probs = tape.softmax(heads.logits);
  return RawOutputs{tape.value(heads.logits), tape.value(probs), tape.value(heads.boxes)};
}

std::vector<Detection> candidates(const RawOutputs& raw, float score_threshold) {
  std::vector<Detection> out;
  for (int a = 0; a < raw.logits.dim(0); ++a) {
    Detection d = raw.at(a);
    if (d.class_id != 0 && d.score >= score_threshold) out.push_back(std::move(d));
  }
  return out;
}

std::vector<Detection> detect(const DifferentiableDetector& model, const Tensor& image) {
  const PostProcessConfig cfg = model.postprocess();
  return nms(candidates(run(model, image), cfg.score_threshold), cfg.nms_iou);
}

std::vector<Anchor> make_anchor_grid(int grid, std::span<const float> aspect_ratios, float scale) {
  std::vector<Anchor> anchors;
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      for (float ar : aspect_ratios) {
        const float root = std::sqrt(ar);
        anchors.push_back(Anchor{(gx + 0.5f) / grid, (gy + 0.5f) / grid, scale * root, scale / root});
      }
    }
  }
  return anchors;
}

ToyDetector::ToyDetector() {
  layers_[0].geometry = geometry(kChannels, kInputSize, 8, 3, 2, 1);
  layers_[1].geometry = geometry(8, 16, 16, 3, 2, 1);
  layers_[2].geometry = geometry(16, 8, 16, 3, 2, 1);
  layers_[3].geometry = geometry(16, kGrid, kAspects * kClasses, 3, 1, 1);
  layers_[4].geometry = geometry(16, kGrid, kAspects * 4, 3, 1, 1);
  for (auto& layer : layers_) {
    layer.weights.assign(static_cast<std::size_t>(layer.geometry.weight_size()), 0.0f);
    layer.bias.assign(static_cast<std::size_t>(layer.geometry.out_channels), 0.0f);
  }
  const std::array<float, kAspects> aspects{0.5f, 1.0f, 2.0f};
  anchors_ = make_anchor_grid(kGrid, aspects, 0.35f);
}

namespace {
constexpr float kBackgroundPrior = 2.0f;
}  // namespace

ToyDetector ToyDetector::random(std::uint64_t seed, PostProcessConfig config) {
  ToyDetector model;
  model.config_ = config;
  std::mt19937_64 rng(seed);
  // He-uniform backbone, damped box head so decoded boxes stay near anchors.
  const std::array<float, kLayerCount> gain{1.0f, 1.0f, 1.0f, 2.5f, 0.15f};
  for (std::size_t l = 0; l < model.layers_.size(); ++l) {
    auto& layer = model.layers_[l];
    const auto& g = layer.geometry;
    const float bound = gain[l] * std::sqrt(6.0f / static_cast<float>(g.in_channels * g.kernel * g.kernel));
    std::uniform_real_distribution<float> w(-bound, bound);
    for (float& v : layer.weights) v = w(rng);
    std::uniform_real_distribution<float> b(-0.05f, 0.05f);
    for (float& v : layer.bias) v = b(rng);
  }
  // Background prior keeps the detection count per scene small.
  for (int r = 0; r < kAspects; ++r) model.layers_[3].bias[static_cast<std::size_t>(r * kClasses)] += kBackgroundPrior;
  return model;
}

std::vector<std::size_t> ToyDetector::payload_sizes() {
  const ToyDetector shape_only;
  std::vector<std::size_t> sizes;
  for (const auto& layer : shape_only.layers_) sizes.push_back(layer.weights.size() + layer.bias.size());
  return sizes;
}

ToyDetector ToyDetector::from_payloads(const std::vector<std::vector<float>>& payloads,
                                       PostProcessConfig config) {
  ToyDetector model;
  model.config_ = config;
  if (payloads.size() != model.layers_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "expected " + std::to_string(model.layers_.size()) +
                                              " layers, got " + std::to_string(payloads.size()));
  }
  for (std::size_t l = 0; l < payloads.size(); ++l) {
    auto& layer = model.layers_[l];
    const std::size_t nw = layer.weights.size();
    if (payloads[l].size() != nw + layer.bias.size()) {
      throw Error(ErrorCode::ShapeMismatch, "layer " + std::to_string(l) + " payload size");
    }
    std::copy_n(payloads[l].begin(), nw, layer.weights.begin());
    std::copy(payloads[l].begin() + static_cast<std::ptrdiff_t>(nw), payloads[l].end(), layer.bias.begin());
  }
  return model;
}

std::vector<std::vector<float>> ToyDetector::payloads() const {
  std::vector<std::vector<float>> out;
  for (const auto& layer : layers_) {
    std::vector<float> p = layer.weights;
    p.insert(p.end(), layer.bias.begin(), layer.bias.end());
    out.push_back(std::move(p));
  }
  return out;
}

HeadOutputs ToyDetector::forward(Tape& tape, Var image) const {
  Var h = tape.relu(tape.conv2d(image, layers_[0]));
  h = tape.relu(tape.conv2d(h, layers_[1]));
  h = tape.relu(tape.conv2d(h, layers_[2]));
  const Var cls = tape.conv2d(h, layers_[3]);
  const Var reg = tape.conv2d(h, layers_[4]);

  // Head channel r*per + j at cell (gy, gx) belongs to anchor (gy*G + gx)*A + r.
  auto layout = [](int per) {
    std::vector<std::size_t> source;
    source.reserve(static_cast<std::size_t>(kAnchors * per));
    for (int gy = 0; gy < kGrid; ++gy)
      for (int gx = 0; gx < kGrid; ++gx)
        for (int r = 0; r < kAspects; ++r)
          for (int j = 0; j < per; ++j)
            source.push_back(static_cast<std::size_t>(((r * per + j) * kGrid + gy) * kGrid + gx));
    return source;
  };
  const Var logits = tape.gather(cls, layout(kClasses), {kAnchors, kClasses});
  const Var offsets = tape.gather(reg, layout(4), {kAnchors, 4});
  return HeadOutputs{logits, decode_boxes(tape, offsets, anchors_)};
}

}  // namespace dext
