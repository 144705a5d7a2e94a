#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "dext/tape.hpp"
#include "dext/tensor.hpp"

namespace dext {

// Corner-form box in normalized [0,1] image coordinates; origin top-left.
struct Box {
  float x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  float width() const { return x_max - x_min; }
  float height() const { return y_max - y_min; }
  float area() const { return width() * height(); }
  friend bool operator==(const Box&, const Box&) = default;
};

// Center-size anchor in normalized coordinates.
struct Anchor {
  float cx = 0, cy = 0, w = 0, h = 0;
};

struct Offsets {
  float tx = 0, ty = 0, tw = 0, th = 0;
};

struct Detection {
  Box box;
  int class_id = 0;
  float score = 0;  // max softmax probability
  std::vector<float> logits;
  int anchor_index = -1;
};

// Upper bound applied to tw/th before exponentiation.
inline constexpr float kMaxLogScale = 4.135166556742356f;  // ln(1000/16)

Box corners(const Anchor& anchor);
Box decode_offsets(const Anchor& anchor, const Offsets& offsets);

// Intersection over union. Defined as 0 when both boxes have zero area.
double iou(const Box& a, const Box& b);

// Greedy per-class suppression by descending score (ties: lower anchor
// index first). Output is ordered by descending score, then anchor index.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold);

// Differentiable decode of an [A,4] offsets tensor into clipped [A,4] corners.
Var decode_boxes(Tape& tape, Var offsets, std::span<const Anchor> anchors);

struct HeadOutputs {
  Var logits;  // [A, K]
  Var boxes;   // [A, 4] decoded corners
};

struct PostProcessConfig {
  float score_threshold = 0.5f;
  float nms_iou = 0.5f;
};

// A detector whose classification logits and decoded box coordinates are
// recorded on a Tape. Class 0 is background. Implementations are immutable
// and safe to share between threads.
class DifferentiableDetector {
 public:
  virtual ~DifferentiableDetector() = default;

  virtual Shape input_shape() const = 0;  // [C, H, W]
  virtual int num_classes() const = 0;
  virtual std::span<const Anchor> anchors() const = 0;
  virtual PostProcessConfig postprocess() const = 0;
  virtual HeadOutputs forward(Tape& tape, Var image) const = 0;

  int num_anchors() const { return static_cast<int>(anchors().size()); }
};

// Pre-NMS outputs for every anchor.
struct RawOutputs {
  Tensor logits;  // [A, K]
  Tensor probs;   // [A, K]
  Tensor boxes;   // [A, 4]

  Detection at(int anchor_index) const;
};

RawOutputs run(const DifferentiableDetector& model, const Tensor& image);

// Anchors whose argmax class is not background and whose score clears the
// threshold, before suppression.
std::vector<Detection> candidates(const RawOutputs& raw, float score_threshold);

// Full pipeline: forward, threshold, NMS.
std::vector<Detection> detect(const DifferentiableDetector& model, const Tensor& image);

std::vector<Anchor> make_anchor_grid(int grid, std::span<const float> aspect_ratios, float scale);

// Fixed 32x32x3 input, three stride-2 conv+ReLU blocks, 3x3 class and box
// heads over a 4x4 grid with 3 aspect ratios (48 anchors), 5 classes.
class ToyDetector final : public DifferentiableDetector {
 public:
  static constexpr int kInputSize = 32;
  static constexpr int kChannels = 3;
  static constexpr int kGrid = 4;
  static constexpr int kAspects = 3;
  static constexpr int kClasses = 5;
  static constexpr int kAnchors = kGrid * kGrid * kAspects;
  static constexpr int kLayerCount = 5;
  static constexpr std::uint64_t kBundledSeed = 2022;

  // Deterministic pseudo-random weights.
  static ToyDetector random(std::uint64_t seed, PostProcessConfig config = {});
  static ToyDetector bundled(PostProcessConfig config = {}) { return random(kBundledSeed, config); }

  // Layers in order conv1, conv2, conv3, class head, box head; each payload
  // is weights followed by bias.
  static ToyDetector from_payloads(const std::vector<std::vector<float>>& payloads,
                                   PostProcessConfig config = {});
  std::vector<std::vector<float>> payloads() const;
  static std::vector<std::size_t> payload_sizes();

  Shape input_shape() const override { return {kChannels, kInputSize, kInputSize}; }
  int num_classes() const override { return kClasses; }
  std::span<const Anchor> anchors() const override { return anchors_; }
  PostProcessConfig postprocess() const override { return config_; }
  HeadOutputs forward(Tape& tape, Var image) const override;

  const std::array<ConvLayer, kLayerCount>& layers() const { return layers_; }

 private:
  ToyDetector();

  std::array<ConvLayer, kLayerCount> layers_;
  std::vector<Anchor> anchors_;
  PostProcessConfig config_;
};

}  // namespace dext
