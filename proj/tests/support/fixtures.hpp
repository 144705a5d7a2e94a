#pragma once

#include <vector>

#include "dext/detector.hpp"

namespace fixture {

// Detector whose logits and box offsets are affine in the flattened image.
// Handy for hand-built weights and linear saliency targets.
class AffineDetector final : public dext::DifferentiableDetector {
 public:
  AffineDetector(dext::Shape input, std::vector<dext::Anchor> anchors, int classes)
      : input_(std::move(input)), anchors_(std::move(anchors)), classes_(classes) {
    const int n = static_cast<int>(dext::element_count(input_));
    const int a = static_cast<int>(anchors_.size());
    cls = {a * classes, n, std::vector<float>(static_cast<std::size_t>(a * classes * n), 0.0f),
           std::vector<float>(static_cast<std::size_t>(a * classes), 0.0f)};
    reg = {a * 4, n, std::vector<float>(static_cast<std::size_t>(a * 4 * n), 0.0f),
           std::vector<float>(static_cast<std::size_t>(a * 4), 0.0f)};
  }

  dext::Shape input_shape() const override { return input_; }
  int num_classes() const override { return classes_; }
  std::span<const dext::Anchor> anchors() const override { return anchors_; }
  dext::PostProcessConfig postprocess() const override { return config; }

  dext::HeadOutputs forward(dext::Tape& tape, dext::Var image) const override {
    const int a = static_cast<int>(anchors_.size());
    const dext::Var flat = tape.reshape(image, {static_cast<int>(dext::element_count(input_))});
    const dext::Var logits = tape.reshape(tape.affine(flat, cls), {a, classes_});
    const dext::Var offsets = tape.reshape(tape.affine(flat, reg), {a, 4});
    return {logits, dext::decode_boxes(tape, offsets, anchors_)};
  }

  float& logit_bias(int anchor, int k) { return cls.bias[static_cast<std::size_t>(anchor * classes_ + k)]; }
  float& logit_weight(int anchor, int k, int pixel) {
    return cls.weights[static_cast<std::size_t>((anchor * classes_ + k) * cls.cols + pixel)];
  }

  dext::AffineLayer cls;
  dext::AffineLayer reg;
  dext::PostProcessConfig config;

 private:
  dext::Shape input_;
  std::vector<dext::Anchor> anchors_;
  int classes_;
};

}  // namespace fixture
