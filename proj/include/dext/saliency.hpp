#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dext/detector.hpp"
#include "dext/tape.hpp"
#include "dext/tensor.hpp"

namespace dext {

enum class DecisionKind { ClassLogit, XMin, YMin, XMax, YMax };
enum class Method { GBP, IG, SGBP, SIG };

inline constexpr DecisionKind kAllDecisions[] = {DecisionKind::ClassLogit, DecisionKind::XMin,
                                                 DecisionKind::YMin, DecisionKind::XMax,
                                                 DecisionKind::YMax};
inline constexpr Method kAllMethods[] = {Method::GBP, Method::IG, Method::SGBP, Method::SIG};

std::string_view to_string(DecisionKind kind);   // class, x_min, y_min, x_max, y_max
std::string_view to_string(Method method);       // gbp, ig, sgbp, sig
std::optional<DecisionKind> parse_decision(std::string_view name);
std::optional<Method> parse_method(std::string_view name);

// One scalar decision of one anchor: a class logit or a decoded coordinate.
struct DecisionTarget {
  int anchor_index = 0;
  DecisionKind kind = DecisionKind::ClassLogit;
  int class_id = 0;  // only meaningful for ClassLogit

  friend bool operator==(const DecisionTarget&, const DecisionTarget&) = default;
};

// The decision of `detection` selected by `kind`; class targets use the
// detection's predicted class.
DecisionTarget target_for(const Detection& detection, DecisionKind kind);

struct Baseline {
  enum class Kind { Black, Gray } kind = Kind::Black;
  float value = 0.5f;  // used by Gray
};

struct MethodParams {
  int ig_steps = 64;
  Baseline ig_baseline;
  int sg_samples = 15;
  double sg_sigma = 0.15;  // fraction of the input value range
  std::uint64_t seed = 0;  // SmoothGrad noise stream
};

// Per-pixel importance. `raw` is the channel-reduced attribution before
// normalization; `grid` is its min-max normalization into [0,1].
struct SaliencyMap {
  int height = 0;
  int width = 0;
  std::vector<float> grid;
  std::vector<float> raw;
  DecisionTarget target;
  Method method = Method::GBP;
  std::pair<float, float> raw_range{0.0f, 0.0f};
};

// Records the forward pass and returns the targeted scalar.
ScalarRef select_target(const DifferentiableDetector& model, Tape& tape, const HeadOutputs& heads,
                        const DecisionTarget& target);

// F(x) for the target, evaluated without gradients.
double target_value(const DifferentiableDetector& model, const Tensor& image,
                    const DecisionTarget& target);

// Signed d target / d input, shape of the image.
Tensor input_gradient(const DifferentiableDetector& model, const Tensor& image,
                      const DecisionTarget& target, GradientRule rule);

// Signed per-input integrated-gradients attribution (trapezoid rule along the
// straight path from the baseline), shape of the image.
Tensor integrated_gradients(const DifferentiableDetector& model, const Tensor& image,
                            const DecisionTarget& target, const MethodParams& params);

Tensor make_baseline(const Tensor& image, const Baseline& baseline);

// Sum of absolute per-channel values of a [C,H,W] attribution.
std::vector<float> reduce_channels(const Tensor& attribution);

// Builds a map from a raw [H*W] grid: records raw_range and min-max
// normalizes (all zeros when the raw grid is constant).
SaliencyMap finish_map(std::vector<float> raw, int height, int width, const DecisionTarget& target,
                       Method method);

// Guided rule gives GBP; Standard gives the plain gradient map.
SaliencyMap explain_gradient(const DifferentiableDetector& model, const Tensor& image,
                             const DecisionTarget& target, GradientRule rule);

SaliencyMap explain_ig(const DifferentiableDetector& model, const Tensor& image,
                       const DecisionTarget& target, const MethodParams& params);

// Averages the base method's raw maps over sg_samples noisy copies of the
// image and normalizes once. `base` must be GBP or IG.
SaliencyMap explain_smoothgrad(Method base, const DifferentiableDetector& model, const Tensor& image,
                               const DecisionTarget& target, const MethodParams& params);

// Dispatch on any of the four methods.
SaliencyMap explain(Method method, const DifferentiableDetector& model, const Tensor& image,
                    const DecisionTarget& target, const MethodParams& params = {});

struct GroundTruthTarget {
  DecisionTarget target;
  double best_iou = 0.0;
  bool no_overlap = false;  // fell back to the nearest-center anchor
};

// Pre-NMS anchor whose decoded box best overlaps the ground truth, targeting
// the ground-truth class logit. Callers may retarget the kind or class.
GroundTruthTarget target_from_groundtruth(const DifferentiableDetector& model, const Tensor& image,
                                          const Box& gt_box, int gt_class);

}  // namespace dext
