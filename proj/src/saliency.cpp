#include "dext/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "dext/error.hpp"

namespace dext {

std::string_view to_string(DecisionKind kind) {
  switch (kind) {
    case DecisionKind::ClassLogit: return "class";
    case DecisionKind::XMin: return "x_min";
    case DecisionKind::YMin: return "y_min";
    case DecisionKind::XMax: return "x_max";
    case DecisionKind::YMax: return "y_max";
  }
  return "class";
}

std::string_view to_string(Method method) {
  switch (method) {
    case Method::GBP: return "gbp";
    case Method::IG: return "ig";
    case Method::SGBP: return "sgbp";
    case Method::SIG: return "sig";
  }
  return "gbp";
}

std::optional<DecisionKind> parse_decision(std::string_view name) {
  for (DecisionKind k : kAllDecisions)
    if (to_string(k) == name) return k;
  return std::nullopt;
}

std::optional<Method> parse_method(std::string_view name) {
  for (Method m : kAllMethods)
    if (to_string(m) == name) return m;
  return std::nullopt;
}

DecisionTarget target_for(const Detection& detection, DecisionKind kind) {
  return DecisionTarget{detection.anchor_index, kind,
                        kind == DecisionKind::ClassLogit ? detection.class_id : 0};
}

ScalarRef select_target(const DifferentiableDetector& model, Tape& tape, const HeadOutputs& heads,
                        const DecisionTarget& target) {
  const int anchors = model.num_anchors();
  const int classes = model.num_classes();
  if (target.anchor_index < 0 || target.anchor_index >= anchors) {
    throw Error(ErrorCode::TargetUnreachable, "anchor " + std::to_string(target.anchor_index) +
                                                  " outside [0," + std::to_string(anchors) + ")");
  }
  const auto a = static_cast<std::size_t>(target.anchor_index);
  if (target.kind == DecisionKind::ClassLogit) {
    if (target.class_id < 0 || target.class_id >= classes) {
      throw Error(ErrorCode::TargetUnreachable, "class " + std::to_string(target.class_id));
    }
    return tape.element(heads.logits, a * static_cast<std::size_t>(classes) +
                                          static_cast<std::size_t>(target.class_id));
  }
  const std::size_t coord = static_cast<std::size_t>(target.kind) - 1;
  return tape.element(heads.boxes, a * 4 + coord);
}

double target_value(const DifferentiableDetector& model, const Tensor& image,
                    const DecisionTarget& target) {
  Tape tape;
  const Var x = tape.input(image);
  const HeadOutputs heads = model.forward(tape, x);
  const ScalarRef seed = select_target(model, tape, heads, target);
  return tape.value(seed.var)[seed.index];
}

Tensor input_gradient(const DifferentiableDetector& model, const Tensor& image,
                      const DecisionTarget& target, GradientRule rule) {
  if (image.shape != model.input_shape()) {
    throw Error(ErrorCode::InputSizeMismatch, "image " + shape_string(image.shape));
  }
  Tape tape;
  const Var x = tape.input(image);
  const HeadOutputs heads = model.forward(tape, x);
  return tape.backward(select_target(model, tape, heads, target), rule);
}

Tensor make_baseline(const Tensor& image, const Baseline& baseline) {
  return Tensor(image.shape, baseline.kind == Baseline::Kind::Black ? 0.0f : baseline.value);
}

Tensor integrated_gradients(const DifferentiableDetector& model, const Tensor& image,
                            const DecisionTarget& target, const MethodParams& params) {
  if (params.ig_steps < 1) throw Error(ErrorCode::InvalidArgument, "ig_steps must be >= 1");
  const Tensor baseline = make_baseline(image, params.ig_baseline);
  const int steps = params.ig_steps;
  std::vector<double> integral(image.size(), 0.0);
  Tensor point(image.shape);
  for (int s = 0; s <= steps; ++s) {
    const double alpha = static_cast<double>(s) / steps;
    const double weight = (s == 0 || s == steps) ? 0.5 : 1.0;
    for (std::size_t i = 0; i < image.size(); ++i) {
      point[i] = static_cast<float>(baseline[i] + alpha * (image[i] - baseline[i]));
    }
    const Tensor grad = input_gradient(model, point, target, GradientRule::Standard);
    for (std::size_t i = 0; i < image.size(); ++i) integral[i] += weight * grad[i];
  }
  Tensor attribution(image.shape);
  for (std::size_t i = 0; i < image.size(); ++i) {
    attribution[i] = static_cast<float>((static_cast<double>(image[i]) - baseline[i]) * integral[i] / steps);
  }
  return attribution;
}

std::vector<float> reduce_channels(const Tensor& attribution) {
  if (attribution.rank() != 3) {
    throw Error(ErrorCode::ShapeMismatch, "attribution " + shape_string(attribution.shape));
  }
  const std::size_t plane = static_cast<std::size_t>(attribution.dim(1)) * attribution.dim(2);
  std::vector<float> out(plane, 0.0f);
  for (int c = 0; c < attribution.dim(0); ++c)
    for (std::size_t i = 0; i < plane; ++i) out[i] += std::abs(attribution[c * plane + i]);
  return out;
}

SaliencyMap finish_map(std::vector<float> raw, int height, int width, const DecisionTarget& target,
                       Method method) {
  SaliencyMap map;
  map.height = height;
  map.width = width;
  map.target = target;
  map.method = method;
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  map.raw_range = {*lo, *hi};
  map.grid.assign(raw.size(), 0.0f);
  const float span = *hi - *lo;
  if (span > 0.0f) {
    for (std::size_t i = 0; i < raw.size(); ++i) map.grid[i] = std::clamp((raw[i] - *lo) / span, 0.0f, 1.0f);
  }
  map.raw = std::move(raw);
  return map;
}

SaliencyMap explain_gradient(const DifferentiableDetector& model, const Tensor& image,
                             const DecisionTarget& target, GradientRule rule) {
  const Tensor grad = input_gradient(model, image, target, rule);
  return finish_map(reduce_channels(grad), image.dim(1), image.dim(2), target, Method::GBP);
}

SaliencyMap explain_ig(const DifferentiableDetector& model, const Tensor& image,
                       const DecisionTarget& target, const MethodParams& params) {
  const Tensor attribution = integrated_gradients(model, image, target, params);
  return finish_map(reduce_channels(attribution), image.dim(1), image.dim(2), target, Method::IG);
}

namespace {

std::vector<float> base_raw(Method base, const DifferentiableDetector& model, const Tensor& image,
                            const DecisionTarget& target, const MethodParams& params) {
  if (base == Method::GBP) {
    return reduce_channels(input_gradient(model, image, target, GradientRule::Guided));
  }
  return reduce_channels(integrated_gradients(model, image, target, params));
}

}  // namespace

SaliencyMap explain_smoothgrad(Method base, const DifferentiableDetector& model, const Tensor& image,
                               const DecisionTarget& target, const MethodParams& params) {
  if (base != Method::GBP && base != Method::IG) {
    throw Error(ErrorCode::UnknownMethod, "SmoothGrad wraps gbp or ig only");
  }
  if (params.sg_samples < 1) throw Error(ErrorCode::InvalidArgument, "sg_samples must be >= 1");
  if (!(params.sg_sigma >= 0.0 && params.sg_sigma <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "sg_sigma must lie in [0,1]");
  }
  const auto [lo, hi] = std::minmax_element(image.data.begin(), image.data.end());
  const double stddev = params.sg_sigma * (static_cast<double>(*hi) - *lo);

  std::mt19937_64 rng(params.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> total(image.size() / static_cast<std::size_t>(image.dim(0)), 0.0);
  Tensor noisy(image.shape);
  for (int n = 0; n < params.sg_samples; ++n) {
    for (std::size_t i = 0; i < image.size(); ++i) {
      noisy[i] = static_cast<float>(image[i] + stddev * noise(rng));
    }
    const std::vector<float> raw = base_raw(base, model, noisy, target, params);
    for (std::size_t i = 0; i < raw.size(); ++i) total[i] += raw[i];
  }
  std::vector<float> mean(total.size());
  for (std::size_t i = 0; i < total.size(); ++i) {
    mean[i] = static_cast<float>(total[i] / params.sg_samples);
  }
  return finish_map(std::move(mean), image.dim(1), image.dim(2), target,
                    base == Method::GBP ? Method::SGBP : Method::SIG);
}

SaliencyMap explain(Method method, const DifferentiableDetector& model, const Tensor& image,
                    const DecisionTarget& target, const MethodParams& params) {
  switch (method) {
    case Method::GBP: return explain_gradient(model, image, target, GradientRule::Guided);
    case Method::IG: return explain_ig(model, image, target, params);
    case Method::SGBP: return explain_smoothgrad(Method::GBP, model, image, target, params);
    case Method::SIG: return explain_smoothgrad(Method::IG, model, image, target, params);
  }
  throw Error(ErrorCode::UnknownMethod, "unknown method");
}

GroundTruthTarget target_from_groundtruth(const DifferentiableDetector& model, const Tensor& image,
                                          const Box& gt_box, int gt_class) {
  if (!(gt_box.x_min <= gt_box.x_max && gt_box.y_min <= gt_box.y_max)) {
    throw Error(ErrorCode::InvalidArgument, "ground-truth box corners out of order");
  }
  if (gt_class < 0 || gt_class >= model.num_classes()) {
    throw Error(ErrorCode::TargetUnreachable, "class " + std::to_string(gt_class));
  }
  const RawOutputs raw = run(model, image);
  GroundTruthTarget result;
  int best = -1;
  for (int a = 0; a < model.num_anchors(); ++a) {
    const double overlap = iou(raw.at(a).box, gt_box);
    if (overlap > result.best_iou) {
      result.best_iou = overlap;
      best = a;
    }
  }
  if (best < 0) {
    result.no_overlap = true;
    const double gx = 0.5 * (gt_box.x_min + gt_box.x_max);
    const double gy = 0.5 * (gt_box.y_min + gt_box.y_max);
    double nearest = std::numeric_limits<double>::infinity();
    for (int a = 0; a < model.num_anchors(); ++a) {
      const Box b = raw.at(a).box;
      const double dx = 0.5 * (b.x_min + b.x_max) - gx;
      const double dy = 0.5 * (b.y_min + b.y_max) - gy;
      if (dx * dx + dy * dy < nearest) {
        nearest = dx * dx + dy * dy;
        best = a;
      }
    }
  }
  result.target = DecisionTarget{best, DecisionKind::ClassLogit, gt_class};
  return result;
}

}  // namespace dext
