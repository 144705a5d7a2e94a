#include "dext/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dext/error.hpp"

namespace dext {

char letter(Cause cause) { return cause == Cause::Deletion ? 'D' : 'I'; }

char letter(Effect effect) {
  switch (effect) {
    case Effect::ClassMaxProb: return 'C';
    case Effect::BoxIoU: return 'B';
    case Effect::BoxMoveDist: return 'M';
    case Effect::XTop: return 'X';
    case Effect::YTop: return 'Y';
    case Effect::Width: return 'W';
    case Effect::Height: return 'H';
  }
  return 'C';
}

char letter(Setting setting) { return setting == Setting::SingleBox ? 'S' : 'R'; }

std::string_view to_string(Cause cause) { return cause == Cause::Deletion ? "deletion" : "insertion"; }

std::optional<Cause> parse_cause(std::string_view name) {
  if (name == "deletion" || name == "D") return Cause::Deletion;
  if (name == "insertion" || name == "I") return Cause::Insertion;
  return std::nullopt;
}

std::optional<Effect> parse_effect(char c) {
  for (Effect e : kAllEffects)
    if (letter(e) == c) return e;
  return std::nullopt;
}

std::optional<Setting> parse_setting(char c) {
  for (Setting s : kAllSettings)
    if (letter(s) == c) return s;
  return std::nullopt;
}

std::string MetricCode::str() const { return {letter(cause), letter(effect), letter(setting)}; }

std::optional<MetricCode> MetricCode::parse(std::string_view code) {
  if (code.size() != 3) return std::nullopt;
  const auto cause = parse_cause(code.substr(0, 1));
  const auto effect = parse_effect(code[1]);
  const auto setting = parse_setting(code[2]);
  if (!cause || !effect || !setting) return std::nullopt;
  return MetricCode{*cause, *effect, *setting};
}

std::vector<MetricCode> all_metric_codes() {
  std::vector<MetricCode> codes;
  for (Cause c : kAllCauses)
    for (Effect e : kAllEffects)
      for (Setting s : kAllSettings) codes.push_back({c, e, s});
  return codes;
}

std::vector<double> fraction_grid(int points) {
  if (points < 2) throw Error(ErrorCode::InvalidArgument, "fraction grid needs at least 2 points");
  std::vector<double> grid(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) grid[static_cast<std::size_t>(i)] = static_cast<double>(i) / (points - 1);
  grid.back() = 1.0;
  return grid;
}

std::vector<int> saliency_order(const std::vector<float>& saliency) {
  std::vector<int> order(saliency.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return saliency[static_cast<std::size_t>(a)] > saliency[static_cast<std::size_t>(b)];
  });
  return order;
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  if (image.rank() != 3) throw Error(ErrorCode::ShapeMismatch, "blur expects [C,H,W]");
  if (sigma <= 0.0) return image;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (int i = -radius; i <= radius; ++i) kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  const double norm = std::accumulate(kernel.begin(), kernel.end(), 0.0);
  for (double& k : kernel) k /= norm;

  const int c_count = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor tmp(image.shape), out(image.shape);
  auto idx = [&](int c, int y, int x) { return static_cast<std::size_t>((c * h + y) * w + x); };
  for (int c = 0; c < c_count; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k)
          acc += kernel[static_cast<std::size_t>(k + radius)] * image[idx(c, y, std::clamp(x + k, 0, w - 1))];
        tmp[idx(c, y, x)] = static_cast<float>(acc);
      }
  for (int c = 0; c < c_count; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k)
          acc += kernel[static_cast<std::size_t>(k + radius)] * tmp[idx(c, std::clamp(y + k, 0, h - 1), x)];
        out[idx(c, y, x)] = static_cast<float>(acc);
      }
  return out;
}

ManipulationPlan ManipulationPlan::from_order(const Tensor& image, std::vector<int> order, Cause cause,
                                              const EvalConfig& config) {
  const std::size_t plane = static_cast<std::size_t>(image.dim(1)) * image.dim(2);
  if (order.size() != plane) throw Error(ErrorCode::ShapeMismatch, "pixel order length");
  std::vector<bool> seen(plane, false);
  for (int p : order) {
    if (p < 0 || static_cast<std::size_t>(p) >= plane || seen[static_cast<std::size_t>(p)]) {
      throw Error(ErrorCode::InvalidArgument, "pixel order is not a permutation");
    }
    seen[static_cast<std::size_t>(p)] = true;
  }
  ManipulationPlan plan;
  plan.cause = cause;
  plan.pixel_order = std::move(order);
  plan.fractions = fraction_grid(config.fraction_points);
  plan.deletion_fill = config.gray;
  if (cause == Cause::Insertion) plan.insertion_base = gaussian_blur(image, config.blur_sigma);
  return plan;
}

ManipulationPlan ManipulationPlan::from_saliency(const Tensor& image, const std::vector<float>& saliency,
                                                 Cause cause, const EvalConfig& config) {
  return from_order(image, saliency_order(saliency), cause, config);
}

Tensor manipulate(const Tensor& image, const ManipulationPlan& plan, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error(ErrorCode::InvalidArgument, "fraction outside [0,1]");
  const std::size_t plane = plan.pixel_order.size();
  const auto count = std::min(plane, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(plane) + 1e-9)));
  const int channels = image.dim(0);
  if (plan.cause == Cause::Deletion) {
    Tensor out = image;
    for (std::size_t i = 0; i < count; ++i) {
      const auto p = static_cast<std::size_t>(plan.pixel_order[i]);
      for (int c = 0; c < channels; ++c) out[c * plane + p] = plan.deletion_fill;
    }
    return out;
  }
  if (plan.insertion_base.shape != image.shape) throw Error(ErrorCode::ShapeMismatch, "insertion base");
  Tensor out = plan.insertion_base;
  for (std::size_t i = 0; i < count; ++i) {
    const auto p = static_cast<std::size_t>(plan.pixel_order[i]);
    for (int c = 0; c < channels; ++c) out[c * plane + p] = image[c * plane + p];
  }
  return out;
}

double effect_value(Effect effect, const Detection& reference, const Box& current, double current_prob, int width,
                    int height) {
  const Box& ref = reference.box;
  const double w = width, h = height;
  switch (effect) {
    case Effect::ClassMaxProb: return current_prob;
    case Effect::BoxIoU: return iou(current, ref);
    case Effect::BoxMoveDist:
      return std::hypot((current.x_min - ref.x_min) * w, (current.y_min - ref.y_min) * h) +
             std::hypot((current.x_max - ref.x_max) * w, (current.y_max - ref.y_max) * h);
    case Effect::XTop: return std::abs(static_cast<double>(current.x_min) - ref.x_min) * w;
    case Effect::YTop: return std::abs(static_cast<double>(current.y_min) - ref.y_min) * h;
    case Effect::Width: return std::abs(static_cast<double>(current.width()) - ref.width()) * w;
    case Effect::Height: return std::abs(static_cast<double>(current.height()) - ref.height()) * h;
  }
  return 0.0;
}

double unmatched_value(Effect effect, int width, int height) {
  if (effect == Effect::ClassMaxProb || effect == Effect::BoxIoU) return 0.0;
  return std::hypot(static_cast<double>(width), static_cast<double>(height));
}

namespace {

struct Observation {
  RawOutputs raw;
  std::vector<Detection> detections;
};

double single_box_effect(const RawOutputs& raw, const EffectTracker& t, int width, int height) {
  const Detection current = raw.at(t.reference.anchor_index);
  const auto k = static_cast<std::size_t>(raw.probs.dim(1));
  const double prob = raw.probs[static_cast<std::size_t>(t.reference.anchor_index) * k +
                                static_cast<std::size_t>(t.reference.class_id)];
  return effect_value(t.effect, t.reference, current.box, prob, width, height);
}

const Detection* realistic_match(const std::vector<Detection>& detections, const Detection& reference) {
  const Detection* best = nullptr;
  double best_iou = 0.9;
  for (const auto& d : detections) {
    if (d.class_id != reference.class_id) continue;
    const double overlap = iou(d.box, reference.box);
    if (overlap > best_iou) {
      best_iou = overlap;
      best = &d;
    }
  }
  return best;
}

double realistic_effect(const std::vector<Detection>& detections, const EffectTracker& t, int width, int height) {
  const Detection* match = realistic_match(detections, t.reference);
  if (!match) return unmatched_value(t.effect, width, height);
  return effect_value(t.effect, t.reference, match->box, match->score, width, height);
}

Observation observe(const DifferentiableDetector& model, const Tensor& image) {
  Observation obs;
  obs.raw = run(model, image);
  const auto cfg = model.postprocess();
  obs.detections = nms(candidates(obs.raw, cfg.score_threshold), cfg.nms_iou);
  return obs;
}

double tracked(const Observation& obs, const EffectTracker& t, int width, int height) {
  return t.setting == Setting::SingleBox ? single_box_effect(obs.raw, t, width, height)
                                         : realistic_effect(obs.detections, t, width, height);
}

std::string code_for(Cause cause, const EffectTracker& t) { return MetricCode{cause, t.effect, t.setting}.str(); }

}  // namespace

double track_single_box(const DifferentiableDetector& model, const Tensor& manipulated, const EffectTracker& tracker) {
  return single_box_effect(run(model, manipulated), tracker, manipulated.dim(2), manipulated.dim(1));
}

double track_realistic(const DifferentiableDetector& model, const Tensor& manipulated, const EffectTracker& tracker) {
  return realistic_effect(detect(model, manipulated), tracker, manipulated.dim(2), manipulated.dim(1));
}

double trapezoid_auc(const std::vector<std::pair<double, double>>& points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += 0.5 * (points[i].first - points[i - 1].first) * (points[i].second + points[i - 1].second);
  }
  return area;
}

EvalCurve curve_serial(const DifferentiableDetector& model, const Tensor& image, const ManipulationPlan& plan,
                       const EffectTracker& tracker) {
  EvalCurve out;
  out.code = code_for(plan.cause, tracker);
  for (double f : plan.fractions) {
    const Tensor manipulated = manipulate(image, plan, f);
    const double value = tracker.setting == Setting::SingleBox ? track_single_box(model, manipulated, tracker)
                                                               : track_realistic(model, manipulated, tracker);
    out.points.emplace_back(f, value);
  }
  out.auc = trapezoid_auc(out.points);
  return out;
}

EvalCurve curve(const DifferentiableDetector& model, const Tensor& image, const ManipulationPlan& plan,
                const EffectTracker& tracker) {
  EvalCurve out;
  out.code = code_for(plan.cause, tracker);
  out.points.resize(plan.fractions.size());
  const int n = static_cast<int>(plan.fractions.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    const double f = plan.fractions[static_cast<std::size_t>(i)];
    const Observation obs = observe(model, manipulate(image, plan, f));
    out.points[static_cast<std::size_t>(i)] = {f, tracked(obs, tracker, image.dim(2), image.dim(1))};
  }
  out.auc = trapezoid_auc(out.points);
  return out;
}

EvalCurve curve(const DifferentiableDetector& model, const Tensor& image, const SaliencyMap& saliency,
                const EffectTracker& tracker, Cause cause, const EvalConfig& config) {
  if (saliency.height != image.dim(1) || saliency.width != image.dim(2)) {
    throw Error(ErrorCode::ShapeMismatch, "saliency map does not match the image");
  }
  return curve(model, image, ManipulationPlan::from_saliency(image, saliency.grid, cause, config), tracker);
}

std::vector<EvalCurve> curves_for_plan(const DifferentiableDetector& model, const Tensor& image,
                                       const ManipulationPlan& plan, const Detection& reference) {
  std::vector<EffectTracker> trackers;
  for (Effect e : kAllEffects)
    for (Setting s : kAllSettings) trackers.push_back({e, s, reference});
  std::vector<EvalCurve> curves(trackers.size());
  for (std::size_t t = 0; t < trackers.size(); ++t) {
    curves[t].code = code_for(plan.cause, trackers[t]);
    curves[t].points.resize(plan.fractions.size());
  }
  const int n = static_cast<int>(plan.fractions.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    const double f = plan.fractions[static_cast<std::size_t>(i)];
    const Observation obs = observe(model, manipulate(image, plan, f));
    for (std::size_t t = 0; t < trackers.size(); ++t) {
      curves[t].points[static_cast<std::size_t>(i)] = {f, tracked(obs, trackers[t], image.dim(2), image.dim(1))};
    }
  }
  for (auto& c : curves) c.auc = trapezoid_auc(c.points);
  return curves;
}

AverageCurve aauc(const std::vector<EvalCurve>& curves) {
  if (curves.empty()) throw Error(ErrorCode::GridMismatch, "no curves to average");
  const auto& first = curves.front();
  AverageCurve result;
  result.mean.code = first.code;
  result.mean.points.assign(first.points.size(), {0.0, 0.0});
  for (const auto& c : curves) {
    if (c.code != first.code || c.points.size() != first.points.size()) {
      throw Error(ErrorCode::GridMismatch, "curve " + c.code + " does not share the grid of " + first.code);
    }
    for (std::size_t i = 0; i < c.points.size(); ++i) {
      if (c.points[i].first != first.points[i].first) throw Error(ErrorCode::GridMismatch, "fraction grids differ");
      result.mean.points[i].second += c.points[i].second;
    }
  }
  for (std::size_t i = 0; i < first.points.size(); ++i) {
    result.mean.points[i].first = first.points[i].first;
    result.mean.points[i].second /= static_cast<double>(curves.size());
  }
  result.mean.auc = trapezoid_auc(result.mean.points);
  result.aauc = result.mean.auc;
  return result;
}

double box_decision_aauc(const std::vector<std::vector<EvalCurve>>& per_coordinate) {
  if (per_coordinate.size() != 4) throw Error(ErrorCode::GridMismatch, "expected four coordinate curve sets");
  std::vector<EvalCurve> pooled;
  for (const auto& set : per_coordinate) pooled.insert(pooled.end(), set.begin(), set.end());
  return aauc(pooled).aauc;
}

}  // namespace dext
