#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dext/detector.hpp"
#include "dext/saliency.hpp"
#include "dext/tensor.hpp"

namespace dext {

enum class Cause { Deletion, Insertion };
enum class Effect { ClassMaxProb, BoxIoU, BoxMoveDist, XTop, YTop, Width, Height };
enum class Setting { SingleBox, Realistic };

inline constexpr Cause kAllCauses[] = {Cause::Deletion, Cause::Insertion};
inline constexpr Effect kAllEffects[] = {Effect::ClassMaxProb, Effect::BoxIoU, Effect::BoxMoveDist, Effect::XTop,
                                         Effect::YTop, Effect::Width, Effect::Height};
inline constexpr Setting kAllSettings[] = {Setting::SingleBox, Setting::Realistic};

char letter(Cause cause);      // D, I
char letter(Effect effect);    // C, B, M, X, Y, W, H
char letter(Setting setting);  // S, R
std::string_view to_string(Cause cause);  // deletion, insertion
std::optional<Cause> parse_cause(std::string_view name);
std::optional<Effect> parse_effect(char letter);
std::optional<Setting> parse_setting(char letter);

struct MetricCode {
  Cause cause = Cause::Deletion;
  Effect effect = Effect::ClassMaxProb;
  Setting setting = Setting::SingleBox;

  std::string str() const;
  static std::optional<MetricCode> parse(std::string_view code);
  friend bool operator==(const MetricCode&, const MetricCode&) = default;
};

// All 28 cause x effect x setting combinations, cause-major.
std::vector<MetricCode> all_metric_codes();

struct EvalConfig {
  float gray = 0.5f;
  double blur_sigma = 5.0;
  int fraction_points = 101;
};

struct ManipulationPlan {
  Cause cause = Cause::Deletion;
  std::vector<int> pixel_order;   // most important first
  std::vector<double> fractions;  // 0 ... 1
  float deletion_fill = 0.5f;
  Tensor insertion_base;          // blurred image

  // Order by descending saliency, ties by ascending pixel index.
  static ManipulationPlan from_saliency(const Tensor& image, const std::vector<float>& saliency, Cause cause,
                                        const EvalConfig& config = {});
  static ManipulationPlan from_order(const Tensor& image, std::vector<int> order, Cause cause,
                                     const EvalConfig& config = {});
};

std::vector<double> fraction_grid(int points);
std::vector<int> saliency_order(const std::vector<float>& saliency);

// Separable Gaussian blur, radius 3*sigma, edge-clamped.
Tensor gaussian_blur(const Tensor& image, double sigma);

// Pixels (all channels at once) among the first floor(f*H*W) in plan order
// are grayed (deletion) or restored into the blurred base (insertion).
Tensor manipulate(const Tensor& image, const ManipulationPlan& plan, double fraction);

struct EffectTracker {
  Effect effect = Effect::ClassMaxProb;
  Setting setting = Setting::SingleBox;
  Detection reference;
};

// Effect of `current` against `reference` for a W x H pixel image.
double effect_value(Effect effect, const Detection& reference, const Box& current_box, double current_prob,
                    int width, int height);
// Value used in the realistic setting when nothing matches the reference.
double unmatched_value(Effect effect, int width, int height);

double track_single_box(const DifferentiableDetector& model, const Tensor& manipulated, const EffectTracker& tracker);
double track_realistic(const DifferentiableDetector& model, const Tensor& manipulated, const EffectTracker& tracker);

struct EvalCurve {
  std::string code;
  std::vector<std::pair<double, double>> points;  // (fraction, effect)
  double auc = 0;
};

double trapezoid_auc(const std::vector<std::pair<double, double>>& points);

// Fractions evaluated in parallel; point order follows the plan.
EvalCurve curve(const DifferentiableDetector& model, const Tensor& image, const ManipulationPlan& plan,
                const EffectTracker& tracker);
// Serial reference of curve().
EvalCurve curve_serial(const DifferentiableDetector& model, const Tensor& image, const ManipulationPlan& plan,
                       const EffectTracker& tracker);
EvalCurve curve(const DifferentiableDetector& model, const Tensor& image, const SaliencyMap& saliency,
                const EffectTracker& tracker, Cause cause, const EvalConfig& config = {});

// All 14 effect/setting curves for one plan from a single forward per fraction.
std::vector<EvalCurve> curves_for_plan(const DifferentiableDetector& model, const Tensor& image,
                                       const ManipulationPlan& plan, const Detection& reference);

struct AverageCurve {
  EvalCurve mean;
  double aauc = 0;
};

AverageCurve aauc(const std::vector<EvalCurve>& curves);

// Pools the four coordinate curve sets of the bounding-box decision.
double box_decision_aauc(const std::vector<std::vector<EvalCurve>>& per_coordinate);

}  // namespace dext
