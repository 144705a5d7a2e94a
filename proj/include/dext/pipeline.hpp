#pragma once

#include <optional>
#include <vector>

#include <json.hpp>

#include "dext/detector.hpp"
#include "dext/eval.hpp"
#include "dext/movis.hpp"
#include "dext/saliency.hpp"

// End-to-end operations shared by the command-line tool and the HTTP
// service, so both produce identical bytes for identical inputs.
namespace dext::pipeline {

struct ExplainRequest {
  int detection = 0;  // index into the post-NMS detection list
  DecisionKind decision = DecisionKind::ClassLogit;
  Method method = Method::GBP;
  MethodParams params;
  std::optional<int> class_id;  // explain another class, e.g. the wrongly predicted one
};

struct Explained {
  Detection detection;
  SaliencyMap map;
};

const Detection& pick(const std::vector<Detection>& detections, int index);
DecisionTarget target_of(const Detection& detection, const ExplainRequest& request);

Explained explain_detection(const DifferentiableDetector& model, const Tensor& image,
                            const std::vector<Detection>& detections, const ExplainRequest& request);

struct EvaluateRequest {
  ExplainRequest explain;
  Cause cause = Cause::Deletion;
  Effect effect = Effect::ClassMaxProb;
  Setting setting = Setting::SingleBox;
  EvalConfig config;
};

EvalCurve evaluate(const DifferentiableDetector& model, const Tensor& image, const std::vector<Detection>& detections,
                   const EvaluateRequest& request);

struct VisualizeRequest {
  MovisMethod movis = MovisMethod::ConvexPolygon;
  DecisionKind decision = DecisionKind::ClassLogit;
  Method method = Method::GBP;
  MethodParams params;
  MovisParams movis_params;
};

// Shape for one map; maps too degenerate for the method yield an empty or
// point-sized shape instead of failing the whole overlay.
CanonicalShape robust_shape(MovisMethod method, const SaliencyMap& map, const MovisParams& params, int detection_ref);

Overlay visualize(const DifferentiableDetector& model, const Tensor& image, const std::vector<Detection>& detections,
                  const VisualizeRequest& request);

nlohmann::json detector_config(const DifferentiableDetector& model);

}  // namespace dext::pipeline
