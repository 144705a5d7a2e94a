#include "dext/pipeline.hpp"

#include "dext/error.hpp"
#include "dext/io.hpp"

namespace dext::pipeline {

const Detection& pick(const std::vector<Detection>& detections, int index) {
  if (index < 0 || static_cast<std::size_t>(index) >= detections.size()) {
    throw Error(ErrorCode::InvalidArgument, "detection " + std::to_string(index) + " of " +
                                                std::to_string(detections.size()));
  }
  return detections[static_cast<std::size_t>(index)];
}

DecisionTarget target_of(const Detection& detection, const ExplainRequest& request) {
  DecisionTarget target = target_for(detection, request.decision);
  if (request.class_id && request.decision == DecisionKind::ClassLogit) target.class_id = *request.class_id;
  return target;
}

Explained explain_detection(const DifferentiableDetector& model, const Tensor& image,
                            const std::vector<Detection>& detections, const ExplainRequest& request) {
  const Detection& d = pick(detections, request.detection);
  return Explained{d, explain(request.method, model, image, target_of(d, request), request.params)};
}

EvalCurve evaluate(const DifferentiableDetector& model, const Tensor& image, const std::vector<Detection>& detections,
                   const EvaluateRequest& request) {
  const Explained e = explain_detection(model, image, detections, request.explain);
  const EffectTracker tracker{request.effect, request.setting, e.detection};
  return curve(model, image, e.map, tracker, request.cause, request.config);
}

CanonicalShape robust_shape(MovisMethod method, const SaliencyMap& map, const MovisParams& params,
                            int detection_ref) {
  try {
    return shape_for(method, map, params, detection_ref);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EmptyMap && e.code() != ErrorCode::DegenerateSpread) throw;
  }
  CanonicalShape shape;
  shape.detection_ref = detection_ref;
  switch (method) {
    case MovisMethod::PrincipalComponents: {
      Ellipse point{};
      point.axes = {Point{1, 0}, Point{0, 1}};
      point.lengths = {0, 0};
      for (int i = 0; i < map.height * map.width; ++i) {
        if (map.grid[static_cast<std::size_t>(i)] == 1.0f) {
          point.center = {static_cast<double>(i % map.width), static_cast<double>(i / map.width)};
          break;
        }
      }
      shape.geometry = point;
      break;
    }
    case MovisMethod::Contours: shape.geometry = ContourSet{}; break;
    case MovisMethod::DensityClusters: shape.geometry = ClusterSet{}; break;
    case MovisMethod::ConvexPolygon: shape.geometry = Polygon{{}, true}; break;
  }
  return shape;
}

Overlay visualize(const DifferentiableDetector& model, const Tensor& image, const std::vector<Detection>& detections,
                  const VisualizeRequest& request) {
  std::vector<CanonicalShape> shapes;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    ExplainRequest er{static_cast<int>(i), request.decision, request.method, request.params, std::nullopt};
    const Explained e = explain_detection(model, image, detections, er);
    shapes.push_back(robust_shape(request.movis, e.map, request.movis_params, static_cast<int>(i)));
  }
  return merge_visualization(image, detections, shapes);
}

nlohmann::json detector_config(const DifferentiableDetector& model) {
  const auto shape = model.input_shape();
  const auto cfg = model.postprocess();
  return nlohmann::json{{"input_shape", shape},
                        {"num_classes", model.num_classes()},
                        {"num_anchors", model.num_anchors()},
                        {"score_threshold", cfg.score_threshold},
                        {"nms_iou", cfg.nms_iou}};
}

}  // namespace dext::pipeline
