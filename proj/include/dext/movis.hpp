#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dext/detector.hpp"
#include "dext/saliency.hpp"
#include "dext/tensor.hpp"

namespace dext {

// Pixel-space point: x is the column, y the row.
struct Point {
  double x = 0;
  double y = 0;
  friend bool operator==(const Point&, const Point&) = default;
  friend auto operator<=>(const Point&, const Point&) = default;
};

struct ImportantPixelSet {
  std::vector<Point> points;
  std::vector<float> weights;
  float threshold = 0;
};

struct Ellipse {
  Point center;
  std::array<Point, 2> axes;      // unit vectors, major first
  std::array<double, 2> lengths;  // 2*sqrt(eigenvalue), major first
};

struct Polyline {
  std::vector<Point> points;
  bool closed = false;  // closing edge from back() to front() is implied
};

struct ContourLevel {
  double level = 0;
  std::vector<Polyline> lines;
};

struct ContourSet {
  std::vector<ContourLevel> levels;
};

inline constexpr int kNoise = -1;

struct ClusterSet {
  std::vector<Point> points;
  std::vector<int> labels;  // cluster id in [0, cluster_count) or kNoise
  int cluster_count = 0;
  double eps = 0;
  int min_pts = 0;
};

struct Polygon {
  std::vector<Point> vertices;  // counter-clockwise in (x, y) axes
  bool degenerate = false;      // fewer than 3 non-collinear points
};

struct CanonicalShape {
  std::variant<Ellipse, ContourSet, ClusterSet, Polygon> geometry;
  int detection_ref = 0;
  int color_index = 0;
};

enum class MovisMethod { PrincipalComponents, Contours, DensityClusters, ConvexPolygon };
inline constexpr MovisMethod kAllMovisMethods[] = {MovisMethod::PrincipalComponents, MovisMethod::Contours,
                                                   MovisMethod::DensityClusters, MovisMethod::ConvexPolygon};
std::string_view to_string(MovisMethod method);  // pca, contours, clusters, polygon
std::optional<MovisMethod> parse_movis_method(std::string_view name);

struct MovisParams {
  double quantile = 0.8;
  std::vector<double> contour_levels{0.5, 0.8};
  int min_pts = 4;
  std::optional<double> eps;  // k-distance elbow when unset
};

// Pixels whose value is at least the q-quantile (linear interpolation) of
// the map's nonzero values.
ImportantPixelSet select_important(const SaliencyMap& map, double quantile);

Ellipse to_ellipse(const ImportantPixelSet& pixels);

ContourSet to_contours(const SaliencyMap& map, const std::vector<double>& levels);
// Marching squares on a raw row-major grid; exposed for testing.
std::vector<Polyline> marching_squares(const std::vector<float>& grid, int height, int width, double level);

// Distance of every point to its k-th nearest other point, then the elbow of
// the descending curve (largest gap from its chord).
double k_distance_elbow(const std::vector<Point>& points, int k);

ClusterSet dbscan(const ImportantPixelSet& pixels, double eps, int min_pts);
ClusterSet dbscan(const std::vector<Point>& points, double eps, int min_pts);

// Monotone chain; counter-clockwise, collinear points dropped.
std::vector<Point> convex_hull(std::vector<Point> points);
Polygon to_convex_polygon(const ClusterSet& clusters);

// Canonical shape of one detection's map for the chosen method.
CanonicalShape shape_for(MovisMethod method, const SaliencyMap& map, const MovisParams& params,
                         int detection_ref);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

std::span<const Rgb> default_palette();  // 10 high-contrast colors

struct OverlayItem {
  int detection = 0;
  int color_index = 0;
  Box box;
  std::string label;
};

// Upscaled RGB raster with boxes, labels and shapes drawn in per-detection
// palette colors.
struct Overlay {
  int width = 0;
  int height = 0;
  int scale = 1;
  std::vector<Rgb> pixels;
  std::vector<OverlayItem> items;
  std::vector<CanonicalShape> shapes;  // color_index set to the detection's color
};

Overlay merge_visualization(const Tensor& image, const std::vector<Detection>& detections,
                            const std::vector<CanonicalShape>& shapes, std::size_t palette_size = 10,
                            int scale = 8);

}  // namespace dext
