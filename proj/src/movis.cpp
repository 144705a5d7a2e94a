#include "dext/movis.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>

#include "dext/error.hpp"

namespace dext {

std::string_view to_string(MovisMethod method) {
  switch (method) {
    case MovisMethod::PrincipalComponents: return "pca";
    case MovisMethod::Contours: return "contours";
    case MovisMethod::DensityClusters: return "clusters";
    case MovisMethod::ConvexPolygon: return "polygon";
  }
  return "pca";
}

std::optional<MovisMethod> parse_movis_method(std::string_view name) {
  for (MovisMethod m : kAllMovisMethods)
    if (to_string(m) == name) return m;
  return std::nullopt;
}

ImportantPixelSet select_important(const SaliencyMap& map, double quantile) {
  if (!(quantile > 0.0 && quantile < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "quantile must lie in (0,1)");
  }
  std::vector<float> nonzero;
  for (float v : map.grid)
    if (v != 0.0f) nonzero.push_back(v);
  if (nonzero.empty()) throw Error(ErrorCode::EmptyMap, "saliency map is all zeros");
  std::sort(nonzero.begin(), nonzero.end());
  const double pos = quantile * static_cast<double>(nonzero.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, nonzero.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  const auto threshold = static_cast<float>(nonzero[lo] + frac * (static_cast<double>(nonzero[hi]) - nonzero[lo]));

  ImportantPixelSet set;
  set.threshold = threshold;
  for (int r = 0; r < map.height; ++r) {
    for (int c = 0; c < map.width; ++c) {
      const float v = map.grid[static_cast<std::size_t>(r * map.width + c)];
      if (v != 0.0f && v >= threshold) {
        set.points.push_back(Point{static_cast<double>(c), static_cast<double>(r)});
        set.weights.push_back(v);
      }
    }
  }
  return set;
}

Ellipse to_ellipse(const ImportantPixelSet& pixels) {
  if (pixels.points.size() != pixels.weights.size()) {
    throw Error(ErrorCode::CountMismatch, "points vs weights");
  }
  double total = 0.0, mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < pixels.points.size(); ++i) {
    total += pixels.weights[i];
    mx += pixels.weights[i] * pixels.points[i].x;
    my += pixels.weights[i] * pixels.points[i].y;
  }
  if (!(total > 0.0)) throw Error(ErrorCode::DegenerateSpread, "no positive weight");
  mx /= total;
  my /= total;
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (std::size_t i = 0; i < pixels.points.size(); ++i) {
    const double dx = pixels.points[i].x - mx;
    const double dy = pixels.points[i].y - my;
    cov(0, 0) += pixels.weights[i] * dx * dx;
    cov(0, 1) += pixels.weights[i] * dx * dy;
    cov(1, 1) += pixels.weights[i] * dy * dy;
  }
  cov(1, 0) = cov(0, 1);
  cov /= total;
  if (cov.cwiseAbs().maxCoeff() <= 1e-15) {
    throw Error(ErrorCode::DegenerateSpread, "all important pixels coincide");
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> solver(cov);
  const Eigen::Vector2d values = solver.eigenvalues();  // ascending
  const Eigen::Matrix2d vectors = solver.eigenvectors();
  Ellipse e;
  e.center = {mx, my};
  e.axes[0] = {vectors(0, 1), vectors(1, 1)};
  e.axes[1] = {vectors(0, 0), vectors(1, 0)};
  e.lengths[0] = 2.0 * std::sqrt(std::max(values(1), 0.0));
  e.lengths[1] = 2.0 * std::sqrt(std::max(values(0), 0.0));
  return e;
}

namespace {

// Edge ids: horizontal edge from (r,c) to (r,c+1) is 2*(r*W+c); vertical
// edge from (r,c) to (r+1,c) is 2*(r*W+c)+1.
struct Segment {
  std::array<long, 2> edges;
  std::array<Point, 2> points;
};

}  // namespace

std::vector<Polyline> marching_squares(const std::vector<float>& grid, int height, int width, double level) {
  if (grid.size() != static_cast<std::size_t>(height) * width) {
    throw Error(ErrorCode::ShapeMismatch, "grid size");
  }
  auto at = [&](int r, int c) { return static_cast<double>(grid[static_cast<std::size_t>(r * width + c)]); };
  auto above = [&](int r, int c) { return at(r, c) >= level; };
  auto h_edge = [&](int r, int c) { return 2L * (static_cast<long>(r) * width + c); };
  auto v_edge = [&](int r, int c) { return 2L * (static_cast<long>(r) * width + c) + 1; };
  auto h_point = [&](int r, int c) {
    const double t = (level - at(r, c)) / (at(r, c + 1) - at(r, c));
    return Point{c + t, static_cast<double>(r)};
  };
  auto v_point = [&](int r, int c) {
    const double t = (level - at(r, c)) / (at(r + 1, c) - at(r, c));
    return Point{static_cast<double>(c), r + t};
  };

  std::vector<Segment> segments;
  for (int r = 0; r + 1 < height; ++r) {
    for (int c = 0; c + 1 < width; ++c) {
      // Sides in order top, right, bottom, left.
      const bool tl = above(r, c), tr = above(r, c + 1), br = above(r + 1, c + 1), bl = above(r + 1, c);
      struct Crossing {
        long edge;
        Point point;
      };
      std::vector<Crossing> crossed;
      if (tl != tr) crossed.push_back({h_edge(r, c), h_point(r, c)});
      if (tr != br) crossed.push_back({v_edge(r, c + 1), v_point(r, c + 1)});
      if (bl != br) crossed.push_back({h_edge(r + 1, c), h_point(r + 1, c)});
      if (tl != bl) crossed.push_back({v_edge(r, c), v_point(r, c)});
      if (crossed.size() == 2) {
        segments.push_back({{crossed[0].edge, crossed[1].edge}, {crossed[0].point, crossed[1].point}});
      } else if (crossed.size() == 4) {
        // Saddle: the cell-center average decides whether the above-level
        // corners connect through the middle.
        const double center = 0.25 * (at(r, c) + at(r, c + 1) + at(r + 1, c) + at(r + 1, c + 1));
        const bool joined = (center >= level) == tl;
        // crossed = top, right, bottom, left
        if (joined) {
          // tl region joins br: cut off tr and bl corners.
          segments.push_back({{crossed[0].edge, crossed[1].edge}, {crossed[0].point, crossed[1].point}});
          segments.push_back({{crossed[2].edge, crossed[3].edge}, {crossed[2].point, crossed[3].point}});
        } else {
          segments.push_back({{crossed[0].edge, crossed[3].edge}, {crossed[0].point, crossed[3].point}});
          segments.push_back({{crossed[1].edge, crossed[2].edge}, {crossed[1].point, crossed[2].point}});
        }
      }
    }
  }

  std::map<long, std::vector<std::size_t>> by_edge;
  for (std::size_t s = 0; s < segments.size(); ++s)
    for (long e : segments[s].edges) by_edge[e].push_back(s);

  std::vector<bool> used(segments.size(), false);
  auto walk = [&](std::size_t start, long entry_edge) {
    Polyline line;
    std::size_t seg = start;
    long edge = entry_edge;
    while (true) {
      used[seg] = true;
      const int side = segments[seg].edges[0] == edge ? 0 : 1;
      if (line.points.empty()) line.points.push_back(segments[seg].points[static_cast<std::size_t>(side)]);
      const long exit_edge = segments[seg].edges[static_cast<std::size_t>(1 - side)];
      const Point exit_point = segments[seg].points[static_cast<std::size_t>(1 - side)];
      std::optional<std::size_t> next;
      for (std::size_t cand : by_edge[exit_edge])
        if (!used[cand]) next = cand;
      if (!next) {
        // Either an open end or we came back to the start edge.
        if (exit_edge == entry_edge && by_edge[entry_edge].size() == 2) {
          line.closed = true;
        } else {
          line.points.push_back(exit_point);
        }
        break;
      }
      line.points.push_back(exit_point);
      seg = *next;
      edge = exit_edge;
    }
    return line;
  };

  std::vector<Polyline> lines;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    if (used[s]) continue;
    for (long e : segments[s].edges) {
      if (by_edge[e].size() == 1) {
        lines.push_back(walk(s, e));
        break;
      }
    }
  }
  for (std::size_t s = 0; s < segments.size(); ++s) {
    if (!used[s]) lines.push_back(walk(s, segments[s].edges[0]));
  }
  return lines;
}

ContourSet to_contours(const SaliencyMap& map, const std::vector<double>& levels) {
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!(levels[i] > 0.0 && levels[i] < 1.0) || (i > 0 && levels[i] <= levels[i - 1])) {
      throw Error(ErrorCode::InvalidArgument, "contour levels must increase strictly within (0,1)");
    }
  }
  ContourSet set;
  for (double level : levels) {
    set.levels.push_back(ContourLevel{level, marching_squares(map.grid, map.height, map.width, level)});
  }
  return set;
}

namespace {

double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

double k_distance_elbow(const std::vector<Point>& points, int k) {
  if (points.size() < 2 || k < 1) return 1.0;
  std::vector<double> kdist;
  kdist.reserve(points.size());
  std::vector<double> d;
  for (std::size_t i = 0; i < points.size(); ++i) {
    d.clear();
    for (std::size_t j = 0; j < points.size(); ++j)
      if (j != i) d.push_back(distance(points[i], points[j]));
    const std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(k), d.size()) - 1;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(idx), d.end());
    kdist.push_back(d[idx]);
  }
  std::sort(kdist.begin(), kdist.end(), std::greater<>());
  const std::size_t n = kdist.size();
  if (n < 3) return std::max(kdist.back(), 1e-9);
  const double x0 = 0.0, y0 = kdist.front();
  const double x1 = static_cast<double>(n - 1), y1 = kdist.back();
  const double norm = std::hypot(x1 - x0, y1 - y0);
  std::size_t best = 0;
  double best_gap = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double gap = std::abs((y1 - y0) * static_cast<double>(i) - (x1 - x0) * kdist[i] + x1 * y0 - y1 * x0) / norm;
    if (gap > best_gap) {
      best_gap = gap;
      best = i;
    }
  }
  return std::max(kdist[best], 1e-9);
}

ClusterSet dbscan(const std::vector<Point>& points, double eps, int min_pts) {
  if (!(eps > 0.0) || min_pts < 1) throw Error(ErrorCode::InvalidArgument, "dbscan needs eps > 0, min_pts >= 1");
  const std::size_t n = points.size();
  auto neighbors = [&](std::size_t i) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < n; ++j)
      if (distance(points[i], points[j]) <= eps) out.push_back(j);  // includes i
    return out;
  };
  constexpr int kUnvisited = -2;
  ClusterSet set;
  set.points = points;
  set.labels.assign(n, kUnvisited);
  set.eps = eps;
  set.min_pts = min_pts;
  for (std::size_t i = 0; i < n; ++i) {
    if (set.labels[i] != kUnvisited) continue;
    const auto seeds = neighbors(i);
    if (seeds.size() < static_cast<std::size_t>(min_pts)) {
      set.labels[i] = kNoise;
      continue;
    }
    const int cluster = set.cluster_count++;
    set.labels[i] = cluster;
    std::deque<std::size_t> queue(seeds.begin(), seeds.end());
    while (!queue.empty()) {
      const std::size_t j = queue.front();
      queue.pop_front();
      if (set.labels[j] == kNoise) set.labels[j] = cluster;  // border point
      if (set.labels[j] != kUnvisited) continue;
      set.labels[j] = cluster;
      const auto more = neighbors(j);
      if (more.size() >= static_cast<std::size_t>(min_pts)) queue.insert(queue.end(), more.begin(), more.end());
    }
  }
  return set;
}

ClusterSet dbscan(const ImportantPixelSet& pixels, double eps, int min_pts) {
  return dbscan(pixels.points, eps, min_pts);
}

namespace {

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

std::vector<Point> convex_hull(std::vector<Point> points) {
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());
  if (points.size() < 3) return points;
  std::vector<Point> hull(2 * points.size());
  std::size_t k = 0;
  for (const Point& p : points) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = points.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], points[i]) <= 0) --k;
    hull[k++] = points[i];
  }
  hull.resize(k - 1);
  return hull;
}

Polygon to_convex_polygon(const ClusterSet& clusters) {
  std::vector<Point> members;
  for (std::size_t i = 0; i < clusters.points.size(); ++i)
    if (clusters.labels[i] != kNoise) members.push_back(clusters.points[i]);
  Polygon poly;
  poly.vertices = convex_hull(members);
  if (poly.vertices.size() < 3) {
    // Collinear or tiny input: keep the extreme points as a segment.
    poly.degenerate = true;
    if (!members.empty()) {
      const auto [lo, hi] = std::minmax_element(members.begin(), members.end());
      poly.vertices = *lo == *hi ? std::vector<Point>{*lo} : std::vector<Point>{*lo, *hi};
    }
  }
  return poly;
}

CanonicalShape shape_for(MovisMethod method, const SaliencyMap& map, const MovisParams& params,
                         int detection_ref) {
  CanonicalShape shape;
  shape.detection_ref = detection_ref;
  if (method == MovisMethod::Contours) {
    shape.geometry = to_contours(map, params.contour_levels);
    return shape;
  }
  const ImportantPixelSet pixels = select_important(map, params.quantile);
  if (method == MovisMethod::PrincipalComponents) {
    shape.geometry = to_ellipse(pixels);
    return shape;
  }
  const double eps = params.eps.value_or(k_distance_elbow(pixels.points, params.min_pts));
  ClusterSet clusters = dbscan(pixels, eps, params.min_pts);
  if (method == MovisMethod::DensityClusters) {
    shape.geometry = std::move(clusters);
  } else {
    shape.geometry = to_convex_polygon(clusters);
  }
  return shape;
}

std::span<const Rgb> default_palette() {
  static constexpr std::array<Rgb, 10> kPalette{{{230, 25, 75},
                                                 {60, 180, 75},
                                                 {0, 130, 200},
                                                 {245, 130, 48},
                                                 {145, 30, 180},
                                                 {70, 240, 240},
                                                 {240, 50, 230},
                                                 {210, 245, 60},
                                                 {255, 225, 25},
                                                 {0, 0, 128}}};
  return kPalette;
}

namespace {

class Canvas {
 public:
  Canvas(int width, int height) : width_(width), height_(height), pixels_(static_cast<std::size_t>(width) * height) {}

  void set(int x, int y, Rgb c) {
    if (x >= 0 && y >= 0 && x < width_ && y < height_) pixels_[static_cast<std::size_t>(y * width_ + x)] = c;
  }

  void line(double x0, double y0, double x1, double y1, Rgb c) {
    const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      set(static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
    }
  }

  void rect(double x0, double y0, double x1, double y1, Rgb c) {
    line(x0, y0, x1, y0, c);
    line(x1, y0, x1, y1, c);
    line(x1, y1, x0, y1, c);
    line(x0, y1, x0, y0, c);
  }

  void fill(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) set(x, y, c);
  }

  std::vector<Rgb> take() && { return std::move(pixels_); }
  std::vector<Rgb>& pixels() { return pixels_; }

 private:
  int width_;
  int height_;
  std::vector<Rgb> pixels_;
};

// 3x5 digit glyphs, one bit per cell, rows top to bottom.
constexpr std::array<std::array<std::uint8_t, 5>, 10> kDigits{{{7, 5, 5, 5, 7},
                                                               {2, 6, 2, 2, 7},
                                                               {7, 1, 7, 4, 7},
                                                               {7, 1, 7, 1, 7},
                                                               {5, 5, 7, 1, 1},
                                                               {7, 4, 7, 1, 7},
                                                               {7, 4, 7, 5, 7},
                                                               {7, 1, 1, 1, 1},
                                                               {7, 5, 7, 5, 7},
                                                               {7, 5, 7, 1, 7}}};

void draw_label(Canvas& canvas, int x, int y, const std::string& text, Rgb color) {
  const int glyph_w = 4 * 2;
  canvas.fill(x, y, x + static_cast<int>(text.size()) * glyph_w + 2, y + 12, color);
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] < '0' || text[i] > '9') continue;
    const auto& glyph = kDigits[static_cast<std::size_t>(text[i] - '0')];
    for (int row = 0; row < 5; ++row)
      for (int col = 0; col < 3; ++col)
        if (glyph[static_cast<std::size_t>(row)] & (4 >> col))
          canvas.fill(x + 2 + static_cast<int>(i) * glyph_w + col * 2, y + 1 + row * 2,
                      x + 4 + static_cast<int>(i) * glyph_w + col * 2, y + 3 + row * 2, Rgb{255, 255, 255});
  }
}

}  // namespace

Overlay merge_visualization(const Tensor& image, const std::vector<Detection>& detections,
                            const std::vector<CanonicalShape>& shapes, std::size_t palette_size, int scale) {
  if (shapes.size() != detections.size()) {
    throw Error(ErrorCode::CountMismatch, std::to_string(detections.size()) + " detections vs " +
                                              std::to_string(shapes.size()) + " shapes");
  }
  const auto palette = default_palette();
  palette_size = std::clamp<std::size_t>(palette_size, 1, palette.size());
  const int h = image.dim(1), w = image.dim(2);
  Overlay overlay;
  overlay.width = w * scale;
  overlay.height = h * scale;
  overlay.scale = scale;
  Canvas canvas(overlay.width, overlay.height);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  auto to_byte = [](float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); };
  for (int y = 0; y < overlay.height; ++y) {
    for (int x = 0; x < overlay.width; ++x) {
      const std::size_t src = static_cast<std::size_t>((y / scale) * w + x / scale);
      canvas.set(x, y, Rgb{to_byte(image[src]), to_byte(image[plane + src]), to_byte(image[2 * plane + src])});
    }
  }

  auto px = [scale](double v) { return (v + 0.5) * scale; };
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const int color_index = static_cast<int>(i % palette_size);
    const Rgb color = palette[static_cast<std::size_t>(color_index)];
    CanonicalShape shape = shapes[i];
    shape.color_index = color_index;

    std::visit(
        [&](const auto& g) {
          using T = std::decay_t<decltype(g)>;
          if constexpr (std::is_same_v<T, Ellipse>) {
            constexpr int kSamples = 96;
            Point prev{};
            for (int s = 0; s <= kSamples; ++s) {
              const double t = 2.0 * 3.14159265358979323846 * s / kSamples;
              const double a = 0.5 * g.lengths[0] * std::cos(t), b = 0.5 * g.lengths[1] * std::sin(t);
              const Point p{g.center.x + a * g.axes[0].x + b * g.axes[1].x,
                            g.center.y + a * g.axes[0].y + b * g.axes[1].y};
              if (s > 0) canvas.line(px(prev.x), px(prev.y), px(p.x), px(p.y), color);
              prev = p;
            }
            canvas.fill(static_cast<int>(px(g.center.x)) - 1, static_cast<int>(px(g.center.y)) - 1,
                        static_cast<int>(px(g.center.x)) + 2, static_cast<int>(px(g.center.y)) + 2, color);
          } else if constexpr (std::is_same_v<T, ContourSet>) {
            for (const auto& level : g.levels) {
              for (const auto& line : level.lines) {
                for (std::size_t k = 1; k < line.points.size(); ++k)
                  canvas.line(px(line.points[k - 1].x), px(line.points[k - 1].y), px(line.points[k].x),
                              px(line.points[k].y), color);
                if (line.closed && line.points.size() > 2)
                  canvas.line(px(line.points.back().x), px(line.points.back().y), px(line.points.front().x),
                              px(line.points.front().y), color);
              }
            }
          } else if constexpr (std::is_same_v<T, ClusterSet>) {
            for (std::size_t k = 0; k < g.points.size(); ++k) {
              if (g.labels[k] == kNoise) continue;
              const int cx = static_cast<int>(px(g.points[k].x)), cy = static_cast<int>(px(g.points[k].y));
              canvas.fill(cx - 1, cy - 1, cx + 2, cy + 2, color);
            }
          } else {
            const auto& v = g.vertices;
            for (std::size_t k = 0; k < v.size(); ++k) {
              const Point& a = v[k];
              const Point& b = v[(k + 1) % v.size()];
              canvas.line(px(a.x), px(a.y), px(b.x), px(b.y), color);
            }
          }
        },
        shape.geometry);

    const Box& box = detections[i].box;
    canvas.rect(box.x_min * overlay.width, box.y_min * overlay.height,
                box.x_max * overlay.width - 1, box.y_max * overlay.height - 1, color);
    const std::string label = std::to_string(detections[i].class_id);
    draw_label(canvas, static_cast<int>(box.x_min * overlay.width), static_cast<int>(box.y_min * overlay.height), label,
               color);
    overlay.items.push_back(OverlayItem{static_cast<int>(i), color_index, box, label});
    overlay.shapes.push_back(std::move(shape));
  }
  overlay.pixels = std::move(canvas).take();
  return overlay;
}

}  // namespace dext
