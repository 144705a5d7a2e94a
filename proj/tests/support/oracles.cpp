#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dext/io.hpp"
#include "dext/scene.hpp"

namespace oracle {
namespace {

using Grid = std::vector<double>;

Grid conv(const dext::ConvLayer& layer, const Grid& in) {
  const auto& g = layer.geometry;
  const int oh = g.out_height(), ow = g.out_width();
  Grid out(static_cast<std::size_t>(g.out_channels * oh * ow));
  for (int o = 0; o < g.out_channels; ++o) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = layer.bias[static_cast<std::size_t>(o)];
        for (int c = 0; c < g.in_channels; ++c) {
          for (int ky = 0; ky < g.kernel; ++ky) {
            for (int kx = 0; kx < g.kernel; ++kx) {
              const int iy = y * g.stride - g.padding + ky;
              const int ix = x * g.stride - g.padding + kx;
              if (iy < 0 || ix < 0 || iy >= g.in_height || ix >= g.in_width) continue;
              const double w = layer.weights[static_cast<std::size_t>(((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx)];
              acc += w * in[static_cast<std::size_t>((c * g.in_height + iy) * g.in_width + ix)];
            }
          }
        }
        out[static_cast<std::size_t>((o * oh + y) * ow + x)] = acc;
      }
    }
  }
  return out;
}

Grid relu(Grid v) {
  for (double& x : v) x = std::max(x, 0.0);
  return v;
}

}  // namespace

ToyForward toy_forward(const dext::ToyDetector& model, const std::vector<double>& image) {
  using TD = dext::ToyDetector;
  const auto& L = model.layers();
  ToyForward f;
  Grid h = image;
  for (int l = 0; l < 3; ++l) {
    f.preact.push_back(conv(L[static_cast<std::size_t>(l)], h));
    h = relu(f.preact.back());
  }
  const Grid cls = conv(L[3], h);
  const Grid reg = conv(L[4], h);
  const int G = TD::kGrid, R = TD::kAspects, K = TD::kClasses;
  const auto anchors = model.anchors();
  for (int gy = 0; gy < G; ++gy) {
    for (int gx = 0; gx < G; ++gx) {
      for (int r = 0; r < R; ++r) {
        const int a = (gy * G + gx) * R + r;
        for (int j = 0; j < K; ++j) f.logits.push_back(cls[static_cast<std::size_t>(((r * K + j) * G + gy) * G + gx)]);
        double t[4];
        for (int j = 0; j < 4; ++j) {
          t[j] = reg[static_cast<std::size_t>(((r * 4 + j) * G + gy) * G + gx)];
          f.offsets.push_back(t[j]);
        }
        const auto& an = anchors[static_cast<std::size_t>(a)];
        const double cx = an.cx + t[0] * an.w;
        const double cy = an.cy + t[1] * an.h;
        const double w = an.w * std::exp(std::min(t[2], double{dext::kMaxLogScale}));
        const double hh = an.h * std::exp(std::min(t[3], double{dext::kMaxLogScale}));
        const double c[4] = {cx - w / 2, cy - hh / 2, cx + w / 2, cy + hh / 2};
        for (double v : c) {
          f.unclipped.push_back(v);
          f.boxes.push_back(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }
  return f;
}

double toy_target(const ToyForward& f, const dext::DecisionTarget& t) {
  const auto a = static_cast<std::size_t>(t.anchor_index);
  switch (t.kind) {
    case dext::DecisionKind::ClassLogit:
      return f.logits[a * dext::ToyDetector::kClasses + static_cast<std::size_t>(t.class_id)];
    case dext::DecisionKind::XMin: return f.boxes[a * 4 + 0];
    case dext::DecisionKind::YMin: return f.boxes[a * 4 + 1];
    case dext::DecisionKind::XMax: return f.boxes[a * 4 + 2];
    case dext::DecisionKind::YMax: return f.boxes[a * 4 + 3];
  }
  return 0;
}

std::vector<std::vector<char>> influence(const dext::ToyDetector& model, int input_index) {
  const auto& L = model.layers();
  std::vector<char> reach(static_cast<std::size_t>(L[0].geometry.input_size()), 0);
  reach[static_cast<std::size_t>(input_index)] = 1;
  std::vector<std::vector<char>> out;
  for (int l = 0; l < 3; ++l) {
    const auto& g = L[static_cast<std::size_t>(l)].geometry;
    const int oh = g.out_height(), ow = g.out_width();
    std::vector<char> next(static_cast<std::size_t>(g.output_size()), 0);
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        bool hit = false;
        for (int c = 0; c < g.in_channels && !hit; ++c)
          for (int ky = 0; ky < g.kernel && !hit; ++ky)
            for (int kx = 0; kx < g.kernel && !hit; ++kx) {
              const int iy = y * g.stride - g.padding + ky;
              const int ix = x * g.stride - g.padding + kx;
              if (iy < 0 || ix < 0 || iy >= g.in_height || ix >= g.in_width) continue;
              hit = reach[static_cast<std::size_t>((c * g.in_height + iy) * g.in_width + ix)] != 0;
            }
        if (!hit) continue;
        for (int o = 0; o < g.out_channels; ++o) next[static_cast<std::size_t>((o * oh + y) * ow + x)] = 1;
      }
    }
    out.push_back(next);
    reach = std::move(next);
  }
  return out;
}

std::vector<double> guided_two_layer(const dext::AffineLayer& l1, const dext::AffineLayer& l2,
                                     const std::vector<double>& x, int out) {
  auto affine = [](const dext::AffineLayer& l, const std::vector<double>& v) {
    std::vector<double> y(static_cast<std::size_t>(l.rows));
    for (int r = 0; r < l.rows; ++r) {
      double acc = l.bias[static_cast<std::size_t>(r)];
      for (int c = 0; c < l.cols; ++c) acc += double{l.weights[static_cast<std::size_t>(r * l.cols + c)]} * v[static_cast<std::size_t>(c)];
      y[static_cast<std::size_t>(r)] = acc;
    }
    return y;
  };
  auto transpose_mul = [](const dext::AffineLayer& l, const std::vector<double>& g) {
    std::vector<double> v(static_cast<std::size_t>(l.cols), 0.0);
    for (int c = 0; c < l.cols; ++c) {
      double acc = 0;
      for (int r = 0; r < l.rows; ++r) acc += double{l.weights[static_cast<std::size_t>(r * l.cols + c)]} * g[static_cast<std::size_t>(r)];
      v[static_cast<std::size_t>(c)] = acc;
    }
    return v;
  };
  auto gbp = [](const std::vector<double>& f, std::vector<double> r) {
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = (f[i] > 0 && r[i] > 0) ? r[i] : 0.0;
    return r;
  };
  const auto z1 = affine(l1, x);
  const auto a1 = relu(z1);
  const auto z2 = affine(l2, a1);
  std::vector<double> r(z2.size(), 0.0);
  r[static_cast<std::size_t>(out)] = 1.0;
  r = gbp(z2, r);
  r = gbp(z1, transpose_mul(l2, r));
  return transpose_mul(l1, r);
}

std::string check_dbscan(const dext::ClusterSet& cs) {
  const std::size_t n = cs.points.size();
  auto close = [&](std::size_t i, std::size_t j) {
    return std::hypot(cs.points[i].x - cs.points[j].x, cs.points[i].y - cs.points[j].y) <= cs.eps;
  };
  std::vector<char> core(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t count = 0;
    for (std::size_t j = 0; j < n; ++j) count += close(i, j);
    core[i] = count >= static_cast<std::size_t>(cs.min_pts);
  }
  // Components of the core graph by repeated relaxation.
  std::vector<std::size_t> comp(n);
  for (std::size_t i = 0; i < n; ++i) comp[i] = i;
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (core[i] && core[j] && close(i, j) && comp[j] < comp[i]) comp[i] = comp[j], changed = true;
  }
  std::map<std::size_t, int> to_label;
  std::map<int, std::size_t> from_label;
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i]) continue;
    const int label = cs.labels[i];
    if (label < 0) return "core point " + std::to_string(i) + " labeled noise";
    auto [it, fresh] = to_label.emplace(comp[i], label);
    if (it->second != label) return "core component split at point " + std::to_string(i);
    auto [jt, fresh2] = from_label.emplace(label, comp[i]);
    if (jt->second != comp[i]) return "two core components share label " + std::to_string(label);
  }
  if (static_cast<int>(to_label.size()) != cs.cluster_count) return "cluster count differs";
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) continue;
    bool valid_attach = false, any_core = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (!core[j] || !close(i, j)) continue;
      any_core = true;
      valid_attach = valid_attach || to_label.at(comp[j]) == cs.labels[i];
    }
    if (!any_core && cs.labels[i] != dext::kNoise) return "noise point " + std::to_string(i) + " clustered";
    if (any_core && !valid_attach) return "border point " + std::to_string(i) + " attached to a non-adjacent cluster";
  }
  return {};
}

std::set<Point> hull_vertices_cubic(const std::vector<Point>& input) {
  std::vector<Point> pts = input;
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return {pts.begin(), pts.end()};
  std::set<Point> out;
  for (const Point& p : pts) {
    for (const Point& q : pts) {
      if (p == q) continue;
      bool edge = true;
      for (const Point& r : pts) {
        const double cr = (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x);
        if (cr < 0) edge = false;
        if (cr == 0) {
          const double t = (r.x - p.x) * (q.x - p.x) + (r.y - p.y) * (q.y - p.y);
          const double len = (q.x - p.x) * (q.x - p.x) + (q.y - p.y) * (q.y - p.y);
          if (t < 0 || t > len) edge = false;
        }
        if (!edge) break;
      }
      if (edge) out.insert(p), out.insert(q);
    }
  }
  return out;
}

double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
  double area = 0;
  for (std::size_t i = 1; i < x.size(); ++i) area += (x[i] - x[i - 1]) * (y[i] + y[i - 1]) / 2;
  return area;
}

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dext-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<std::uint8_t> scene_png(std::uint64_t seed) {
  return dext::io::encode_png(dext::make_scene(seed).image);
}

}  // namespace oracle
