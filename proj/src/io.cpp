#include "dext/io.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "dext/error.hpp"

namespace dext::io {
namespace {

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(Bytes& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  put_u32(out, bits);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void magic(std::string_view expected) {
    need(expected.size());
    if (std::memcmp(bytes_.data() + pos_, expected.data(), expected.size()) != 0) {
      throw Error(ErrorCode::Format, "bad magic, expected " + std::string(expected));
    }
    pos_ += expected.size();
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorCode::Format, "truncated file");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string content_hash(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::Io, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < 8; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 15]);
  }
  return out;
}

std::string content_hash(const std::string& text) {
  return content_hash(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Tensor decode_png(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::Format, std::string("not a PNG: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::Format, "PNG decode failed: " + message);
  }
  const int h = static_cast<int>(image.height), w = static_cast<int>(image.width);
  Tensor out({3, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) out[c * plane + i] = buffer[3 * i + c] / 255.0f;
  return out;
}

Bytes encode_png(const std::vector<Rgb>& pixels, int width, int height) {
  if (pixels.size() != static_cast<std::size_t>(width) * height) throw Error(ErrorCode::ShapeMismatch, "pixel count");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> raw;
  raw.reserve(pixels.size() * 3);
  for (const Rgb& p : pixels) {
    raw.push_back(p.r);
    raw.push_back(p.g);
    raw.push_back(p.b);
  }
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, raw.data(), 0, nullptr)) {
    throw Error(ErrorCode::Format, std::string("PNG sizing failed: ") + image.message);
  }
  Bytes out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, raw.data(), 0, nullptr)) {
    throw Error(ErrorCode::Format, std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

Bytes encode_png(const Tensor& image) {
  const int h = image.dim(1), w = image.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<Rgb> pixels(plane);
  for (std::size_t i = 0; i < plane; ++i)
    pixels[i] = Rgb{to_byte(image[i]), to_byte(image[plane + i]), to_byte(image[2 * plane + i])};
  return encode_png(pixels, w, h);
}

Bytes encode_png(const Overlay& overlay) { return encode_png(overlay.pixels, overlay.width, overlay.height); }

Tensor resize_bilinear(const Tensor& image, int height, int width) {
  const int c_count = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == height && w == width) return image;
  Tensor out({c_count, height, width});
  const double sy = static_cast<double>(h) / height, sx = static_cast<double>(w) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      for (int c = 0; c < c_count; ++c) {
        auto at = [&](int yy, int xx) { return static_cast<double>(image[static_cast<std::size_t>((c * h + yy) * w + xx)]); };
        const double v = (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x1)) + ty * ((1 - tx) * at(y1, x0) + tx * at(y1, x1));
        out[static_cast<std::size_t>((c * height + y) * width + x)] = static_cast<float>(v);
      }
    }
  }
  return out;
}

IngestedImage ingest_png(std::span<const std::uint8_t> bytes, int height, int width) {
  IngestedImage result;
  const Tensor decoded = decode_png(bytes);
  result.source_height = decoded.dim(1);
  result.source_width = decoded.dim(2);
  result.resized = result.source_height != height || result.source_width != width;
  result.image = resize_bilinear(decoded, height, width);
  return result;
}

Bytes heatmap_png(const SaliencyMap& map, int scale) {
  const int w = map.width * scale, h = map.height * scale;
  std::vector<Rgb> pixels(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float v = map.grid[static_cast<std::size_t>((y / scale) * map.width + x / scale)];
      // black -> red -> yellow -> white
      pixels[static_cast<std::size_t>(y * w + x)] =
          Rgb{to_byte(3.0f * v), to_byte(3.0f * v - 1.0f), to_byte(3.0f * v - 2.0f)};
    }
  }
  return encode_png(pixels, w, h);
}

Bytes encode_weights(const ToyDetector& model) {
  Bytes out{'D', 'X', 'T', 'W'};
  put_u32(out, kWeightVersion);
  for (const auto& payload : model.payloads()) {
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    for (float v : payload) put_f32(out, v);
  }
  return out;
}

ToyDetector decode_weights(std::span<const std::uint8_t> bytes, PostProcessConfig config) {
  Reader in(bytes);
  in.magic("DXTW");
  const std::uint32_t version = in.u32();
  if (version != kWeightVersion) throw Error(ErrorCode::Format, "unsupported weight version " + std::to_string(version));
  std::vector<std::vector<float>> payloads;
  for (std::size_t expected : ToyDetector::payload_sizes()) {
    const std::uint32_t count = in.u32();
    if (count != expected) {
      throw Error(ErrorCode::Format, "layer " + std::to_string(payloads.size()) + " holds " + std::to_string(count) +
                                         " values, expected " + std::to_string(expected));
    }
    std::vector<float> payload(count);
    for (float& v : payload) v = in.f32();
    payloads.push_back(std::move(payload));
  }
  if (!in.done()) throw Error(ErrorCode::Format, "trailing bytes in weight file");
  return ToyDetector::from_payloads(payloads, config);
}

Bytes encode_saliency(const SaliencyMap& map) {
  Bytes out{'D', 'X', 'T', 'S'};
  put_u32(out, kSaliencyVersion);
  put_u32(out, static_cast<std::uint32_t>(map.height));
  put_u32(out, static_cast<std::uint32_t>(map.width));
  for (float v : map.grid) put_f32(out, v);
  return out;
}

SaliencyMap decode_saliency(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  in.magic("DXTS");
  const std::uint32_t version = in.u32();
  if (version != kSaliencyVersion) throw Error(ErrorCode::Format, "unsupported saliency version " + std::to_string(version));
  SaliencyMap map;
  map.height = static_cast<int>(in.u32());
  map.width = static_cast<int>(in.u32());
  map.grid.resize(static_cast<std::size_t>(map.height) * static_cast<std::size_t>(map.width));
  for (float& v : map.grid) v = in.f32();
  if (!in.done()) throw Error(ErrorCode::Format, "trailing bytes in saliency file");
  return map;
}

json to_json(const DecisionTarget& target) {
  json j{{"anchor_index", target.anchor_index}, {"kind", std::string(to_string(target.kind))}};
  if (target.kind == DecisionKind::ClassLogit) j["class_id"] = target.class_id;
  return j;
}

json to_json(const MethodParams& params) {
  return json{{"ig_steps", params.ig_steps},
              {"ig_baseline", params.ig_baseline.kind == Baseline::Kind::Black ? "black" : "gray"},
              {"ig_baseline_value", params.ig_baseline.kind == Baseline::Kind::Black ? 0.0f : params.ig_baseline.value},
              {"sg_samples", params.sg_samples},
              {"sg_sigma", params.sg_sigma},
              {"seed", params.seed}};
}

MethodParams method_params_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "params must be an object");
  MethodParams p;
  p.ig_steps = j.value("ig_steps", p.ig_steps);
  p.sg_samples = j.value("sg_samples", p.sg_samples);
  p.sg_sigma = j.value("sg_sigma", p.sg_sigma);
  p.seed = j.value("seed", p.seed);
  const std::string baseline = j.value("ig_baseline", std::string("black"));
  if (baseline == "gray") {
    p.ig_baseline = {Baseline::Kind::Gray, j.value("ig_baseline_value", 0.5f)};
  } else if (baseline != "black") {
    throw Error(ErrorCode::InvalidArgument, "unknown baseline '" + baseline + "'");
  }
  if (p.ig_steps < 1) throw Error(ErrorCode::InvalidArgument, "ig_steps must be positive");
  if (p.sg_samples < 1) throw Error(ErrorCode::InvalidArgument, "sg_samples must be positive");
  if (!(p.sg_sigma >= 0.0)) throw Error(ErrorCode::InvalidArgument, "sg_sigma must be non-negative");
  return p;
}

json saliency_sidecar(const SaliencyMap& map, const MethodParams& params) {
  return json{{"target", to_json(map.target)},
              {"method", std::string(to_string(map.method))},
              {"params", to_json(params)},
              {"raw_range", {map.raw_range.first, map.raw_range.second}}};
}

json to_json(const Box& box) { return json::array({box.x_min, box.y_min, box.x_max, box.y_max}); }

json to_json(const Detection& d) {
  return json{{"box", to_json(d.box)},
              {"class_id", d.class_id},
              {"score", d.score},
              {"anchor_index", d.anchor_index},
              {"logits", d.logits}};
}

json to_json(const std::vector<Detection>& detections) {
  json arr = json::array();
  for (const auto& d : detections) arr.push_back(to_json(d));
  return arr;
}

Detection detection_from_json(const json& j) {
  try {
    Detection d;
    const auto box = j.at("box").get<std::vector<float>>();
    if (box.size() != 4) throw Error(ErrorCode::Format, "box needs 4 values");
    d.box = Box{box[0], box[1], box[2], box[3]};
    d.class_id = j.at("class_id").get<int>();
    d.score = j.at("score").get<float>();
    d.anchor_index = j.at("anchor_index").get<int>();
    d.logits = j.at("logits").get<std::vector<float>>();
    return d;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("detection JSON: ") + e.what());
  }
}

std::vector<Detection> detections_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::Format, "detection list must be an array");
  std::vector<Detection> out;
  for (const auto& item : j) out.push_back(detection_from_json(item));
  return out;
}

namespace {

json points_json(const std::vector<Point>& points) {
  json arr = json::array();
  for (const auto& p : points) arr.push_back({p.x, p.y});
  return arr;
}

}  // namespace

json to_json(const CanonicalShape& shape) {
  json j{{"detection_ref", shape.detection_ref}, {"color_index", shape.color_index}};
  std::visit(
      [&](const auto& g) {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, Ellipse>) {
          j["variant"] = "ellipse";
          j["geometry"] = {{"center", {g.center.x, g.center.y}},
                           {"axes", {{g.axes[0].x, g.axes[0].y}, {g.axes[1].x, g.axes[1].y}}},
                           {"lengths", {g.lengths[0], g.lengths[1]}}};
        } else if constexpr (std::is_same_v<T, ContourSet>) {
          j["variant"] = "contours";
          json levels = json::array();
          for (const auto& level : g.levels) {
            json lines = json::array();
            for (const auto& line : level.lines) lines.push_back({{"points", points_json(line.points)}, {"closed", line.closed}});
            levels.push_back({{"level", level.level}, {"polylines", lines}});
          }
          j["geometry"] = {{"levels", levels}};
        } else if constexpr (std::is_same_v<T, ClusterSet>) {
          j["variant"] = "clusters";
          j["geometry"] = {{"points", points_json(g.points)},
                           {"labels", g.labels},
                           {"cluster_count", g.cluster_count},
                           {"eps", g.eps},
                           {"min_pts", g.min_pts}};
        } else {
          j["variant"] = "polygon";
          j["geometry"] = {{"vertices", points_json(g.vertices)}, {"degenerate", g.degenerate}};
        }
      },
      shape.geometry);
  return j;
}

std::string format_number(double value) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc{}) throw Error(ErrorCode::Format, "number formatting");
  return std::string(buf, end);
}

json to_json(const EvalCurve& curve) {
  json points = json::array();
  for (const auto& [f, v] : curve.points) points.push_back({f, v});
  return json{{"code", curve.code}, {"auc", curve.auc}, {"points", points}};
}

std::string curve_csv(const EvalCurve& curve) {
  std::string out = "fraction,value\n";
  for (const auto& [f, v] : curve.points) out += format_number(f) + "," + format_number(v) + "\n";
  return out;
}

json curve_summary(const EvalCurve& curve, std::string_view method, const json& detector_config,
                   const DecisionTarget& target) {
  return json{{"code", curve.code},
              {"auc", curve.auc},
              {"method", std::string(method)},
              {"detector_config", detector_config},
              {"target", to_json(target)}};
}

std::string to_jsonl(const Game& game) {
  return json{{"a", game.a}, {"b", game.b}, {"score", game.score}, {"ts", game.ts}}.dump();
}

std::vector<Game> parse_game_log(std::istream& in) {
  std::vector<Game> games;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      games.push_back(Game{j.at("a").get<std::string>(), j.at("b").get<std::string>(), j.at("score").get<int>(),
                           j.value("ts", std::int64_t{0})});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Format, "game log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return games;
}

std::string rank_table_csv(const RankTable& table, std::string_view subject_header) {
  std::string out(subject_header);
  for (const auto& m : table.metrics) out += "," + m;
  out += ",Overall\n";
  for (std::size_t i = 0; i < table.subjects.size(); ++i) {
    out += table.subjects[i];
    for (int r : table.ranks[i]) out += "," + std::to_string(r);
    out += "," + std::to_string(table.overall[i]) + "\n";
  }
  return out;
}

NumericTable parse_numeric_csv(const std::string& text) {
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cell.erase(0, cell.find_first_not_of(" \t"));
      cell.erase(cell.find_last_not_of(" \t\r") + 1);
      cells.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  std::stringstream in(text);
  std::string line;
  NumericTable table;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split(line);
    if (header) {
      if (cells.size() < 2) throw Error(ErrorCode::Format, "table header needs a label and one column");
      table.columns.assign(cells.begin() + 1, cells.end());
      header = false;
      continue;
    }
    table.rows.push_back(cells.at(0));
    std::vector<double> values(table.columns.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t c = 1; c < cells.size() && c <= table.columns.size(); ++c) {
      if (cells[c].empty()) continue;
      try {
        values[c - 1] = std::stod(cells[c]);
      } catch (const std::exception&) {
        throw Error(ErrorCode::Format, "not a number: " + cells[c]);
      }
    }
    table.values.push_back(std::move(values));
  }
  return table;
}

}  // namespace dext::io
