#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dext/detector.hpp"
#include "dext/eval.hpp"
#include "dext/movis.hpp"
#include "dext/ranking.hpp"
#include "dext/saliency.hpp"
#include "dext/tensor.hpp"

namespace dext::io {

using Bytes = std::vector<std::uint8_t>;
using nlohmann::json;

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file(const std::filesystem::path& path, const std::string& text);

// First 16 hex digits of the SHA-256 of the bytes.
std::string content_hash(std::span<const std::uint8_t> bytes);
std::string content_hash(const std::string& text);

// PNG -> [3,H,W] floats in [0,1]; any color type is converted to RGB.
Tensor decode_png(std::span<const std::uint8_t> bytes);
Bytes encode_png(const std::vector<Rgb>& pixels, int width, int height);
Bytes encode_png(const Tensor& image);
Bytes encode_png(const Overlay& overlay);

Tensor resize_bilinear(const Tensor& image, int height, int width);

struct IngestedImage {
  Tensor image;           // model input size
  int source_height = 0;
  int source_width = 0;
  bool resized = false;
};
IngestedImage ingest_png(std::span<const std::uint8_t> bytes, int height, int width);

// Colormapped heatmap of a normalized map, upscaled by `scale`.
Bytes heatmap_png(const SaliencyMap& map, int scale = 8);

// Weight file: "DXTW", u32 version, then per layer u32 count + float32 data.
inline constexpr std::uint32_t kWeightVersion = 1;
Bytes encode_weights(const ToyDetector& model);
ToyDetector decode_weights(std::span<const std::uint8_t> bytes, PostProcessConfig config = {});

// Saliency grid file: "DXTS", u32 version, u32 H, u32 W, H*W float32.
inline constexpr std::uint32_t kSaliencyVersion = 1;
Bytes encode_saliency(const SaliencyMap& map);
SaliencyMap decode_saliency(std::span<const std::uint8_t> bytes);
json saliency_sidecar(const SaliencyMap& map, const MethodParams& params);

json to_json(const Box& box);
json to_json(const Detection& detection);
json to_json(const std::vector<Detection>& detections);
Detection detection_from_json(const json& j);
std::vector<Detection> detections_from_json(const json& j);
json to_json(const DecisionTarget& target);
json to_json(const MethodParams& params);
// Missing keys keep their defaults.
MethodParams method_params_from_json(const json& j);
json to_json(const CanonicalShape& shape);
json to_json(const EvalCurve& curve);

// "fraction,value" header, one row per point, shortest round-trip numbers.
std::string curve_csv(const EvalCurve& curve);
json curve_summary(const EvalCurve& curve, std::string_view method, const json& detector_config,
                   const DecisionTarget& target);

// One game as a single JSON line, without the trailing newline.
std::string to_jsonl(const Game& game);
std::vector<Game> parse_game_log(std::istream& in);

// Subject column, one column per metric, then Overall.
std::string rank_table_csv(const RankTable& table, std::string_view subject_header = "method");

struct NumericTable {
  std::vector<std::string> rows;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> values;  // empty cells are NaN
};
NumericTable parse_numeric_csv(const std::string& text);

std::string format_number(double value);

}  // namespace dext::io
