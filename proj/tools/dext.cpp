#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "dext/error.hpp"
#include "dext/io.hpp"
#include "dext/pipeline.hpp"
#include "dext/ranking.hpp"
#include "dext/service.hpp"

namespace {

using namespace dext;
using io::json;

std::vector<std::string> names_of(auto const& values) {
  std::vector<std::string> out;
  for (auto v : values) out.emplace_back(to_string(v));
  return out;
}

struct Common {
  std::string weights;
  std::string image;
};

ToyDetector load_model(const Common& c) {
  if (c.weights.empty()) return ToyDetector::bundled();
  return io::decode_weights(io::read_file(c.weights));
}

struct Loaded {
  ToyDetector model;
  Tensor image;
  std::vector<Detection> detections;
};

Loaded load(const Common& c) {
  ToyDetector model = load_model(c);
  const auto shape = model.input_shape();
  Tensor image = io::ingest_png(io::read_file(c.image), shape[1], shape[2]).image;
  auto dets = detect(model, image);
  return {std::move(model), std::move(image), std::move(dets)};
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    io::write_file(path, text);
  }
}

struct ExplainFlags {
  int detection = 0;
  std::string decision = "class";
  std::string method = "gbp";
  std::optional<int> class_id;
  MethodParams params;
  std::string baseline = "black";
  float baseline_value = 0.5f;

  void add(CLI::App* app) {
    app->add_option("--detection", detection, "Detection index")->check(CLI::NonNegativeNumber);
    app->add_option("--decision", decision, "Decision to explain")
        ->check(CLI::IsMember(names_of(kAllDecisions)));
    app->add_option("--method", method, "Explanation method")->check(CLI::IsMember(names_of(kAllMethods)));
    app->add_option("--class-id", class_id, "Explain this class instead of the predicted one");
    app->add_option("--ig-steps", params.ig_steps, "Integrated-gradients steps")->check(CLI::PositiveNumber);
    app->add_option("--baseline", baseline, "Integrated-gradients baseline")->check(CLI::IsMember({"black", "gray"}));
    app->add_option("--baseline-value", baseline_value, "Gray baseline level")->check(CLI::Range(0.0f, 1.0f));
    app->add_option("--sg-samples", params.sg_samples, "SmoothGrad samples")->check(CLI::PositiveNumber);
    app->add_option("--sg-sigma", params.sg_sigma, "SmoothGrad noise level")->check(CLI::NonNegativeNumber);
    app->add_option("--seed", params.seed, "SmoothGrad noise seed");
  }

  pipeline::ExplainRequest request() const {
    MethodParams p = params;
    if (baseline == "gray") p.ig_baseline = {Baseline::Kind::Gray, baseline_value};
    return {detection, *parse_decision(decision), *parse_method(method), p, class_id};
  }
};

std::string text_of(const std::string& path) {
  const io::Bytes bytes = io::read_file(path);
  return {bytes.begin(), bytes.end()};
}

std::vector<Game> read_games(const std::string& path) {
  std::ifstream in(path);
  if (!in) return {};
  return io::parse_game_log(in);
}

std::string ratings_text(const EloLedger& ledger) {
  std::ostringstream out;
  out << "method,rating,games\n";
  for (const auto& [method, rating] : rank_by_rating(ledger)) {
    out << method << ',' << io::format_number(rating) << ',' << ledger.games_played(method) << '\n';
  }
  return out.str();
}

int run(int argc, char** argv) {
  CLI::App app{"Detector explanation toolkit"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--weights", common.weights, "DXTW weight file (default: bundled toy detector)")
      ->check(CLI::ExistingFile);

  auto add_image = [&](CLI::App* sub) {
    sub->add_option("--image", common.image, "Input PNG")->required()->check(CLI::ExistingFile);
  };

  auto* detect_cmd = app.add_subcommand("detect", "Run the detector and print detections as JSON");
  add_image(detect_cmd);
  std::string detect_out;
  detect_cmd->add_option("--out", detect_out, "Output JSON file");

  auto* explain_cmd = app.add_subcommand("explain", "Write a saliency grid and its JSON sidecar");
  add_image(explain_cmd);
  ExplainFlags explain_flags;
  explain_flags.add(explain_cmd);
  std::string explain_out;
  std::string heatmap_out;
  explain_cmd->add_option("--out", explain_out, "Output prefix for .dxts and .json")->required();
  explain_cmd->add_option("--heatmap", heatmap_out, "Also write a heatmap PNG");

  auto* movis_cmd = app.add_subcommand("movis", "Overlay canonical shapes for every detection");
  add_image(movis_cmd);
  ExplainFlags movis_flags;
  movis_flags.add(movis_cmd);
  std::string movis_method = "polygon";
  std::string movis_out;
  std::string shapes_out;
  movis_cmd->add_option("--movis-method", movis_method, "Visualization method")
      ->check(CLI::IsMember(names_of(kAllMovisMethods)));
  movis_cmd->add_option("--out", movis_out, "Overlay PNG")->required();
  movis_cmd->add_option("--shapes", shapes_out, "Also write the shapes as JSON");

  auto* eval_cmd = app.add_subcommand("evaluate", "Deletion or insertion curve as CSV");
  add_image(eval_cmd);
  ExplainFlags eval_flags;
  eval_flags.add(eval_cmd);
  std::string cause = "deletion";
  std::string effect = "C";
  std::string setting = "S";
  std::string eval_out;
  std::string summary_out;
  eval_cmd->add_option("--cause", cause, "deletion or insertion")->check(CLI::IsMember({"deletion", "insertion"}));
  eval_cmd->add_option("--effect", effect, "Effect letter")->check(CLI::IsMember({"C", "B", "M", "X", "Y", "W", "H"}));
  eval_cmd->add_option("--setting", setting, "S (single box) or R (realistic)")->check(CLI::IsMember({"S", "R"}));
  eval_cmd->add_option("--out", eval_out, "Curve CSV (default stdout)");
  eval_cmd->add_option("--summary", summary_out, "Also write a JSON summary with the AUC");

  auto* rank_cmd = app.add_subcommand("rank", "Aggregate per-metric results into an overall ranking");
  std::string rank_input;
  std::string rank_kind = "aauc";
  std::string rank_out;
  rank_cmd->add_option("--input", rank_input, "CSV with one row per method and one column per metric")
      ->required()
      ->check(CLI::ExistingFile);
  rank_cmd->add_option("--kind", rank_kind, "Cells hold AAUC values or precomputed ranks")
      ->check(CLI::IsMember({"aauc", "ranks"}));
  rank_cmd->add_option("--out", rank_out, "Rank table CSV (default stdout)");

  auto* study_cmd = app.add_subcommand("study", "Pairwise human study ledger");
  study_cmd->require_subcommand(1);
  std::string log_path;
  auto* record_cmd = study_cmd->add_subcommand("record", "Append one game");
  std::string game_a, game_b;
  int game_score = 0;
  record_cmd->add_option("--a", game_a, "First method")->required()->check(CLI::IsMember(names_of(kAllMethods)));
  record_cmd->add_option("--b", game_b, "Second method")->required()->check(CLI::IsMember(names_of(kAllMethods)));
  record_cmd->add_option("--score", game_score, "-2..2 from the first method's side")
      ->required()
      ->check(CLI::Range(-2, 2));
  record_cmd->add_option("--log", log_path, "Game log (JSON lines), appended to")->required();
  auto* ranking_cmd = study_cmd->add_subcommand("ranking", "Elo ratings replayed from the log");
  ranking_cmd->add_option("--log", log_path, "Game log (JSON lines)")->required()->check(CLI::ExistingFile);
  auto* votes_cmd = study_cmd->add_subcommand("votes", "Tally visualization votes, one answer per line");
  std::string votes_path;
  votes_cmd->add_option("--input", votes_path, "Vote file")->required()->check(CLI::ExistingFile);

  auto* serve_cmd = app.add_subcommand("serve", "Start the HTTP API");
  int port = 8080;
  std::string host = "127.0.0.1";
  std::string data_dir;
  std::uint64_t study_seed = 0;
  serve_cmd->add_option("--port", port, "Port")->check(CLI::Range(1, 65535));
  serve_cmd->add_option("--host", host, "Bind address");
  serve_cmd->add_option("--data-dir", data_dir, "Session directory (default: $DEXT_DATA_DIR)");
  serve_cmd->add_option("--study-seed", study_seed, "Seed for study question sampling");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  if (detect_cmd->parsed()) {
    const Loaded l = load(common);
    emit(detect_out, io::to_json(l.detections).dump(2) + "\n");
  } else if (explain_cmd->parsed()) {
    const Loaded l = load(common);
    const auto request = explain_flags.request();
    const auto e = pipeline::explain_detection(l.model, l.image, l.detections, request);
    io::write_file(explain_out + ".dxts", io::encode_saliency(e.map));
    io::write_file(explain_out + ".json", io::saliency_sidecar(e.map, request.params).dump(2) + "\n");
    if (!heatmap_out.empty()) io::write_file(heatmap_out, io::heatmap_png(e.map));
  } else if (movis_cmd->parsed()) {
    const Loaded l = load(common);
    const auto er = movis_flags.request();
    pipeline::VisualizeRequest request;
    request.movis = *parse_movis_method(movis_method);
    request.decision = er.decision;
    request.method = er.method;
    request.params = er.params;
    const Overlay overlay = pipeline::visualize(l.model, l.image, l.detections, request);
    io::write_file(movis_out, io::encode_png(overlay));
    if (!shapes_out.empty()) {
      json shapes = json::array();
      for (const auto& s : overlay.shapes) shapes.push_back(io::to_json(s));
      io::write_file(shapes_out, shapes.dump(2) + "\n");
    }
  } else if (eval_cmd->parsed()) {
    const Loaded l = load(common);
    pipeline::EvaluateRequest request;
    request.explain = eval_flags.request();
    request.cause = *parse_cause(cause);
    request.effect = *parse_effect(effect[0]);
    request.setting = *parse_setting(setting[0]);
    const EvalCurve c = pipeline::evaluate(l.model, l.image, l.detections, request);
    emit(eval_out, io::curve_csv(c));
    const DecisionTarget target = pipeline::target_of(pipeline::pick(l.detections, request.explain.detection),
                                                      request.explain);
    if (!summary_out.empty()) {
      io::write_file(summary_out, io::curve_summary(c, to_string(request.explain.method),
                                                    pipeline::detector_config(l.model), target)
                                          .dump(2) +
                                      "\n");
    }
    std::cerr << c.code << " auc=" << io::format_number(c.auc) << '\n';
  } else if (rank_cmd->parsed()) {
    const auto table = io::parse_numeric_csv(text_of(rank_input));
    RankTable ranks;
    if (rank_kind == "ranks") {
      std::vector<std::vector<int>> rows;
      for (const auto& r : table.values) {
        std::vector<int> row;
        for (double v : r) {
          if (std::isnan(v)) throw Error(ErrorCode::MissingCell, "empty rank cell");
          row.push_back(static_cast<int>(v));
        }
        rows.push_back(std::move(row));
      }
      ranks = overall_from_ranks(table.rows, table.columns, std::move(rows));
    } else {
      std::vector<Orientation> orientation;
      for (const auto& m : table.columns) orientation.push_back(orientation_for(m));
      ranks = aggregate_ranks(table.rows, table.columns, table.values, orientation);
    }
    emit(rank_out, io::rank_table_csv(ranks));
  } else if (record_cmd->parsed()) {
    const std::vector<std::string> methods = names_of(kAllMethods);
    EloLedger ledger = EloLedger::replay(methods, read_games(log_path));
    ledger.record_game(game_a, game_b, game_score,
                       std::chrono::duration_cast<std::chrono::seconds>(
                           std::chrono::system_clock::now().time_since_epoch())
                           .count());
    std::ofstream out(log_path, std::ios::app);
    out << io::to_jsonl(ledger.games().back()) << '\n';
    std::cout << ratings_text(ledger);
  } else if (ranking_cmd->parsed()) {
    const EloLedger ledger = EloLedger::replay(names_of(kAllMethods), read_games(log_path));
    std::cout << ratings_text(ledger);
  } else if (votes_cmd->parsed()) {
    std::ifstream in(votes_path);
    std::vector<std::string> answers;
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) answers.push_back(line);
    }
    const VoteTally tally = tally_votes(answers);
    std::cout << "option,votes\n";
    for (const auto& [option, n] : tally.counts) std::cout << option << ',' << n << '\n';
    std::cout << "total," << tally.total << '\n';
  } else if (serve_cmd->parsed()) {
    service::ServiceConfig config{data_dir.empty() ? service::default_data_dir() : std::filesystem::path(data_dir), study_seed};
    service::Service svc(load_model(common), config);
    std::cerr << "serving on " << host << ':' << port << " data=" << config.data_dir.string() << '\n';
    if (!svc.listen(host, port)) {
      std::cerr << "error: cannot listen on " << host << ':' << port << '\n';
      return 1;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const dext::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.code()) {
      case dext::ErrorCode::InvalidArgument:
      case dext::ErrorCode::UnknownMethod:
      case dext::ErrorCode::UnknownOption: return 2;
      default: return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
