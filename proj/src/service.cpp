#include "dext/service.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dext/error.hpp"
#include "dext/eval.hpp"
#include "dext/pipeline.hpp"

namespace dext::service {
namespace fs = std::filesystem;
using io::json;

namespace {

const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (Method m : kAllMethods) out.emplace_back(to_string(m));
    return out;
  }();
  return names;
}

std::vector<std::string> vote_options() {
  std::vector<std::string> out;
  for (MovisMethod m : kAllMovisMethods) out.emplace_back(to_string(m));
  out.emplace_back(kNoneOfTheMethods);
  return out;
}

std::int64_t now_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

void append_line(const fs::path& path, const std::string& line) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot append to " + path.string());
  out << line << '\n';
}

template <class T>
T required(const json& body, const char* key) {
  if (!body.contains(key)) throw HttpError(422, std::string("missing field '") + key + "'");
  try {
    return body.at(key).get<T>();
  } catch (const json::exception&) {
    throw HttpError(422, std::string("bad field '") + key + "'");
  }
}

DecisionKind decision_field(const std::string& name) {
  auto d = parse_decision(name);
  if (!d) throw HttpError(422, "unknown decision '" + name + "'");
  return *d;
}

Method method_field(const std::string& name) {
  auto m = parse_method(name);
  if (!m) throw HttpError(422, "unknown method '" + name + "'");
  return *m;
}

Cause cause_field(const std::string& name) {
  auto c = parse_cause(name);
  if (!c) throw HttpError(422, "unknown cause '" + name + "'");
  return *c;
}

Effect effect_field(const std::string& name) {
  auto e = name.size() == 1 ? parse_effect(name[0]) : std::nullopt;
  if (!e) throw HttpError(422, "unknown effect '" + name + "'");
  return *e;
}

Setting setting_field(const std::string& name) {
  auto s = name.size() == 1 ? parse_setting(name[0]) : std::nullopt;
  if (!s) throw HttpError(422, "unknown setting '" + name + "'");
  return *s;
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io:
    case ErrorCode::SeedNotOnTape:
    case ErrorCode::ShapeMismatch: return 500;
    default: return 422;
  }
}

json ratings_json(const EloLedger& ledger) {
  json rows = json::array();
  for (const auto& [method, rating] : rank_by_rating(ledger)) {
    rows.push_back({{"method", method}, {"rating", rating}, {"games", ledger.games_played(method)}});
  }
  return rows;
}

}  // namespace

fs::path default_data_dir() {
  if (const char* env = std::getenv("DEXT_DATA_DIR"); env && *env) return env;
  return "dext-data";
}

Service::Service(ToyDetector model, ServiceConfig config)
    : model_(std::move(model)), config_(std::move(config)), ledger_(method_names()), study_rng_(config_.study_seed) {
  fs::create_directories(config_.data_dir);
  load_ledger();
}

Service::~Service() = default;

void Service::load_ledger() {
  const fs::path games = config_.data_dir / "study" / "games.jsonl";
  if (fs::exists(games)) {
    std::ifstream in(games);
    ledger_ = EloLedger::replay(method_names(), io::parse_game_log(in));
  }
  const fs::path votes = config_.data_dir / "study" / "votes.jsonl";
  if (fs::exists(votes)) {
    std::ifstream in(votes);
    for (std::string line; std::getline(in, line);) {
      if (!line.empty()) votes_.push_back(json::parse(line).at("option").get<std::string>());
    }
  }
}

std::shared_ptr<const Service::ImageEntry> Service::image(const std::string& id) {
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = images_.find(id); it != images_.end()) return it->second;
  }
  const fs::path path = config_.data_dir / "images" / (id + ".png");
  if (id.find_first_of("/\\.") != std::string::npos || !fs::exists(path)) {
    throw HttpError(404, "unknown image '" + id + "'");
  }
  const io::Bytes bytes = io::read_file(path);
  const auto shape = model_.input_shape();
  io::IngestedImage in = io::ingest_png(bytes, shape[1], shape[2]);
  auto entry = std::make_shared<ImageEntry>();
  entry->detections = detect(model_, in.image);
  entry->image = std::move(in.image);
  entry->source_height = in.source_height;
  entry->source_width = in.source_width;
  entry->resized = in.resized;
  std::lock_guard lock(cache_mutex_);
  return images_.emplace(id, std::move(entry)).first->second;
}

json Service::add_image(std::span<const std::uint8_t> png) {
  const std::string id = io::content_hash(png);
  const fs::path path = config_.data_dir / "images" / (id + ".png");
  if (!fs::exists(path)) {
    const auto shape = model_.input_shape();
    io::ingest_png(png, shape[1], shape[2]);  // reject before persisting
    fs::create_directories(path.parent_path());
    io::write_file(path, png);
  }
  auto entry = image(id);
  return json{{"image_id", id},
              {"source_size", {entry->source_height, entry->source_width}},
              {"resized", entry->resized}};
}

json Service::detections(const std::string& image_id) { return io::to_json(image(image_id)->detections); }

io::Bytes Service::image_png(const std::string& image_id) { return io::encode_png(image(image_id)->image); }

std::string Service::explain_cached(const std::string& image_id, int detection, DecisionKind decision, Method method,
                                    const MethodParams& params, std::optional<int> class_id) {
  json key{{"image_id", image_id},
           {"detection", detection},
           {"decision", std::string(to_string(decision))},
           {"method", std::string(to_string(method))},
           {"params", io::to_json(params)}};
  if (class_id) key["class_id"] = *class_id;
  const std::string id = io::content_hash(key.dump());
  {
    std::lock_guard lock(cache_mutex_);
    if (saliency_.contains(id)) return id;
  }
  auto img = image(image_id);
  if (detection < 0 || static_cast<std::size_t>(detection) >= img->detections.size()) {
    throw HttpError(404, "unknown detection " + std::to_string(detection));
  }
  if (class_id && (*class_id < 1 || *class_id >= model_.num_classes())) {
    throw HttpError(422, "class_id out of range");
  }
  const pipeline::ExplainRequest request{detection, decision, method, params, class_id};
  auto entry = std::make_shared<SaliencyEntry>();
  entry->image_id = image_id;
  entry->detection = detection;
  entry->params = params;
  entry->map = pipeline::explain_detection(model_, img->image, img->detections, request).map;

  const fs::path dir = config_.data_dir / "saliency";
  fs::create_directories(dir);
  io::write_file(dir / (id + ".dxts"), io::encode_saliency(entry->map));
  json sidecar = io::saliency_sidecar(entry->map, params);
  sidecar["request"] = key;
  io::write_file(dir / (id + ".json"), sidecar.dump(2));

  std::lock_guard lock(cache_mutex_);
  saliency_.emplace(id, std::move(entry));
  return id;
}

std::shared_ptr<const Service::SaliencyEntry> Service::saliency(const std::string& id) {
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = saliency_.find(id); it != saliency_.end()) return it->second;
  }
  const fs::path sidecar = config_.data_dir / "saliency" / (id + ".json");
  if (id.find_first_of("/\\.") != std::string::npos || !fs::exists(sidecar)) {
    throw HttpError(404, "unknown saliency '" + id + "'");
  }
  const json key = json::parse(io::read_file(sidecar)).at("request");
  std::optional<int> class_id;
  if (key.contains("class_id")) class_id = key.at("class_id").get<int>();
  explain_cached(key.at("image_id"), key.at("detection"), *parse_decision(key.at("decision").get<std::string>()),
                 *parse_method(key.at("method").get<std::string>()), io::method_params_from_json(key.at("params")),
                 class_id);
  std::lock_guard lock(cache_mutex_);
  return saliency_.at(id);
}

json Service::explanation(const json& request) {
  const std::string image_id = required<std::string>(request, "image_id");
  const int detection = required<int>(request, "detection");
  const DecisionKind decision = decision_field(required<std::string>(request, "decision"));
  const Method method = method_field(required<std::string>(request, "method"));
  const MethodParams params = io::method_params_from_json(request.value("params", json::object()));
  std::optional<int> class_id;
  if (request.contains("class_id")) class_id = required<int>(request, "class_id");
  const std::string id = explain_cached(image_id, detection, decision, method, params, class_id);
  auto entry = saliency(id);
  return json{{"saliency_id", id},
              {"heatmap_url", "/saliency/" + id + "/heatmap.png"},
              {"target", io::to_json(entry->map.target)},
              {"raw_range", {entry->map.raw_range.first, entry->map.raw_range.second}}};
}

io::Bytes Service::heatmap(const std::string& saliency_id) { return io::heatmap_png(saliency(saliency_id)->map); }

json Service::saliency_grid(const std::string& saliency_id) {
  auto entry = saliency(saliency_id);
  json j = io::saliency_sidecar(entry->map, entry->params);
  j["height"] = entry->map.height;
  j["width"] = entry->map.width;
  j["grid"] = entry->map.grid;
  return j;
}

json Service::manipulation(const json& request) {
  const std::string saliency_id = required<std::string>(request, "saliency_id");
  const Cause cause = cause_field(required<std::string>(request, "cause"));
  const double fraction = required<double>(request, "fraction");
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw HttpError(422, "fraction must be in [0, 1]");
  auto sal = saliency(saliency_id);
  auto img = image(sal->image_id);

  const auto plan = ManipulationPlan::from_saliency(img->image, sal->map.grid, cause);
  const Tensor manipulated = manipulate(img->image, plan, fraction);
  const io::Bytes png = io::encode_png(manipulated);
  const std::string id = io::content_hash(png);
  const fs::path path = config_.data_dir / "manipulated" / (id + ".png");
  if (!fs::exists(path)) {
    fs::create_directories(path.parent_path());
    io::write_file(path, png);
  }
  return json{{"manipulated_id", id},
              {"png_url", "/manipulated/" + id + ".png"},
              {"fraction", fraction},
              {"cause", std::string(to_string(cause))},
              {"detections", io::to_json(detect(model_, manipulated))}};
}

io::Bytes Service::manipulated_png(const std::string& manipulated_id) {
  const fs::path path = config_.data_dir / "manipulated" / (manipulated_id + ".png");
  if (manipulated_id.find_first_of("/\\.") != std::string::npos || !fs::exists(path)) {
    throw HttpError(404, "unknown manipulated image '" + manipulated_id + "'");
  }
  return io::read_file(path);
}

json Service::evaluation(const json& request) {
  const std::string image_id = required<std::string>(request, "image_id");
  pipeline::EvaluateRequest req;
  req.explain.detection = required<int>(request, "detection");
  req.explain.decision = decision_field(required<std::string>(request, "decision"));
  req.explain.method = method_field(required<std::string>(request, "method"));
  req.explain.params = io::method_params_from_json(request.value("params", json::object()));
  if (request.contains("class_id")) req.explain.class_id = required<int>(request, "class_id");
  req.cause = cause_field(required<std::string>(request, "cause"));
  req.effect = effect_field(required<std::string>(request, "effect"));
  req.setting = setting_field(required<std::string>(request, "setting"));

  json key{{"image_id", image_id},
           {"detection", req.explain.detection},
           {"decision", std::string(to_string(req.explain.decision))},
           {"method", std::string(to_string(req.explain.method))},
           {"params", io::to_json(req.explain.params)},
           {"cause", std::string(to_string(req.cause))},
           {"effect", std::string(1, letter(req.effect))},
           {"setting", std::string(1, letter(req.setting))}};
  if (req.explain.class_id) key["class_id"] = *req.explain.class_id;
  const std::string id = io::content_hash(key.dump());
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = evaluations_.find(id); it != evaluations_.end()) return it->second;
  }

  auto img = image(image_id);
  if (req.explain.detection < 0 || static_cast<std::size_t>(req.explain.detection) >= img->detections.size()) {
    throw HttpError(404, "unknown detection " + std::to_string(req.explain.detection));
  }
  const std::string saliency_id = explain_cached(image_id, req.explain.detection, req.explain.decision,
                                                 req.explain.method, req.explain.params, req.explain.class_id);
  const EvalCurve c = pipeline::evaluate(model_, img->image, img->detections, req);
  json out = io::to_json(c);
  out["evaluation_id"] = id;
  out["saliency_id"] = saliency_id;
  out["csv"] = io::curve_csv(c);

  const fs::path dir = config_.data_dir / "evaluations";
  fs::create_directories(dir);
  io::write_file(dir / (id + ".csv"), out["csv"].get<std::string>());
  std::lock_guard lock(cache_mutex_);
  return evaluations_.emplace(id, std::move(out)).first->second;
}

io::Bytes Service::visualization(const std::map<std::string, std::string>& query) {
  auto get = [&](const char* key) {
    auto it = query.find(key);
    if (it == query.end()) throw HttpError(422, std::string("missing parameter '") + key + "'");
    return it->second;
  };
  const std::string image_id = get("image_id");
  pipeline::VisualizeRequest req;
  const std::string movis = get("movis_method");
  auto mm = parse_movis_method(movis);
  if (!mm) throw HttpError(422, "unknown movis_method '" + movis + "'");
  req.movis = *mm;
  req.decision = decision_field(get("decision"));
  req.method = method_field(get("method"));

  const std::string key = io::content_hash(image_id + "|" + movis + "|" + std::string(to_string(req.decision)) + "|" +
                                           std::string(to_string(req.method)));
  const fs::path path = config_.data_dir / "visualizations" / (key + ".png");
  auto img = image(image_id);
  if (fs::exists(path)) return io::read_file(path);
  const io::Bytes png = io::encode_png(pipeline::visualize(model_, img->image, img->detections, req));
  fs::create_directories(path.parent_path());
  io::write_file(path, png);
  return png;
}

json Service::study_next() {
  std::vector<std::pair<std::string, int>> pool;
  {
    std::lock_guard lock(cache_mutex_);
    for (const auto& [id, entry] : images_) {
      for (std::size_t d = 0; d < entry->detections.size(); ++d) pool.emplace_back(id, static_cast<int>(d));
    }
  }
  if (pool.empty()) throw HttpError(404, "no cached detections to ask about");

  StudyQuestion q;
  {
    std::lock_guard lock(study_mutex_);
    constexpr int kPairs = 6;
    std::uniform_int_distribution<std::size_t> pick_detection(0, pool.size() - 1);
    std::uniform_int_distribution<int> pick_decision(0, static_cast<int>(std::size(kAllDecisions)) - 1);
    std::uniform_int_distribution<int> pick_pair(0, kPairs - 1);
    std::bernoulli_distribution swap(0.5);
    const auto& [image_id, detection] = pool[pick_detection(study_rng_)];
    q.image_id = image_id;
    q.detection = detection;
    q.decision = kAllDecisions[static_cast<std::size_t>(pick_decision(study_rng_))];
    int pair = pick_pair(study_rng_);
    std::size_t a = 0, b = 1;
    for (std::size_t i = 0, n = 0; i < std::size(kAllMethods); ++i) {
      for (std::size_t j = i + 1; j < std::size(kAllMethods); ++j, ++n) {
        if (static_cast<int>(n) == pair) a = i, b = j;
      }
    }
    q.swapped = swap(study_rng_);
    q.left = kAllMethods[q.swapped ? b : a];
    q.right = kAllMethods[q.swapped ? a : b];
    q.id = io::content_hash(std::to_string(config_.study_seed) + ":" + std::to_string(questions_.size()) + ":" +
                            image_id + ":" + std::to_string(detection));
  }
  q.left_saliency = explain_cached(q.image_id, q.detection, q.decision, q.left, {}, std::nullopt);
  q.right_saliency = explain_cached(q.image_id, q.detection, q.decision, q.right, {}, std::nullopt);
  {
    std::lock_guard lock(study_mutex_);
    questions_[q.id] = q;
  }
  return json{{"question_id", q.id},
              {"image_id", q.image_id},
              {"image_url", "/images/" + q.image_id + "/png"},
              {"detection", q.detection},
              {"decision", std::string(to_string(q.decision))},
              {"left", {{"label", "Robot A"}, {"heatmap_url", "/saliency/" + q.left_saliency + "/heatmap.png"}}},
              {"right", {{"label", "Robot B"}, {"heatmap_url", "/saliency/" + q.right_saliency + "/heatmap.png"}}}};
}

json Service::study_answer(const json& request) {
  const std::string id = required<std::string>(request, "question_id");
  const int score = required<int>(request, "score");
  if (score < -2 || score > 2) throw HttpError(422, "score must be in -2..2");
  std::lock_guard lock(study_mutex_);
  auto it = questions_.find(id);
  if (it == questions_.end()) throw HttpError(404, "unknown question '" + id + "'");
  StudyQuestion& q = it->second;
  if (q.answered) throw HttpError(409, "question already answered");

  const Game game{std::string(to_string(q.left)), std::string(to_string(q.right)), score, now_seconds()};
  ledger_.record_game(game.a, game.b, game.score, game.ts);
  q.answered = true;
  append_line(config_.data_dir / "study" / "games.jsonl", io::to_jsonl(game));
  append_line(config_.data_dir / "study" / "answers.jsonl",
              json{{"question_id", q.id},
                   {"image_id", q.image_id},
                   {"detection", q.detection},
                   {"decision", std::string(to_string(q.decision))},
                   {"left", game.a},
                   {"right", game.b},
                   {"swapped", q.swapped},
                   {"score", score},
                   {"ts", game.ts}}
                  .dump());
  return json{{"game", {{"a", game.a}, {"b", game.b}, {"score", game.score}}}, {"ratings", ratings_json(ledger_)}};
}

json Service::study_vote(const json& request) {
  const std::string option = required<std::string>(request, "option");
  const auto options = vote_options();
  if (std::find(options.begin(), options.end(), option) == options.end()) {
    throw HttpError(422, "unknown vote option '" + option + "'");
  }
  std::lock_guard lock(study_mutex_);
  votes_.push_back(option);
  append_line(config_.data_dir / "study" / "votes.jsonl", json{{"option", option}, {"ts", now_seconds()}}.dump());
  const VoteTally tally = tally_votes(votes_);
  return json{{"counts", tally.counts}, {"total", tally.total}};
}

json Service::study_ranking() {
  std::lock_guard lock(study_mutex_);
  const VoteTally tally = tally_votes(votes_);
  return json{{"ratings", ratings_json(ledger_)},
              {"games", ledger_.games().size()},
              {"votes", {{"counts", tally.counts}, {"total", tally.total}}}};
}

namespace {

template <class F>
void respond(httplib::Response& res, F&& body) {
  try {
    body();
  } catch (const HttpError& e) {
    res.status = e.status;
    res.set_content(json{{"error", e.what()}}.dump(), "application/json");
  } catch (const Error& e) {
    res.status = status_for(e.code());
    res.set_content(json{{"error", e.what()}}.dump(), "application/json");
  } catch (const json::parse_error& e) {
    res.status = 400;
    res.set_content(json{{"error", e.what()}}.dump(), "application/json");
  } catch (const json::exception& e) {
    res.status = 422;
    res.set_content(json{{"error", e.what()}}.dump(), "application/json");
  } catch (const std::exception& e) {
    res.status = 500;
    res.set_content(json{{"error", e.what()}}.dump(), "application/json");
  }
}

void send_json(httplib::Response& res, const json& j) { res.set_content(j.dump(), "application/json"); }

void send_png(httplib::Response& res, const io::Bytes& png) {
  res.set_content(std::string(png.begin(), png.end()), "image/png");
}

json parse_body(const httplib::Request& req) { return json::parse(req.body); }

}  // namespace

void Service::mount(httplib::Server& server) {
  server.Post("/images", [this](const httplib::Request& req, httplib::Response& res) {
    respond(res, [&] {
      const auto* data = reinterpret_cast<const std::uint8_t*>(req.body.data());
      send_json(res, add_image({data, req.body.size()}));
    });
  });
  server.Get(R"(/images/([^/]+)/detections)", [this](const httplib::Request& req, httplib::Response& res) {
    respond(res, [&] { send_json(res, detections(req.matches[1])); });
  });
  server.Get(R"(/images/([^/]+)/png)", [this](const httplib::Request& req, httplib::Response& res) {
    respond(res, [&] { send_png(res, image_png(req.matches[1])); });
  });
  server.Post("/explanations", [this](const httplib::Request& req, httplib::Response& res) {
    respond(res, [&] { send_json(res, explanation(parse_body(req))); });
  });
  server.Get(R"(/saliency/([^/]+)/heatmap\.png)", [this](const httplib::Request& req, httplib::Response& res) {
    respond(res, [&] { send_png(res, heatmap(req.matches[1])); });
  });
  server.Get(R"(/saliency/([^/]+)/grid)", [this](const httplib::Request& req, httplib::Response& res) {
    respond(res, [&] { send_json(res, saliency_grid(req.matches[1])); });
  });
  server.Post("/manipulate", [this](const httplib::Request& req, httplib::Response& res) {
    respond(res, [&] { send_json(res, manipulation(parse_body(req))); });
  });
  server.Get(R"(/manipulated/([^/]+)\.png)", [this](const httplib::Request& req, httplib::Response& res) {
    respond(res, [&] { send_png(res, manipulated_png(req.matches[1])); });
  });
  server.Post("/evaluations", [this](const httplib::Request& req, httplib::Response& res) {
    respond(res, [&] {
      const json out = evaluation(parse_body(req));
      if (req.get_param_value("format") == "csv") {
        res.set_content(out.at("csv").get<std::string>(), "text/csv");
      } else {
        send_json(res, out);
      }
    });
  });
  server.Get("/visualizations", [this](const httplib::Request& req, httplib::Response& res) {
    respond(res, [&] {
      std::map<std::string, std::string> query;
      for (const auto& [k, v] : req.params) query[k] = v;
      send_png(res, visualization(query));
    });
  });
  server.Post("/study/next", [this](const httplib::Request&, httplib::Response& res) {
    respond(res, [&] { send_json(res, study_next()); });
  });
  server.Post("/study/answer", [this](const httplib::Request& req, httplib::Response& res) {
    respond(res, [&] { send_json(res, study_answer(parse_body(req))); });
  });
  server.Post("/study/vote", [this](const httplib::Request& req, httplib::Response& res) {
    respond(res, [&] { send_json(res, study_vote(parse_body(req))); });
  });
  server.Get("/study/ranking", [this](const httplib::Request&, httplib::Response& res) {
    respond(res, [&] { send_json(res, study_ranking()); });
  });
}

bool Service::listen(const std::string& host, int port) {
  server_ = std::make_unique<httplib::Server>();
  mount(*server_);
  return server_->listen(host, port);
}

}  // namespace dext::service
