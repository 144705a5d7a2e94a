#include <doctest.h>
#include <httplib.h>

#include <thread>

#include "dext/io.hpp"
#include "dext/scene.hpp"
#include "dext/service.hpp"
#include "oracles.hpp"

using namespace dext;
using dext::io::json;

namespace {

// A Service listening on an ephemeral port for the lifetime of the object.
struct Running {
  explicit Running(const std::filesystem::path& dir, std::uint64_t seed = 3)
      : service(ToyDetector::bundled(), {dir, seed}) {
    service.mount(server);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~Running() {
    server.stop();
    thread.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }

  service::Service service;
  httplib::Server server;
  int port = 0;
  std::thread thread;
};

json post(httplib::Client& c, const std::string& path, const json& body, int expect = 200) {
  auto res = c.Post(path, body.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == expect);
  return json::parse(res->body);
}

std::string body_of(httplib::Client& c, const std::string& path) {
  auto res = c.Get(path);
  REQUIRE(res);
  REQUIRE(res->status == 200);
  return res->body;
}

std::string upload(httplib::Client& c, std::uint64_t seed) {
  const auto png = oracle::scene_png(seed);
  auto res = c.Post("/images", std::string(png.begin(), png.end()), "image/png");
  REQUIRE(res);
  REQUIRE(res->status == 200);
  return json::parse(res->body).at("image_id");
}

}  // namespace

TEST_CASE("images, detections and explanations over http") {
  Running srv(oracle::fresh_dir("svc-basic"));
  auto c = srv.client();
  const auto png = oracle::scene_png(1001);
  const std::string id = upload(c, 1001);
  CHECK(id == io::content_hash(png));
  CHECK(upload(c, 1001) == id);

  const json dets = json::parse(body_of(c, "/images/" + id + "/detections"));
  const auto expected = detect(ToyDetector::bundled(), io::decode_png(png));
  REQUIRE(dets.size() == expected.size());
  REQUIRE_FALSE(expected.empty());
  CHECK(dets[0].at("class_id") == expected[0].class_id);

  const std::string image = body_of(c, "/images/" + id + "/png");
  CHECK(io::decode_png(io::Bytes(image.begin(), image.end())) == io::decode_png(png));

  const json ex = post(c, "/explanations", {{"image_id", id}, {"detection", 0}, {"decision", "x_min"}, {"method", "gbp"}});
  const std::string sid = ex.at("saliency_id");
  CHECK(ex.at("heatmap_url") == "/saliency/" + sid + "/heatmap.png");
  CHECK(ex.at("target").at("kind") == "x_min");
  const std::string heat = body_of(c, ex.at("heatmap_url"));
  CHECK(io::decode_png(io::Bytes(heat.begin(), heat.end())).shape == Shape{3, 256, 256});

  const json grid = json::parse(body_of(c, "/saliency/" + sid + "/grid"));
  const SaliencyMap direct =
      explain(Method::GBP, ToyDetector::bundled(), io::decode_png(png), target_for(expected[0], DecisionKind::XMin));
  CHECK(grid.at("grid").get<std::vector<float>>() == direct.grid);
}

TEST_CASE("manipulation endpoints") {
  Running srv(oracle::fresh_dir("svc-manip"));
  auto c = srv.client();
  const std::string id = upload(c, 1001);
  const json ex = post(c, "/explanations", {{"image_id", id}, {"detection", 0}, {"decision", "class"}, {"method", "ig"}});
  const std::string sid = ex.at("saliency_id");

  const json zero = post(c, "/manipulate", {{"saliency_id", sid}, {"cause", "deletion"}, {"fraction", 0.0}});
  CHECK(body_of(c, zero.at("png_url")) == body_of(c, "/images/" + id + "/png"));
  CHECK(zero.at("detections") == json::parse(body_of(c, "/images/" + id + "/detections")));

  const json one = post(c, "/manipulate", {{"saliency_id", sid}, {"cause", "deletion"}, {"fraction", 1.0}});
  const std::string gray = body_of(c, one.at("png_url"));
  for (float v : io::decode_png(io::Bytes(gray.begin(), gray.end())).data) CHECK(v == 128.0f / 255.0f);

  post(c, "/manipulate", {{"saliency_id", sid}, {"cause", "deletion"}, {"fraction", 1.5}}, 422);
  post(c, "/manipulate", {{"saliency_id", sid}, {"cause", "blur"}, {"fraction", 0.5}}, 422);
  post(c, "/manipulate", {{"saliency_id", "ffffffffffffffff"}, {"cause", "deletion"}, {"fraction", 0.5}}, 404);
}

TEST_CASE("evaluations json and csv agree") {
  Running srv(oracle::fresh_dir("svc-eval"));
  auto c = srv.client();
  const std::string id = upload(c, 1001);
  const json req{{"image_id", id}, {"detection", 0}, {"decision", "y_max"}, {"method", "sgbp"},
                 {"cause", "insertion"}, {"effect", "B"}, {"setting", "R"}};
  const json out = post(c, "/evaluations", req);
  CHECK(out.at("code") == "IBR");
  auto csv = c.Post("/evaluations?format=csv", req.dump(), "application/json");
  REQUIRE(csv);
  CHECK(csv->status == 200);
  CHECK(csv->get_header_value("Content-Type") == "text/csv");
  CHECK(csv->body == out.at("csv").get<std::string>());

  std::istringstream lines(csv->body);
  std::string line;
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == 102);

  json bad = req;
  bad["effect"] = "Q";
  post(c, "/evaluations", bad, 422);
  bad = req;
  bad["detection"] = 99;
  post(c, "/evaluations", bad, 404);
  bad = req;
  bad["method"] = "lime";
  post(c, "/evaluations", bad, 422);
  auto broken = c.Post("/evaluations", "{not json", "application/json");
  REQUIRE(broken);
  CHECK(broken->status == 400);
}

TEST_CASE("visualizations and unknown ids") {
  Running srv(oracle::fresh_dir("svc-vis"));
  auto c = srv.client();
  const std::string id = upload(c, 1001);
  const std::string png = body_of(c, "/visualizations?image_id=" + id + "&movis_method=polygon&decision=class&method=gbp");
  CHECK(io::decode_png(io::Bytes(png.begin(), png.end())).shape == Shape{3, 256, 256});
  CHECK(body_of(c, "/visualizations?image_id=" + id + "&movis_method=polygon&decision=class&method=gbp") == png);

  auto bad = c.Get("/visualizations?image_id=" + id + "&movis_method=sketch&decision=class&method=gbp");
  REQUIRE(bad);
  CHECK(bad->status == 422);
  auto missing = c.Get("/images/0000000000000000/detections");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  auto heat = c.Get("/saliency/0000000000000000/heatmap.png");
  REQUIRE(heat);
  CHECK(heat->status == 404);
  auto junk = c.Post("/images", "not a png", "image/png");
  REQUIRE(junk);
  CHECK(junk->status == 422);
}

TEST_CASE("study flow updates and persists the ledger") {
  const auto dir = oracle::fresh_dir("svc-study");
  std::string question;
  {
    Running srv(dir, 11);
    auto c = srv.client();
    auto none = c.Post("/study/next", "", "application/json");
    REQUIRE(none);
    CHECK(none->status == 404);

    upload(c, 1001);
    const json q = post(c, "/study/next", json::object());
    question = q.at("question_id");
    CHECK(q.at("left").at("label") == "Robot A");
    CHECK(q.at("right").at("label") == "Robot B");
    CHECK(q.at("left").dump().find("gbp") == std::string::npos);
    body_of(c, q.at("left").at("heatmap_url"));

    const json ans = post(c, "/study/answer", {{"question_id", question}, {"score", 2}});
    const std::string winner = ans.at("game").at("a");
    const std::string loser = ans.at("game").at("b");
    for (const auto& row : ans.at("ratings")) {
      if (row.at("method") == winner) CHECK(row.at("rating") == 1016.0);
      else if (row.at("method") == loser) CHECK(row.at("rating") == 984.0);
      else CHECK(row.at("rating") == 1000.0);
    }
    post(c, "/study/answer", {{"question_id", question}, {"score", 1}}, 409);
    post(c, "/study/answer", {{"question_id", "nope"}, {"score", 1}}, 404);
    const json q2 = post(c, "/study/next", json::object());
    post(c, "/study/answer", {{"question_id", q2.at("question_id")}, {"score", 3}}, 422);

    post(c, "/study/vote", {{"option", "contours"}});
    const json tally = post(c, "/study/vote", {{"option", "none"}});
    CHECK(tally.at("total") == 2);
    post(c, "/study/vote", {{"option", "heatmap"}}, 422);
  }
  Running again(dir, 11);
  auto c = again.client();
  const json ranking = json::parse(body_of(c, "/study/ranking"));
  CHECK(ranking.at("games") == 1);
  CHECK(ranking.at("ratings")[0].at("rating") == 1016.0);
  CHECK(ranking.at("votes").at("total") == 2);
  CHECK(ranking.at("votes").at("counts").at("contours") == 1);
  CHECK(again.service.ledger().games().size() == 1);
}

TEST_CASE("endpoint bodies work without a socket") {
  service::Service svc(ToyDetector::bundled(), {oracle::fresh_dir("svc-direct"), 0});
  const json added = svc.add_image(oracle::scene_png(1001));
  const std::string id = added.at("image_id");
  CHECK(added.at("resized") == false);
  CHECK_THROWS_AS(svc.detections("../etc"), service::HttpError);
  const json first = svc.explanation({{"image_id", id}, {"detection", 0}, {"decision", "y_max"}, {"method", "gbp"}});
  const json again = svc.explanation({{"image_id", id}, {"detection", 0}, {"decision", "y_max"}, {"method", "gbp"}});
  CHECK(first == again);
  try {
    svc.explanation({{"image_id", id}, {"detection", 0}, {"decision", "y_max"}, {"method", "gbp"}, {"class_id", 0}});
    FAIL("expected HttpError");
  } catch (const service::HttpError& e) {
    CHECK(e.status == 422);
  }
}
