// Runs every acceptance check and prints one [PASS]/[FAIL] line per check.
#include <httplib.h>
#include <sys/wait.h>

#include <algorithm>
#include <cfloat>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "dext/eval.hpp"
#include "dext/io.hpp"
#include "dext/movis.hpp"
#include "dext/ranking.hpp"
#include "dext/saliency.hpp"
#include "dext/scene.hpp"
#include "dext/service.hpp"
#include "oracles.hpp"

using namespace dext;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// The decision the checks explain on a scene: the top detection, or else the
// most confident non-background anchor.
DecisionTarget pick_target(const ToyDetector& model, const Tensor& image, DecisionKind kind) {
  const auto dets = detect(model, image);
  if (!dets.empty()) return target_for(dets.front(), kind);
  const RawOutputs raw = run(model, image);
  const int k = model.num_classes();
  int best_a = 0, best_c = 1;
  float best = -1.0f;
  for (int a = 0; a < model.num_anchors(); ++a)
    for (int c = 1; c < k; ++c)
      if (raw.probs[static_cast<std::size_t>(a * k + c)] > best) {
        best = raw.probs[static_cast<std::size_t>(a * k + c)];
        best_a = a;
        best_c = c;
      }
  return {best_a, kind, kind == DecisionKind::ClassLogit ? best_c : 0};
}

int coordinate_of(DecisionKind kind) {
  switch (kind) {
    case DecisionKind::XMin: return 0;
    case DecisionKind::YMin: return 1;
    case DecisionKind::XMax: return 2;
    case DecisionKind::YMax: return 3;
    default: return -1;
  }
}

Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr double kStep = 1e-3, kMinPreact = 1e-2;
  double worst = 0;
  int checked = 0, skipped = 0, decisions = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ToyDetector model = ToyDetector::random(100 + seed);
    const Tensor image = make_scene(seed).image;
    const std::vector<double> x(image.data.begin(), image.data.end());
    const oracle::ToyForward base = oracle::toy_forward(model, x);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(x.size()) - 1);
    std::vector<int> elements;
    for (int i = 0; i < 48; ++i) elements.push_back(pick(rng));

    std::vector<int> usable;
    for (int e : elements) {
      const auto reach = oracle::influence(model, e);
      bool ok = true;
      for (std::size_t l = 0; l < reach.size() && ok; ++l)
        for (std::size_t u = 0; u < reach[l].size() && ok; ++u)
          ok = !reach[l][u] || std::abs(base.preact[l][u]) >= kMinPreact;
      if (ok) usable.push_back(e);
      else ++skipped;
    }

    for (DecisionKind kind : kAllDecisions) {
      const DecisionTarget target = pick_target(model, image, kind);
      const int coord = coordinate_of(kind);
      if (coord >= 0) {
        const std::size_t a4 = static_cast<std::size_t>(target.anchor_index) * 4;
        const double u = base.unclipped[a4 + static_cast<std::size_t>(coord)];
        const bool near_clip = std::abs(u) < kMinPreact || std::abs(u - 1.0) < kMinPreact;
        const bool near_clamp = std::abs(base.offsets[a4 + 2] - kMaxLogScale) < kMinPreact ||
                                std::abs(base.offsets[a4 + 3] - kMaxLogScale) < kMinPreact;
        if (near_clip || near_clamp) continue;
      }
      const Tensor g = input_gradient(model, image, target, GradientRule::Standard);
      double num = 0, den = 0;
      for (int e : usable) {
        auto hi = x, lo = x;
        hi[static_cast<std::size_t>(e)] += kStep;
        lo[static_cast<std::size_t>(e)] -= kStep;
        const double fd = (oracle::toy_target(oracle::toy_forward(model, hi), target) -
                           oracle::toy_target(oracle::toy_forward(model, lo), target)) /
                          (2 * kStep);
        const double d = g[static_cast<std::size_t>(e)] - fd;
        num += d * d;
        den += fd * fd;
        ++checked;
      }
      const double rel = den > 0 ? std::sqrt(num / den) : std::sqrt(num);
      worst = std::max(worst, rel);
      ++decisions;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-3 && secs < 60 && checked > 0,
          fmt("%d decisions, %d element checks (%d sampled elements filtered), worst relative error %.3g, %.1f s",
              decisions, checked, skipped, worst, secs)};
}

AffineLayer random_affine(int rows, int cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  AffineLayer l{rows, cols, std::vector<float>(static_cast<std::size_t>(rows * cols)),
                std::vector<float>(static_cast<std::size_t>(rows))};
  for (float& w : l.weights) w = u(rng);
  for (float& b : l.bias) b = 0.2f * u(rng);
  return l;
}

Outcome guided_rule() {
  std::mt19937_64 rng(31);
  double worst = 0;
  int cases = 0, nonzero = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int in = 3 + trial % 6, hidden = 4 + trial % 7, out = 2 + trial % 4;
    const AffineLayer l1 = random_affine(hidden, in, rng), l2 = random_affine(out, hidden, rng);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    std::vector<float> x(static_cast<std::size_t>(in));
    for (float& v : x) v = u(rng);
    for (int o = 0; o < out; ++o) {
      Tape tape;
      const Var y = tape.relu(tape.affine(tape.relu(tape.affine(tape.input(Tensor({in}, x)), l1)), l2));
      const Tensor g = tape.backward(tape.element(y, static_cast<std::size_t>(o)), GradientRule::Guided);
      const auto ref = oracle::guided_two_layer(l1, l2, std::vector<double>(x.begin(), x.end()), o);
      double scale = 0;
      for (double r : ref) scale = std::max(scale, std::abs(r));
      for (std::size_t i = 0; i < ref.size(); ++i) {
        if ((ref[i] == 0) != (g[i] == 0.0f)) worst = INFINITY;
        if (ref[i] != 0) ++nonzero;
        worst = std::max(worst, std::abs(g[i] - ref[i]) / std::max(scale, 1.0));
      }
      ++cases;
    }
  }
  // Float32 results against a double reference: a few units in the last place.
  return {worst <= 4 * FLT_EPSILON,
          fmt("%d seeded outputs, %d nonzero entries, max error %.3g (bound %.3g)", cases, nonzero, worst,
              4 * FLT_EPSILON)};
}

Outcome ig_completeness() {
  const ToyDetector model = ToyDetector::bundled();
  int complete = 0, monotone = 0;
  double worst128 = 0;
  std::string trace;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Tensor image = make_scene(1000 + s).image;
    const DecisionTarget target = pick_target(model, image, DecisionKind::ClassLogit);
    const double diff =
        target_value(model, image, target) - target_value(model, make_baseline(image, {}), target);
    std::vector<double> residual;
    MethodParams p;
    for (int steps = 8; steps <= 128; steps *= 2) {
      p.ig_steps = steps;
      const Tensor a = integrated_gradients(model, image, target, p);
      double sum = 0;
      for (float v : a.data) sum += v;
      residual.push_back(std::abs(sum - diff) / std::abs(diff));
    }
    worst128 = std::max(worst128, residual.back());
    complete += residual.back() < 0.01;
    bool mono = true;
    for (std::size_t i = 1; i < residual.size(); ++i) mono = mono && residual[i] <= residual[i - 1];
    monotone += mono;
    if (!mono) {
      trace += fmt(" scene %d:", static_cast<int>(1000 + s));
      for (double r : residual) trace += fmt(" %.2g", r);
    }
  }
  return {complete == 10 && monotone == 10,
          fmt("residual < 1%% at 128 steps on %d/10 scenes (worst %.3g); non-increasing 8->128 on %d/10", complete,
              worst128, monotone) +
              (trace.empty() ? "" : ";" + trace)};
}

Outcome smoothgrad_degeneracy() {
  const ToyDetector model = ToyDetector::bundled();
  MethodParams degenerate;
  degenerate.sg_samples = 1;
  degenerate.sg_sigma = 0.0;
  int identical = 0, total = 0;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Tensor image = make_scene(1000 + s).image;
    for (Method m : kAllMethods) {
      const Method base = m == Method::SGBP ? Method::GBP : m == Method::SIG ? Method::IG : m;
      for (DecisionKind kind : kAllDecisions) {
        const DecisionTarget target = pick_target(model, image, kind);
        const SaliencyMap a = explain(m, model, image, target, degenerate);
        const SaliencyMap b = explain(base, model, image, target, degenerate);
        identical += a.raw == b.raw && a.grid == b.grid;
        ++total;
      }
    }
  }
  return {identical == total, fmt("%d/%d method x decision x scene maps bit-identical to the base method", identical,
                                  total)};
}

Outcome metric_enumeration() {
  const auto codes = all_metric_codes();
  std::set<std::string> seen, expected;
  for (const auto& c : codes) seen.insert(c.str());
  for (char cause : {'D', 'I'})
    for (char effect : {'C', 'B', 'M', 'X', 'Y', 'W', 'H'})
      for (char setting : {'S', 'R'}) expected.insert(std::string{cause, effect, setting});
  bool parse_ok = true;
  for (const auto& c : codes) parse_ok = parse_ok && MetricCode::parse(c.str()) == c;

  int identities = 0, total = 0;
  const ToyDetector model = ToyDetector::bundled();
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Tensor image = make_scene(2000 + s).image;
    const SaliencyMap map = explain(Method::GBP, model, image, pick_target(model, image, DecisionKind::ClassLogit));
    const auto del = ManipulationPlan::from_saliency(image, map.grid, Cause::Deletion);
    const auto ins = ManipulationPlan::from_saliency(image, map.grid, Cause::Insertion);
    const Tensor blurred = gaussian_blur(image, 5.0);
    const Tensor gray(image.shape, 0.5f);
    identities += manipulate(image, del, 0.0) == image;
    identities += manipulate(image, del, 1.0) == gray;
    identities += manipulate(image, ins, 0.0) == blurred;
    identities += manipulate(image, ins, 1.0) == image;
    total += 4;
  }
  return {codes.size() == 28 && seen == expected && parse_ok && identities == total,
          fmt("%zu codes, %zu distinct, %s the cause x effect x setting product; %d/%d endpoint identities exact",
              codes.size(), seen.size(), seen == expected ? "equal to" : "differ from", identities, total)};
}

Outcome informativeness() {
  const auto t0 = std::chrono::steady_clock::now();
  const ToyDetector model = ToyDetector::bundled();
  double guided = 0, random = 0;
  int scenes = 0;
  for (std::uint64_t s = 0; scenes < 30; ++s) {
    const Tensor image = make_scene(5000 + s).image;
    const auto dets = detect(model, image);
    if (dets.empty()) continue;
    ++scenes;
    const Detection& d = dets.front();
    const EffectTracker tracker{Effect::ClassMaxProb, Setting::SingleBox, d};
    const SaliencyMap map = explain(Method::GBP, model, image, target_for(d, DecisionKind::ClassLogit));
    guided += curve(model, image, map, tracker, Cause::Deletion).auc;
    for (int k = 0; k < 5; ++k) {
      std::vector<int> order(static_cast<std::size_t>(image.shape[1] * image.shape[2]));
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 rng(s * 10 + static_cast<std::uint64_t>(k));
      std::shuffle(order.begin(), order.end(), rng);
      random += curve(model, image, ManipulationPlan::from_order(image, order, Cause::Deletion), tracker).auc / 5;
    }
  }
  guided /= scenes;
  random /= scenes;
  const double secs = seconds_since(t0);
  return {guided <= random && secs < 600,
          fmt("mean DCS AUC %.4f with saliency order vs %.4f random over %d scenes, %.1f s", guided, random, scenes,
              secs)};
}

Outcome oracle_equivalence() {
  int dbscan_ok = 0, hull_ok = 0;
  std::string first_failure;
  for (int seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    const int n = 20 + seed * 180 / 49;
    std::uniform_int_distribution<int> coord(0, 40);
    std::vector<Point> pts;
    for (int i = 0; i < n; ++i) pts.push_back({double(coord(rng)), double(coord(rng))});
    const ClusterSet cs = dbscan(pts, 1.0 + 0.25 * (seed % 8), 2 + seed % 5);
    const std::string why = oracle::check_dbscan(cs);
    dbscan_ok += why.empty();
    if (!why.empty() && first_failure.empty()) first_failure = "dbscan seed " + std::to_string(seed) + ": " + why;

    std::uniform_real_distribution<double> real(-50.0, 50.0);
    std::vector<Point> cloud;
    for (int i = 0; i < 30 + seed; ++i) cloud.push_back({std::round(real(rng)), std::round(real(rng))});
    const auto hull = convex_hull(cloud);
    const bool same = std::set<Point>(hull.begin(), hull.end()) == oracle::hull_vertices_cubic(cloud);
    hull_ok += same;
    if (!same && first_failure.empty()) first_failure = "hull seed " + std::to_string(seed);
  }

  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0;
  const auto grid = fraction_grid(101);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<EvalCurve> curves(static_cast<std::size_t>(1 + trial % 12));
    double mean = 0;
    for (auto& c : curves) {
      c.code = "DCS";
      std::vector<double> ys;
      for (double f : grid) {
        ys.push_back(u(rng));
        c.points.push_back({f, ys.back()});
      }
      c.auc = trapezoid_auc(c.points);
      mean += oracle::trapezoid(grid, ys) / static_cast<double>(curves.size());
    }
    worst = std::max(worst, std::abs(aauc(curves).aauc - mean));
  }
  return {dbscan_ok == 50 && hull_ok == 50 && worst <= 1e-12,
          fmt("dbscan %d/50, hull %d/50, max |AAUC - mean AUC| %.3g", dbscan_ok, hull_ok, worst) +
              (first_failure.empty() ? "" : "; " + first_failure)};
}

Outcome rank_table() {
  const RankTable t = overall_from_ranks({"GBP", "SGBP", "IG", "SIG"},
                                         {"DCS", "ICS", "DBS", "IBS", "DCR", "ICR", "DBR", "IBR"},
                                         {{4, 3, 1, 2, 4, 3, 3, 1},
                                          {1, 2, 2, 4, 1, 2, 2, 2},
                                          {3, 4, 4, 3, 3, 4, 4, 4},
                                          {2, 1, 3, 1, 2, 1, 1, 3}});
  std::vector<std::size_t> order(t.subjects.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return t.overall[a] < t.overall[b]; });
  std::string names;
  for (std::size_t i : order) names += (names.empty() ? "" : ", ") + t.subjects[i];
  const bool untied = std::none_of(t.tied.begin(), t.tied.end(), [](bool b) { return b; });
  return {names == "SIG, SGBP, GBP, IG" && untied, "overall order " + names};
}

Outcome elo() {
  const std::vector<std::string> methods{"gbp", "ig", "sgbp", "sig"};
  EloLedger ledger(methods);
  std::mt19937_64 rng(2022);
  std::uniform_int_distribution<int> m(0, 3), s(-2, 2);
  for (int i = 0; i < 10000; ++i) {
    const int a = m(rng);
    int b = m(rng);
    if (a == b) b = (b + 1 + i % 3) % 4;
    ledger.record_game(methods[static_cast<std::size_t>(a)], methods[static_cast<std::size_t>(b)], s(rng));
  }
  double total = 0;
  for (const auto& [name, r] : ledger.ratings()) total += r;
  EloLedger one(methods);
  one.record_game("gbp", "ig", 2);
  const bool example = one.rating("gbp") == 1016.0 && one.rating("ig") == 984.0;
  return {std::abs(total - 4000.0) <= 1e-6 && example,
          fmt("rating sum drift %.3g after 10000 games; single +2 game gives %g/%g", total - 4000.0,
              one.rating("gbp"), one.rating("ig"))};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome cli_api_parity() {
  const fs::path dir = oracle::fresh_dir("acceptance-parity");
  const auto png = oracle::scene_png(1001);
  const fs::path image = dir / "scene.png";
  io::write_file(image, png);

  service::Service svc(ToyDetector::bundled(), {dir / "data", 0});
  httplib::Server server;
  svc.mount(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  const std::string image_id = io::content_hash(png);
  client.Post("/images", std::string(png.begin(), png.end()), "image/png");

  struct Request {
    const char* decision;
    const char* method;
    const char* cause;
    const char* effect;
    const char* setting;
  };
  const Request requests[] = {{"class", "gbp", "deletion", "C", "S"},
                              {"x_min", "ig", "insertion", "B", "R"},
                              {"y_max", "sgbp", "deletion", "M", "S"},
                              {"x_max", "sig", "insertion", "W", "R"},
                              {"class", "ig", "deletion", "H", "R"}};
  int identical = 0;
  for (const auto& r : requests) {
    const io::json body{{"image_id", image_id}, {"detection", 0},     {"decision", r.decision},
                        {"method", r.method},   {"cause", r.cause},   {"effect", r.effect},
                        {"setting", r.setting}};
    auto res = client.Post("/evaluations?format=csv", body.dump(), "application/json");
    const fs::path out = dir / "cli.csv";
    const std::string cmd = std::string("\"") + DEXT_CLI_PATH + "\" evaluate --image \"" + image.string() +
                            "\" --detection 0 --decision " + r.decision + " --method " + r.method + " --cause " +
                            r.cause + " --effect " + r.effect + " --setting " + r.setting + " --out \"" +
                            out.string() + "\" 2>/dev/null";
    const int status = std::system(cmd.c_str());
    identical += res && res->status == 200 && WIFEXITED(status) && WEXITSTATUS(status) == 0 &&
                 slurp(out) == res->body;
  }
  server.stop();
  thread.join();
  return {identical == 5, fmt("%d/5 evaluate requests byte-identical between the CLI and the HTTP API", identical)};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> checks[] = {
      {"gradient fidelity", gradient_fidelity},
      {"guided rule", guided_rule},
      {"integrated gradients completeness", ig_completeness},
      {"smoothgrad degeneracy", smoothgrad_degeneracy},
      {"metric enumeration", metric_enumeration},
      {"informativeness", informativeness},
      {"oracle equivalence", oracle_equivalence},
      {"rank aggregation", rank_table},
      {"elo", elo},
      {"cli/api parity", cli_api_parity},
  };
  int failed = 0;
  for (const auto& [name, check] : checks) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (std::size(checks) - static_cast<std::size_t>(failed)) << "/" << std::size(checks) << " passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
