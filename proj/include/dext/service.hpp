#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dext/detector.hpp"
#include "dext/io.hpp"
#include "dext/ranking.hpp"
#include "dext/saliency.hpp"

namespace httplib {
class Server;
}

namespace dext::service {

struct ServiceConfig {
  std::filesystem::path data_dir;  // created on demand
  std::uint64_t study_seed = 0;
};

// Data directory from DEXT_DATA_DIR, else ./dext-data.
std::filesystem::path default_data_dir();

struct StudyQuestion {
  std::string id;
  std::string image_id;
  int detection = 0;
  DecisionKind decision = DecisionKind::ClassLogit;
  Method left = Method::GBP;   // shown as "Robot A"
  Method right = Method::IG;   // shown as "Robot B"
  bool swapped = false;        // true when left is the later method of the pair
  std::string left_saliency;
  std::string right_saliency;
  bool answered = false;
};

// One session: uploaded images, cached results and the study ledger, all
// persisted under the data directory with content-hash file names.
class Service {
 public:
  Service(ToyDetector model, ServiceConfig config);
  ~Service();

  // Registers every endpoint on the server.
  void mount(httplib::Server& server);

  // Blocks serving on host:port.
  bool listen(const std::string& host, int port);

  const EloLedger& ledger() const { return ledger_; }

  struct ImageEntry {
    Tensor image;
    std::vector<Detection> detections;
    int source_height = 0;
    int source_width = 0;
    bool resized = false;
  };
  struct SaliencyEntry {
    std::string image_id;
    int detection = 0;
    SaliencyMap map;
    MethodParams params;
  };

  // Endpoint bodies, callable without a socket. Each returns a JSON payload
  // or throws HttpError.
  io::json add_image(std::span<const std::uint8_t> png);
  io::json detections(const std::string& image_id);
  io::Bytes image_png(const std::string& image_id);
  io::json explanation(const io::json& request);
  io::Bytes heatmap(const std::string& saliency_id);
  io::json saliency_grid(const std::string& saliency_id);
  io::json manipulation(const io::json& request);
  io::Bytes manipulated_png(const std::string& manipulated_id);
  io::json evaluation(const io::json& request);
  io::Bytes visualization(const std::map<std::string, std::string>& query);
  io::json study_next();
  io::json study_answer(const io::json& request);
  io::json study_vote(const io::json& request);
  io::json study_ranking();

 private:
  std::shared_ptr<const ImageEntry> image(const std::string& id);
  std::shared_ptr<const SaliencyEntry> saliency(const std::string& id);
  std::string explain_cached(const std::string& image_id, int detection, DecisionKind decision, Method method,
                             const MethodParams& params, std::optional<int> class_id);
  void load_ledger();

  ToyDetector model_;
  ServiceConfig config_;
  std::mutex cache_mutex_;
  std::map<std::string, std::shared_ptr<const ImageEntry>> images_;
  std::map<std::string, std::shared_ptr<const SaliencyEntry>> saliency_;
  std::map<std::string, io::json> evaluations_;
  std::mutex study_mutex_;
  EloLedger ledger_;
  std::vector<std::string> votes_;
  std::map<std::string, StudyQuestion> questions_;
  std::mt19937_64 study_rng_;
  std::unique_ptr<httplib::Server> server_;
};

struct HttpError : std::runtime_error {
  HttpError(int status, const std::string& message) : std::runtime_error(message), status(status) {}
  int status;
};

}  // namespace dext::service
