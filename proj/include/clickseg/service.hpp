#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "clickseg/config.hpp"
#include "clickseg/image.hpp"
#include "clickseg/nn/predict.hpp"

namespace httplib {
class Server;
}

namespace clickseg {

struct ServiceConfig {
  std::filesystem::path checkpoint;
  BackendConfig backend;
  /// Dataset whose images the annotation_stub backend can answer for; taken
  /// from the checkpoint's training config when absent.
  std::optional<DatasetSource> dataset;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t max_upload_bytes = std::size_t{16} << 20;
  std::chrono::milliseconds request_timeout{30000};
  std::optional<std::filesystem::path> ui_dir;
  std::string cors_origin = "*";
  /// Longest side of the saliency preview grid.
  int preview_max_side = 64;
};

/// CLICKSEG_PORT and CLICKSEG_CACHE_DIR override the port and the saliency
/// cache directory.
void apply_env_overrides(ServiceConfig& cfg);

/// Model state the service needs once loading has finished.
struct ServingModel {
  std::shared_ptr<Predictor> predictor;
  /// Pixel content hash -> dataset image id, for id-keyed backends.
  std::map<std::string, std::string> image_aliases;
};

using ModelLoader = std::function<ServingModel()>;

/// Loads the checkpoint and backend named by the config.
ServingModel load_serving_model(const ServiceConfig& cfg);

/// Single-model segmentation over HTTP. Requests are handled concurrently;
/// predictions run one at a time on a FIFO worker.
class InferenceService {
 public:
  explicit InferenceService(ServiceConfig cfg, ModelLoader loader = {});
  ~InferenceService();
  InferenceService(const InferenceService&) = delete;
  InferenceService& operator=(const InferenceService&) = delete;

  /// Binds (port 0 picks a free one), starts model loading and serving on
  /// background threads, and returns the bound port.
  int start();
  /// start() and block until stop().
  void run();
  void stop();

  /// "loading", "ready" or "error".
  std::string status() const;
  bool wait_ready(std::chrono::milliseconds timeout) const;

  struct Reply {
    int status = 200;
    nlohmann::json body;
  };

  Reply upload_image(const std::string& bytes);
  Reply segment(const std::string& body);
  Reply health() const;
  Reply create_session(const std::string& body);
  Reply session_history(const std::string& session_id) const;
  Reply replay_session(const std::string& session_id);

 private:
  struct StoredImage {
    RgbImage pixels;
    std::string content_hash;
  };
  struct HistoryEntry {
    InteractionSet interactions;
    std::string mask_id;
    nlohmann::json mask_rle;
  };
  struct Session {
    std::string image_id;
    std::vector<HistoryEntry> history;
  };
  struct SegmentResult {
    Prediction prediction;
    std::optional<SaliencyMap> saliency;
  };
  struct Job {
    std::function<void()> run;
    std::shared_ptr<std::atomic<bool>> cancelled;
  };

  std::optional<Reply> check_ready() const;
  SegmentResult run_prediction(const std::string& image_id, const InteractionSet& interactions, bool want_saliency);
  /// Queues `fn` on the inference worker and waits up to the request timeout.
  template <typename F>
  std::optional<std::invoke_result_t<F>> run_queued(F fn);
  void worker_loop();
  nlohmann::json preview_json(const SaliencyMap& map) const;
  void install_routes();

  ServiceConfig cfg_;
  ModelLoader loader_;
  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_, loader_thread_, worker_thread_;

  mutable std::mutex state_mutex_;
  mutable std::condition_variable ready_cv_;
  std::string status_ = "loading";
  std::string load_error_;
  ServingModel model_;

  mutable std::shared_mutex images_mutex_;
  std::map<std::string, std::shared_ptr<const StoredImage>> images_;

  mutable std::mutex sessions_mutex_;
  std::map<std::string, Session> sessions_;
  std::uint64_t next_session_ = 1;

  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::deque<Job> queue_;
  bool stopping_ = false;
};

/// Mask wire format: COCO-style uncompressed RLE with the frame size.
nlohmann::json mask_to_wire(const Mask& mask);
Mask mask_from_wire(const nlohmann::json& j);

}  // namespace clickseg
