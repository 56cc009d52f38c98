#include "clickseg/service.hpp"

#include <cstdlib>

#include <httplib.h>

#include "clickseg/dataset.hpp"
#include "clickseg/error.hpp"
#include "clickseg/hash.hpp"
#include "clickseg/log.hpp"
#include "clickseg/nn/backends.hpp"
#include "clickseg/rle.hpp"

namespace clickseg {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

InferenceService::Reply error_reply(int status, const std::string& message) {
  return {status, json{{"error", message}}};
}

int status_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::invalid_argument:
    case ErrorCode::out_of_range:
    case ErrorCode::shape_mismatch:
      return 422;
    case ErrorCode::not_found:
      return 404;
    case ErrorCode::parse_error:
      return 400;
    case ErrorCode::unavailable:
      return 503;
    default:
      return 500;
  }
}

InteractionSet parse_interactions(const json& req) {
  InteractionSet set;
  set.instance_id = "request";
  if (req.contains("clicks")) {
    const auto& clicks = req.at("clicks");
    if (!clicks.is_array()) throw Error(ErrorCode::parse_error, "clicks must be an array");
    for (const auto& c : clicks) {
      if (!c.is_object() || !c.contains("x") || !c.contains("y") || !c.at("x").is_number_integer() ||
          !c.at("y").is_number_integer())
        throw Error(ErrorCode::parse_error, "each click needs integer x and y");
      Click click{c.at("x").get<int>(), c.at("y").get<int>(), Polarity::positive};
      if (c.contains("polarity")) {
        if (!c.at("polarity").is_string()) throw Error(ErrorCode::parse_error, "polarity must be a string");
        try {
          click.polarity = parse_polarity(c.at("polarity").get<std::string>());
        } catch (const Error& e) {
          throw Error(ErrorCode::parse_error, e.what());
        }
      }
      set.clicks.push_back(click);
    }
  }
  if (req.contains("text") && !req.at("text").is_null()) {
    if (!req.at("text").is_string()) throw Error(ErrorCode::parse_error, "text must be a string");
    set.text = req.at("text").get<std::string>();
  }
  return set;
}

json interactions_json(const InteractionSet& set) {
  json clicks = json::array();
  for (const auto& c : set.clicks) clicks.push_back({{"x", c.x}, {"y", c.y}, {"polarity", to_string(c.polarity)}});
  json j{{"clicks", clicks}};
  if (set.text) j["text"] = *set.text;
  return j;
}

}  // namespace

json mask_to_wire(const Mask& mask) {
  return {{"size", {mask.height(), mask.width()}}, {"counts", encode_coco_counts(mask)}};
}

Mask mask_from_wire(const json& j) {
  const auto size = j.at("size").get<std::vector<int>>();
  if (size.size() != 2) throw Error(ErrorCode::parse_error, "mask size must be [height, width]");
  return decode_coco_counts(size[0], size[1], j.at("counts").get<std::vector<std::uint32_t>>());
}

void apply_env_overrides(ServiceConfig& cfg) {
  if (const char* port = std::getenv("CLICKSEG_PORT"); port && *port) {
    try {
      cfg.port = std::stoi(port);
    } catch (const std::exception&) {
      throw Error(ErrorCode::invalid_argument, std::string("CLICKSEG_PORT is not a port number: ") + port);
    }
  }
  if (const char* dir = std::getenv("CLICKSEG_CACHE_DIR"); dir && *dir) cfg.backend.cache_dir = fs::path(dir);
}

ServingModel load_serving_model(const ServiceConfig& cfg) {
  LoadedModel loaded = load_checkpoint(cfg.checkpoint);
  const auto experiment = experiment_config_from_json(loaded.manifest.at("experiment"));
  if (loaded.backend_id != "none" && loaded.backend_id != cfg.backend.id)
    log::warn("checkpoint was trained with saliency backend " + loaded.backend_id + ", serving with " + cfg.backend.id);

  ServingModel out;
  std::shared_ptr<SaliencyBackend> backend;
  if (loaded.assemble.use_text) {
    if (cfg.backend.id == "annotation_stub") {
      const DatasetSource source = cfg.dataset.value_or(experiment.train_data);
      auto ingested = ingest_coco(source.annotations, source.image_root);
      for (const auto& record : ingested.manifest.images)
        out.image_aliases.emplace(image_content_hash(load_image(record.path)), record.sample.image_id);
      backend = make_saliency_backend(cfg.backend, &ingested.manifest);
    } else {
      backend = make_saliency_backend(cfg.backend, nullptr);
    }
  }
  out.predictor = std::make_shared<Predictor>(std::move(loaded), std::move(backend),
                                              SaliencyOptions{.softmax = experiment.backend.softmax});
  return out;
}

InferenceService::InferenceService(ServiceConfig cfg, ModelLoader loader)
    : cfg_(std::move(cfg)), loader_(std::move(loader)), server_(std::make_unique<httplib::Server>()) {
  if (!loader_) loader_ = [c = cfg_] { return load_serving_model(c); };
  install_routes();
}

InferenceService::~InferenceService() { stop(); }

int InferenceService::start() {
  int port = cfg_.port;
  if (port == 0) {
    port = server_->bind_to_any_port(cfg_.host);
  } else if (!server_->bind_to_port(cfg_.host, port)) {
    port = -1;
  }
  if (port < 0) throw Error(ErrorCode::io_error, "cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
  worker_thread_ = std::thread([this] { worker_loop(); });
  loader_thread_ = std::thread([this] {
    try {
      ServingModel model = loader_();
      std::lock_guard lock(state_mutex_);
      model_ = std::move(model);
      status_ = "ready";
      log::info("model ready");
    } catch (const std::exception& e) {
      std::lock_guard lock(state_mutex_);
      status_ = "error";
      load_error_ = e.what();
      log::error(std::string("model loading failed: ") + e.what());
    }
    ready_cv_.notify_all();
  });
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  log::info("serving on " + cfg_.host + ":" + std::to_string(port));
  return port;
}

void InferenceService::run() {
  start();
  server_thread_.join();
}

void InferenceService::stop() {
  server_->stop();
  if (server_thread_.joinable()) server_thread_.join();
  {
    std::lock_guard lock(queue_mutex_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  if (worker_thread_.joinable()) worker_thread_.join();
  if (loader_thread_.joinable()) loader_thread_.join();
}

std::string InferenceService::status() const {
  std::lock_guard lock(state_mutex_);
  return status_;
}

bool InferenceService::wait_ready(std::chrono::milliseconds timeout) const {
  std::unique_lock lock(state_mutex_);
  ready_cv_.wait_for(lock, timeout, [this] { return status_ != "loading"; });
  return status_ == "ready";
}

void InferenceService::worker_loop() {
  for (;;) {
    Job job;
    {
      std::unique_lock lock(queue_mutex_);
      queue_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      job = std::move(queue_.front());
      queue_.pop_front();
    }
    if (!job.cancelled->load()) job.run();
  }
}

template <typename F>
std::optional<std::invoke_result_t<F>> InferenceService::run_queued(F fn) {
  auto task = std::make_shared<std::packaged_task<std::invoke_result_t<F>()>>(std::move(fn));
  auto cancelled = std::make_shared<std::atomic<bool>>(false);
  auto result = task->get_future();
  {
    std::lock_guard lock(queue_mutex_);
    if (stopping_) throw Error(ErrorCode::unavailable, "service is shutting down");
    queue_.push_back({[task] { (*task)(); }, cancelled});
  }
  queue_cv_.notify_one();
  if (result.wait_for(cfg_.request_timeout) != std::future_status::ready) {
    cancelled->store(true);
    return std::nullopt;
  }
  return result.get();
}

std::optional<InferenceService::Reply> InferenceService::check_ready() const {
  std::lock_guard lock(state_mutex_);
  if (status_ == "loading") return error_reply(503, "model loading");
  if (status_ == "error") return error_reply(503, "model failed to load: " + load_error_);
  return std::nullopt;
}

InferenceService::Reply InferenceService::upload_image(const std::string& bytes) {
  if (bytes.size() > cfg_.max_upload_bytes)
    return error_reply(413, "image exceeds " + std::to_string(cfg_.max_upload_bytes) + " bytes");
  const auto* data = reinterpret_cast<const std::uint8_t*>(bytes.data());
  const std::string id = "img_" + sha256_hex(std::span(data, bytes.size())).substr(0, 24);
  {
    std::shared_lock lock(images_mutex_);
    if (auto it = images_.find(id); it != images_.end())
      return {200, json{{"image_id", id}, {"width", it->second->pixels.width}, {"height", it->second->pixels.height}}};
  }
  RgbImage pixels;
  try {
    pixels = decode_image(std::span(data, bytes.size()));
  } catch (const Error& e) {
    return error_reply(400, e.what());
  }
  auto stored = std::make_shared<StoredImage>();
  stored->content_hash = image_content_hash(pixels);
  stored->pixels = std::move(pixels);
  const int w = stored->pixels.width, h = stored->pixels.height;
  {
    std::unique_lock lock(images_mutex_);
    images_.emplace(id, std::move(stored));
  }
  return {200, json{{"image_id", id}, {"width", w}, {"height", h}}};
}

InferenceService::SegmentResult InferenceService::run_prediction(const std::string& image_id,
                                                                  const InteractionSet& interactions,
                                                                  bool want_saliency) {
  std::shared_ptr<const StoredImage> image;
  {
    std::shared_lock lock(images_mutex_);
    image = images_.at(image_id);
  }
  ServingModel model;
  {
    std::lock_guard lock(state_mutex_);
    model = model_;
  }
  ImageSample sample{image_id, image->pixels.width, image->pixels.height, ""};
  if (auto it = model.image_aliases.find(image->content_hash); it != model.image_aliases.end())
    sample.image_id = it->second;
  auto saliency = model.predictor->saliency_for(sample, image->pixels, interactions);
  SegmentResult out{model.predictor->predict(sample, image->pixels, interactions, saliency), std::nullopt};
  if (want_saliency) out.saliency = std::move(saliency);
  return out;
}

json InferenceService::preview_json(const SaliencyMap& map) const {
  const int h = map.values.height(), w = map.values.width();
  const double scale = std::min(1.0, static_cast<double>(cfg_.preview_max_side) / std::max(h, w));
  const int ph = std::max(1, static_cast<int>(std::lround(h * scale)));
  const int pw = std::max(1, static_cast<int>(std::lround(w * scale)));
  const FloatGrid grid = resize_bilinear(map.values, ph, pw);
  return {{"height", ph}, {"width", pw}, {"text", map.text}, {"values", std::vector<float>(grid.data(), grid.data() + grid.size())}};
}

InferenceService::Reply InferenceService::segment(const std::string& body) {
  json req;
  InteractionSet interactions;
  std::string image_id;
  std::optional<std::string> session_id;
  bool want_preview = false;
  try {
    req = json::parse(body);
    if (!req.is_object()) return error_reply(400, "request body must be a JSON object");
    if (!req.contains("image_id") || !req.at("image_id").is_string()) return error_reply(400, "image_id is required");
    image_id = req.at("image_id").get<std::string>();
    interactions = parse_interactions(req);
    if (req.contains("session_id")) session_id = req.at("session_id").get<std::string>();
    want_preview = req.value("saliency_preview", false);
  } catch (const json::exception& e) {
    return error_reply(400, std::string("malformed request: ") + e.what());
  } catch (const Error& e) {
    return error_reply(400, e.what());
  }
  if (auto not_ready = check_ready()) return *not_ready;

  int width = 0, height = 0;
  {
    std::shared_lock lock(images_mutex_);
    auto it = images_.find(image_id);
    if (it == images_.end()) return error_reply(404, "unknown image_id " + image_id);
    width = it->second->pixels.width;
    height = it->second->pixels.height;
  }
  if (session_id) {
    std::lock_guard lock(sessions_mutex_);
    auto it = sessions_.find(*session_id);
    if (it == sessions_.end()) return error_reply(404, "unknown session_id " + *session_id);
    if (it->second.image_id != image_id) return error_reply(422, "session belongs to image " + it->second.image_id);
  }
  try {
    interactions.validate(height, width);
  } catch (const Error& e) {
    return error_reply(422, e.what());
  }

  std::optional<SegmentResult> result;
  try {
    result = run_queued([this, image_id, interactions, want_preview] {
      return run_prediction(image_id, interactions, want_preview);
    });
  } catch (const Error& e) {
    return error_reply(status_for(e), e.what());
  }
  if (!result) return error_reply(504, "request timed out in the inference queue");

  const Mask mask = rle_decode(result->prediction.mask.rle());
  json out{{"image_id", image_id},
           {"width", width},
           {"height", height},
           {"mask_rle", mask_to_wire(mask)},
           {"area", result->prediction.mask.area()},
           {"confidence", result->prediction.confidence}};
  if (result->saliency) out["saliency_preview"] = preview_json(*result->saliency);
  if (session_id) {
    std::lock_guard lock(sessions_mutex_);
    auto& history = sessions_.at(*session_id).history;
    const std::string mask_id = "m" + std::to_string(history.size() + 1);
    history.push_back({interactions, mask_id, out["mask_rle"]});
    out["session_id"] = *session_id;
    out["mask_id"] = mask_id;
  }
  return {200, std::move(out)};
}

InferenceService::Reply InferenceService::health() const {
  std::lock_guard lock(state_mutex_);
  json out{{"status", status_}, {"checkpoint_manifest", nullptr}, {"backend_id", cfg_.backend.id}};
  if (model_.predictor) {
    out["checkpoint_manifest"] = model_.predictor->manifest();
    out["backend_id"] = model_.predictor->backend() ? model_.predictor->backend()->id() : "none";
  }
  if (status_ == "error") out["error"] = load_error_;
  return {200, std::move(out)};
}

InferenceService::Reply InferenceService::create_session(const std::string& body) {
  std::string image_id;
  try {
    image_id = json::parse(body).at("image_id").get<std::string>();
  } catch (const json::exception& e) {
    return error_reply(400, std::string("malformed request: ") + e.what());
  }
  {
    std::shared_lock lock(images_mutex_);
    if (!images_.contains(image_id)) return error_reply(404, "unknown image_id " + image_id);
  }
  std::lock_guard lock(sessions_mutex_);
  const std::string id = "s" + std::to_string(next_session_++);
  sessions_.emplace(id, Session{image_id, {}});
  return {200, json{{"session_id", id}, {"image_id", image_id}}};
}

InferenceService::Reply InferenceService::session_history(const std::string& session_id) const {
  std::lock_guard lock(sessions_mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) return error_reply(404, "unknown session_id " + session_id);
  json history = json::array();
  for (const auto& h : it->second.history) {
    json entry = interactions_json(h.interactions);
    entry["mask_id"] = h.mask_id;
    entry["mask_rle"] = h.mask_rle;
    history.push_back(std::move(entry));
  }
  return {200, json{{"session_id", session_id}, {"image_id", it->second.image_id}, {"history", history}}};
}

InferenceService::Reply InferenceService::replay_session(const std::string& session_id) {
  Session session;
  {
    std::lock_guard lock(sessions_mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) return error_reply(404, "unknown session_id " + session_id);
    session = it->second;
  }
  if (session.history.empty()) return error_reply(422, "session has no history to replay");
  if (auto not_ready = check_ready()) return *not_ready;
  bool identical = true;
  json last;
  for (const auto& entry : session.history) {
    auto result = run_queued([&] { return run_prediction(session.image_id, entry.interactions, false); });
    if (!result) return error_reply(504, "request timed out in the inference queue");
    last = mask_to_wire(rle_decode(result->prediction.mask.rle()));
    identical = identical && last == entry.mask_rle;
  }
  return {200, json{{"session_id", session_id},
                    {"replayed", session.history.size()},
                    {"identical", identical},
                    {"mask_id", session.history.back().mask_id},
                    {"mask_rle", last}}};
}

void InferenceService::install_routes() {
  auto& s = *server_;
  s.new_task_queue = [] { return new httplib::ThreadPool(16); };
  s.set_payload_max_length(cfg_.max_upload_bytes);
  s.set_default_headers({{"Access-Control-Allow-Origin", cfg_.cors_origin},
                         {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                         {"Access-Control-Allow-Headers", "Content-Type"}});
  auto send = [](httplib::Response& res, const Reply& reply) {
    res.status = reply.status;
    res.set_content(reply.body.dump(), "application/json");
  };
  s.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  s.Get("/v1/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
  s.Post("/v1/images", [this, send](const httplib::Request& req, httplib::Response& res) {
    if (req.is_multipart_form_data()) {
      if (req.files.empty()) return send(res, error_reply(400, "multipart upload without a file"));
      return send(res, upload_image(req.files.begin()->second.content));
    }
    send(res, upload_image(req.body));
  });
  s.Post("/v1/segment", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, segment(req.body));
  });
  s.Post("/v1/sessions", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, create_session(req.body));
  });
  s.Get(R"(/v1/sessions/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, session_history(req.matches[1]));
  });
  s.Post(R"(/v1/sessions/([^/]+)/replay)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, replay_session(req.matches[1]));
  });
  if (cfg_.ui_dir) {
    if (!s.set_mount_point("/ui", cfg_.ui_dir->string()))
      log::warn("ui directory " + cfg_.ui_dir->string() + " not found; /ui is not served");
  }
  s.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const Error& e) {
      send(res, error_reply(status_for(e), e.what()));
    } catch (const std::exception& e) {
      send(res, error_reply(500, e.what()));
    }
  });
  s.set_error_handler([send](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send(res, error_reply(res.status, httplib::status_message(res.status)));
  });
}

}  // namespace clickseg
