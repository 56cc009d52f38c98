#include <cstdlib>
#include <future>

#include <gtest/gtest.h>
#include <httplib.h>

#include "../support/fixtures.hpp"
#include "clickseg/dataset.hpp"
#include "clickseg/error.hpp"
#include "clickseg/experiment.hpp"
#include "clickseg/geometry.hpp"
#include "clickseg/nn/backends.hpp"
#include "clickseg/nn/train.hpp"
#include "clickseg/rle.hpp"
#include "clickseg/service.hpp"
#include "clickseg/toy.hpp"

namespace clickseg {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

ServingModel random_model() {
  torch::manual_seed(0);
  LoadedModel m;
  m.model = ModelConfig::desk();
  m.net = SegmentationNet(m.model);
  m.assemble = {.height = 32, .width = 32};
  m.backend_id = "stub";
  m.manifest = {{"format", "clickseg-checkpoint/1"}, {"git_revision", build_git_revision()}, {"iteration", 0}};
  return {std::make_shared<Predictor>(std::move(m), std::make_shared<StubBackend>()), {}};
}

ServiceConfig test_config() {
  ServiceConfig cfg;
  cfg.port = 0;
  cfg.backend.id = "stub";
  return cfg;
}

std::string png_bytes(int w, int h, unsigned seed) {
  auto bytes = encode_png(fixture::noise_image(w, h, seed));
  return {bytes.begin(), bytes.end()};
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Running {
  InferenceService service;
  int port;
  httplib::Client client;

  explicit Running(ServiceConfig cfg = test_config(), ModelLoader loader = random_model)
      : service(std::move(cfg), std::move(loader)), port(service.start()), client("127.0.0.1", port) {
    client.set_read_timeout(120);
  }

  std::string upload(const std::string& bytes) {
    auto res = client.Post("/v1/images", bytes, "image/png");
    EXPECT_EQ(res->status, 200) << res->body;
    return json::parse(res->body).at("image_id");
  }
  std::pair<int, json> post(const std::string& path, const json& body) {
    auto res = client.Post(path, body.dump(), "application/json");
    return {res->status, json::parse(res->body)};
  }
};

TEST(ServiceTest, HealthReportsLoadingThenReady) {
  std::promise<void> release;
  auto gate = release.get_future().share();
  Running run(test_config(), [gate] {
    gate.wait();
    return random_model();
  });
  auto s0 = json::parse(run.client.Get("/v1/health")->body);
  EXPECT_EQ(s0.at("status"), "loading");
  EXPECT_TRUE(s0.at("checkpoint_manifest").is_null());
  const auto id = run.upload(png_bytes(32, 32, 1));
  EXPECT_EQ(run.post("/v1/segment", {{"image_id", id}, {"clicks", {{{"x", 3}, {"y", 4}}}}}).first, 503);
  release.set_value();
  ASSERT_TRUE(run.service.wait_ready(std::chrono::seconds(30)));
  auto h = json::parse(run.client.Get("/v1/health")->body);
  EXPECT_EQ(h.at("status"), "ready");
  EXPECT_EQ(h.at("backend_id"), "stub");
  EXPECT_EQ(h.at("checkpoint_manifest").at("git_revision"), build_git_revision());
}

TEST(ServiceTest, FailedLoadReportsErrorAndRefusesSegmentation) {
  Running run(test_config(), []() -> ServingModel { throw Error(ErrorCode::not_found, "no such checkpoint"); });
  EXPECT_FALSE(run.service.wait_ready(std::chrono::seconds(30)));
  auto h = json::parse(run.client.Get("/v1/health")->body);
  EXPECT_EQ(h.at("status"), "error");
  EXPECT_NE(h.at("error").get<std::string>().find("no such checkpoint"), std::string::npos);
  const auto id = run.upload(png_bytes(16, 16, 1));
  EXPECT_EQ(run.post("/v1/segment", {{"image_id", id}, {"text", "blob:cx=3,cy=3,s=2"}}).first, 503);
}

TEST(ServiceTest, UploadIsContentAddressed) {
  Running run;
  const auto bytes = png_bytes(37, 21, 2);
  auto res = run.client.Post("/v1/images", bytes, "image/png");
  ASSERT_EQ(res->status, 200);
  auto body = json::parse(res->body);
  EXPECT_EQ(body.at("width"), 37);
  EXPECT_EQ(body.at("height"), 21);
  EXPECT_EQ(run.upload(bytes), body.at("image_id"));
  EXPECT_NE(run.upload(png_bytes(37, 21, 3)), body.at("image_id"));
}

TEST(ServiceTest, UploadAcceptsMultipartForm) {
  Running run;
  httplib::MultipartFormDataItems items{{"image", png_bytes(12, 10, 4), "a.png", "image/png"}};
  auto res = run.client.Post("/v1/images", items);
  ASSERT_EQ(res->status, 200) << res->body;
  EXPECT_EQ(json::parse(res->body).at("width"), 12);
}

TEST(ServiceTest, UploadRejectsTruncatedAndOversizedImages) {
  auto cfg = test_config();
  cfg.max_upload_bytes = 4096;
  Running run(cfg);
  const auto bytes = png_bytes(20, 20, 5);
  ASSERT_LT(bytes.size(), 4096u);
  auto truncated = run.client.Post("/v1/images", bytes.substr(0, bytes.size() / 2), "image/png");
  EXPECT_EQ(truncated->status, 400);
  EXPECT_TRUE(json::parse(truncated->body).contains("error"));
  auto big = run.client.Post("/v1/images", png_bytes(64, 64, 6), "image/png");
  EXPECT_EQ(big->status, 413);
  EXPECT_EQ(run.service.upload_image(std::string(5000, 'x')).status, 413);
}

TEST(ServiceTest, DefaultUploadLimitIsSixteenMiB) { EXPECT_EQ(ServiceConfig{}.max_upload_bytes, 16u << 20); }

TEST(ServiceTest, SegmentValidatesRequests) {
  Running run;
  ASSERT_TRUE(run.service.wait_ready(std::chrono::seconds(30)));
  const auto id = run.upload(png_bytes(30, 20, 7));
  EXPECT_EQ(run.post("/v1/segment", {{"image_id", "img_missing"}, {"clicks", {{{"x", 1}, {"y", 1}}}}}).first, 404);
  EXPECT_EQ(run.post("/v1/segment", {{"image_id", id}, {"clicks", json::array()}, {"text", ""}}).first, 422);
  EXPECT_EQ(run.post("/v1/segment", {{"image_id", id}, {"clicks", {{{"x", 30}, {"y", 1}}}}}).first, 422);
  EXPECT_EQ(run.post("/v1/segment", {{"image_id", id}, {"clicks", {{{"x", -1}, {"y", 1}}}}}).first, 422);
  EXPECT_EQ(run.post("/v1/segment", {{"image_id", id}, {"clicks", {{{"x", 1}, {"y", 1}, {"polarity", "up"}}}}}).first,
            400);
  EXPECT_EQ(run.post("/v1/segment", {{"clicks", {{{"x", 1}, {"y", 1}}}}}).first, 400);
  EXPECT_EQ(run.client.Post("/v1/segment", "{not json", "application/json")->status, 400);
}

TEST(ServiceTest, SegmentReturnsMaskInImageFrame) {
  Running run;
  ASSERT_TRUE(run.service.wait_ready(std::chrono::seconds(30)));
  const auto id = run.upload(png_bytes(45, 30, 8));
  auto [status, body] = run.post("/v1/segment", {{"image_id", id},
                                                 {"clicks", {{{"x", 10}, {"y", 12}, {"polarity", "positive"}},
                                                             {{"x", 30}, {"y", 5}, {"polarity", "negative"}}}},
                                                 {"text", "blob:cx=10,cy=12,s=5"},
                                                 {"saliency_preview", true}});
  ASSERT_EQ(status, 200) << body.dump();
  const Mask mask = mask_from_wire(body.at("mask_rle"));
  EXPECT_EQ(mask.height(), 30);
  EXPECT_EQ(mask.width(), 45);
  EXPECT_EQ(body.at("area").get<std::int64_t>(), count_foreground(mask));
  EXPECT_GE(body.at("confidence").get<double>(), 0.0);
  EXPECT_LE(body.at("confidence").get<double>(), 1.0);
  const auto& preview = body.at("saliency_preview");
  EXPECT_EQ(preview.at("height"), 30);
  EXPECT_EQ(preview.at("width"), 45);
  EXPECT_EQ(preview.at("values").size(), 30u * 45u);
  auto [s2, no_preview] = run.post("/v1/segment", {{"image_id", id}, {"clicks", {{{"x", 10}, {"y", 12}}}}});
  ASSERT_EQ(s2, 200);
  EXPECT_FALSE(no_preview.contains("saliency_preview"));
}

TEST(ServiceTest, SaliencyPreviewIsDownsampled) {
  Running run;
  ASSERT_TRUE(run.service.wait_ready(std::chrono::seconds(30)));
  const auto id = run.upload(png_bytes(200, 100, 9));
  auto [status, body] = run.post(
      "/v1/segment",
      {{"image_id", id}, {"clicks", {{{"x", 50}, {"y", 50}}}}, {"text", "blob:cx=50,cy=50,s=9"}, {"saliency_preview", true}});
  ASSERT_EQ(status, 200);
  EXPECT_EQ(body.at("saliency_preview").at("width"), 64);
  EXPECT_EQ(body.at("saliency_preview").at("height"), 32);
}

TEST(ServiceTest, ConcurrentIdenticalRequestsReturnIdenticalMasks) {
  Running run;
  ASSERT_TRUE(run.service.wait_ready(std::chrono::seconds(30)));
  const auto id = run.upload(png_bytes(48, 40, 10));
  const json request{{"image_id", id}, {"clicks", {{{"x", 20}, {"y", 18}}}}, {"text", "blob:cx=20,cy=18,s=6"}};
  std::vector<std::future<std::pair<int, std::string>>> futures;
  for (int i = 0; i < 10; ++i)
    futures.push_back(std::async(std::launch::async, [&] {
      httplib::Client c("127.0.0.1", run.port);
      c.set_read_timeout(120);
      auto res = c.Post("/v1/segment", request.dump(), "application/json");
      return std::make_pair(res->status, res->body);
    }));
  std::vector<json> masks;
  for (auto& f : futures) {
    auto [status, body] = f.get();
    ASSERT_EQ(status, 200) << body;
    masks.push_back(json::parse(body).at("mask_rle"));
  }
  for (const auto& m : masks) EXPECT_EQ(m, masks.front());
}

TEST(ServiceTest, SessionsRecordHistoryAndReplayExactly) {
  Running run;
  ASSERT_TRUE(run.service.wait_ready(std::chrono::seconds(30)));
  const auto id = run.upload(png_bytes(40, 40, 11));
  auto [cs, created] = run.post("/v1/sessions", {{"image_id", id}});
  ASSERT_EQ(cs, 200);
  const auto session = created.at("session_id").get<std::string>();
  json clicks = {{{"x", 12}, {"y", 12}}};
  auto [s1, r1] = run.post("/v1/segment", {{"image_id", id}, {"session_id", session}, {"clicks", clicks}});
  clicks.push_back({{"x", 30}, {"y", 30}, {"polarity", "negative"}});
  auto [s2, r2] = run.post("/v1/segment",
                           {{"image_id", id}, {"session_id", session}, {"clicks", clicks}, {"text", "blob:cx=12,cy=12,s=4"}});
  ASSERT_EQ(s1, 200);
  ASSERT_EQ(s2, 200);
  EXPECT_EQ(r1.at("mask_id"), "m1");
  EXPECT_EQ(r2.at("mask_id"), "m2");

  auto history = json::parse(run.client.Get("/v1/sessions/" + session)->body);
  ASSERT_EQ(history.at("history").size(), 2u);
  EXPECT_EQ(history.at("history")[1].at("clicks").size(), 2u);
  EXPECT_EQ(history.at("history")[1].at("text"), "blob:cx=12,cy=12,s=4");

  auto [rs, replay] = run.post("/v1/sessions/" + session + "/replay", json::object());
  ASSERT_EQ(rs, 200);
  EXPECT_TRUE(replay.at("identical").get<bool>());
  EXPECT_EQ(replay.at("mask_rle"), r2.at("mask_rle"));

  EXPECT_EQ(run.client.Get("/v1/sessions/s999")->status, 404);
  const auto other = run.upload(png_bytes(40, 40, 12));
  EXPECT_EQ(run.post("/v1/segment", {{"image_id", other}, {"session_id", session}, {"clicks", clicks}}).first, 422);
}

TEST(ServiceTest, ResultsDoNotDependOnSessions) {
  Running run;
  ASSERT_TRUE(run.service.wait_ready(std::chrono::seconds(30)));
  const auto id = run.upload(png_bytes(40, 40, 13));
  const json base{{"image_id", id}, {"clicks", {{{"x", 9}, {"y", 20}}}}, {"text", "blob:cx=9,cy=20,s=5"}};
  auto [s0, plain] = run.post("/v1/segment", base);
  auto session = run.post("/v1/sessions", {{"image_id", id}}).second.at("session_id");
  auto with_session = base;
  with_session["session_id"] = session;
  auto [s1, tracked] = run.post("/v1/segment", with_session);
  EXPECT_EQ(plain.at("mask_rle"), tracked.at("mask_rle"));
  EXPECT_EQ(plain.at("confidence"), tracked.at("confidence"));
}

TEST(ServiceTest, QueueTimeoutReturns504) {
  auto cfg = test_config();
  cfg.request_timeout = std::chrono::milliseconds(1);
  Running run(cfg);
  ASSERT_TRUE(run.service.wait_ready(std::chrono::seconds(30)));
  const auto id = run.upload(png_bytes(64, 64, 14));
  EXPECT_EQ(run.post("/v1/segment", {{"image_id", id}, {"clicks", {{{"x", 9}, {"y", 20}}}}}).first, 504);
}

TEST(ServiceTest, CorsHeadersAndPreflight) {
  Running run;
  auto res = run.client.Get("/v1/health");
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
  auto pre = run.client.Options("/v1/segment");
  EXPECT_EQ(pre->status, 204);
  EXPECT_NE(pre->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);
}

TEST(ServiceTest, ServesStaticUiBundle) {
  fixture::TempDir dir("ui");
  std::ofstream(dir.path() / "index.html") << "<html>ui</html>";
  auto cfg = test_config();
  cfg.ui_dir = dir.path();
  Running run(cfg);
  auto res = run.client.Get("/ui/index.html");
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(res->body, "<html>ui</html>");
}

TEST(ServiceTest, EnvironmentOverridesPortAndCacheDir) {
  ::setenv("CLICKSEG_PORT", "9123", 1);
  ::setenv("CLICKSEG_CACHE_DIR", "/tmp/clickseg_cache", 1);
  ServiceConfig cfg;
  apply_env_overrides(cfg);
  EXPECT_EQ(cfg.port, 9123);
  EXPECT_EQ(cfg.backend.cache_dir, fs::path("/tmp/clickseg_cache"));
  ::setenv("CLICKSEG_PORT", "eighty", 1);
  EXPECT_THROW(apply_env_overrides(cfg), Error);
  ::unsetenv("CLICKSEG_PORT");
  ::unsetenv("CLICKSEG_CACHE_DIR");
}

TEST(ServiceTest, MaskWireFormatRoundTrips) {
  Mask m(5, 7, 0);
  m(1, 2) = m(3, 6) = m(4, 0) = 1;
  const auto wire = mask_to_wire(m);
  EXPECT_EQ(wire.at("size"), json({5, 7}));
  EXPECT_EQ(mask_from_wire(wire), m);
}

/// Person-with-tie toy model trained once and kept in the build tree.
fs::path person_tie_checkpoint() {
  const fs::path root = fs::path(CLICKSEG_TEST_CACHE_DIR) / "person_tie_service";
  const fs::path done = root / "done";
  if (fs::exists(done)) return root / "run/final.pt";
  fs::remove_all(root);
  auto toy = make_person_tie_toy(root / "data", {.images = 16, .size = 64, .seed = 0});
  auto cfg = toy_experiment_config(toy, root / "run");
  cfg.train.iterations = 500;
  auto data = prepare_data(cfg, cfg.train_data, LoaderMode::train);
  auto backend = make_saliency_backend(cfg.backend, &data.manifest);
  ExampleBuilder builder(data.manifest, data.split, builder_config_of(cfg), backend, data.interactions);
  auto result = train_model(cfg, data.loader, builder);
  std::ofstream(done) << "ok";
  return result.checkpoint->weights;
}

TEST(ServiceTest, TextSelectsNestedInstanceUnderSameClick) {
  auto cfg = test_config();
  cfg.backend.id = "annotation_stub";
  cfg.checkpoint = person_tie_checkpoint();
  Running run(cfg, {});
  ASSERT_TRUE(run.service.wait_ready(std::chrono::seconds(120))) << run.service.health().body.dump();
  EXPECT_EQ(json::parse(run.client.Get("/v1/health")->body).at("backend_id"), "annotation_stub");

  const auto experiment = experiment_config_from_json(run.service.health().body.at("checkpoint_manifest").at("experiment"));
  auto ingested = ingest_coco(experiment.train_data.annotations, experiment.train_data.image_root);
  const auto& manifest = ingested.manifest;
  int checked = 0;
  for (const auto& record : manifest.images) {
    if (checked == 4) break;
    std::optional<Mask> tie, person;
    for (auto i : manifest.instances_in(record.sample.image_id))
      (manifest.instances[i].class_name() == "tie" ? tie : person) = manifest.instances[i].decode();
    const auto depth = interior_distance(*tie);
    const auto deepest = std::max_element(depth.data(), depth.data() + depth.size()) - depth.data();
    const int x = static_cast<int>(deepest % tie->width()), y = static_cast<int>(deepest / tie->width());
    const auto id = run.upload(file_bytes(record.path));
    auto ask = [&](const std::string& text) {
      auto [status, body] = run.post("/v1/segment", {{"image_id", id}, {"clicks", {{{"x", x}, {"y", y}}}}, {"text", text}});
      EXPECT_EQ(status, 200) << body.dump();
      return mask_from_wire(body.at("mask_rle"));
    };
    const Mask tie_pred = ask("tie"), person_pred = ask("person");
    EXPECT_LT(count_foreground(tie_pred), count_foreground(person_pred)) << record.sample.image_id;
    EXPECT_GT(iou(tie_pred, *tie), 0.5) << record.sample.image_id;
    EXPECT_GT(iou(person_pred, *person), 0.5) << record.sample.image_id;
    ++checked;
  }
  EXPECT_EQ(checked, 4);
}

}  // namespace
}  // namespace clickseg
