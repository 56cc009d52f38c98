#include <cmath>
#include <filesystem>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "clickseg/error.hpp"
#include "clickseg/saliency.hpp"

namespace clickseg {
namespace {

struct Blob {
  int cx, cy;
  double s;
};

// Direct evaluation of the Gaussian sum, independent of the parser.
double gaussian_sum(const std::vector<Blob>& blobs, int x, int y) {
  double v = 0;
  for (const auto& b : blobs) v += std::exp(-((x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy)) / (2 * b.s * b.s));
  return v;
}

std::pair<int, int> argmax(const FloatGrid& g) {
  int bx = 0, by = 0;
  for (int y = 0; y < g.height(); ++y)
    for (int x = 0; x < g.width(); ++x)
      if (g(y, x) > g(by, bx)) {
        bx = x;
        by = y;
      }
  return {bx, by};
}

TEST(StubSaliencyTest, CornerBlobOnThreeByThree) {
  auto m = stub_saliency(3, 3, "blob:cx=0,cy=0,s=1");
  EXPECT_FLOAT_EQ(m.values(0, 0), 1.0f);
  EXPECT_NEAR(m.values(0, 1), std::exp(-0.5), 1e-6);
  EXPECT_NEAR(m.values(0, 1), 0.6065, 1e-4);
}

TEST(StubSaliencyTest, CenteredBumpPeaksAtCenter) {
  auto m = stub_saliency(32, 32, "blob:cx=16,cy=16,s=4");
  EXPECT_EQ(argmax(m.values), std::make_pair(16, 16));
  EXPECT_NEAR(m.values(16, 20), std::exp(-0.5), 1e-6);
}

TEST(StubSaliencyTest, TwoBlobsArePointwiseSum) {
  auto a = stub_saliency(20, 24, "blob:cx=3,cy=4,s=2.5");
  auto b = stub_saliency(20, 24, "blob:cx=15,cy=11,s=4");
  auto ab = stub_saliency(20, 24, "blob:cx=3,cy=4,s=2.5;blob:cx=15,cy=11,s=4");
  auto ab_short = stub_saliency(20, 24, "blob:cx=3,cy=4,s=2.5;cx=15,cy=11,s=4");
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 24; ++x) {
      EXPECT_NEAR(ab.values(y, x), a.values(y, x) + b.values(y, x), 1e-6);
      EXPECT_EQ(ab.values(y, x), ab_short.values(y, x));
    }
}

TEST(StubSaliencyTest, RandomSpecsMatchDirectEvaluation) {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 100; ++trial) {
    int h = 1 + static_cast<int>(gen() % 40), w = 1 + static_cast<int>(gen() % 40);
    int n = 1 + static_cast<int>(gen() % 4);
    std::vector<Blob> blobs;
    std::string spec;
    for (int i = 0; i < n; ++i) {
      Blob b{static_cast<int>(gen() % w), static_cast<int>(gen() % h),
             0.5 + std::uniform_real_distribution<double>(0, 10)(gen)};
      blobs.push_back(b);
      char buf[96];
      std::snprintf(buf, sizeof buf, "%sblob:cx=%d,cy=%d,s=%.17g", i ? ";" : "", b.cx, b.cy, b.s);
      spec += buf;
    }
    auto m = stub_saliency(h, w, spec);
    ASSERT_EQ(m.values.height(), h);
    ASSERT_EQ(m.values.width(), w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) ASSERT_NEAR(m.values(y, x), gaussian_sum(blobs, x, y), 1e-6) << spec;
    if (n == 1) EXPECT_EQ(argmax(m.values), std::make_pair(blobs[0].cx, blobs[0].cy));
  }
}

TEST(StubSaliencyTest, ParseErrorQuotesSpec) {
  for (const char* bad : {"dog", "blob:cx=1,cy=2", "blob:cx=a,cy=2,s=1", "blob:cx=1,cy=2,s=-1", "blob:cx=1,cy=2,s=1;",
                          "blob:cx=1,cy=2,s=1,z=3"}) {
    try {
      parse_blob_spec(bad);
      FAIL() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::parse_error);
      EXPECT_NE(std::string(e.what()).find(bad), std::string::npos);
    }
  }
}

TEST(ComputeSaliencyTest, StubThroughBackendIsDeterministicAndShaped) {
  StubBackend backend;
  RgbImage img(40, 30);
  ImageSample sample{"img", 40, 30, ""};
  auto a = compute_saliency(backend, sample, img, "blob:cx=5,cy=6,s=3");
  auto b = compute_saliency(backend, sample, img, "blob:cx=5,cy=6,s=3");
  EXPECT_EQ(a.values.height(), 30);
  EXPECT_EQ(a.values.width(), 40);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.backend_id, "stub");
  EXPECT_EQ(a.text, "blob:cx=5,cy=6,s=3");
}

TEST(ComputeSaliencyTest, RejectsEmptyTextAndShapeMismatch) {
  StubBackend backend;
  RgbImage img(8, 8);
  EXPECT_THROW(compute_saliency(backend, {"i", 8, 8, ""}, img, "  "), Error);
  EXPECT_THROW(compute_saliency(backend, {"i", 9, 8, ""}, img, "blob:cx=1,cy=1,s=1"), Error);
}

TEST(ComputeSaliencyTest, SoftmaxOptionSumsToOne) {
  StubBackend backend;
  RgbImage img(10, 10);
  auto m = compute_saliency(backend, {"i", 10, 10, ""}, img, "blob:cx=2,cy=7,s=2", {.softmax = true});
  double total = 0;
  for (float v : m.values) total += v;
  EXPECT_NEAR(total, 1.0, 1e-5);
  EXPECT_EQ(argmax(m.values), std::make_pair(2, 7));
}

TEST(PlaceholderBackendTest, ThrowsNotImplemented) {
  PlaceholderBackend gradcam("gradcam");
  RgbImage img(4, 4);
  try {
    compute_saliency(gradcam, {"i", 4, 4, ""}, img, "dog");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::not_implemented);
  }
}

TEST(AnnotationStubTest, PeaksAtInstanceOfNamedClass) {
  Mask disk(32, 32, 0), square(32, 32, 0);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      if ((x - 8) * (x - 8) + (y - 9) * (y - 9) <= 16) disk(y, x) = 1;
      if (x >= 20 && x < 28 && y >= 18 && y < 26) square(y, x) = 1;
    }
  std::vector<InstanceMask> inst{{"im", "a", "disk", disk}, {"im", "b", "square", square}};
  AnnotationStubBackend backend(inst);
  RgbImage img(32, 32);
  auto d = compute_saliency(backend, {"im", 32, 32, ""}, img, "Disk");
  auto s = compute_saliency(backend, {"im", 32, 32, ""}, img, "square");
  EXPECT_EQ(argmax(d.values), std::make_pair(8, 9));
  EXPECT_TRUE(square(argmax(s.values).second, argmax(s.values).first));
  auto none = compute_saliency(backend, {"im", 32, 32, ""}, img, "triangle");
  for (float v : none.values) EXPECT_EQ(v, 0.0f);
  auto other = compute_saliency(backend, {"elsewhere", 32, 32, ""}, img, "disk");
  for (float v : other.values) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(backend.blob_spec("im", "disk").substr(0, 15), "blob:cx=8,cy=9,");
}

class CountingBackend : public SaliencyBackend {
 public:
  std::string id() const override { return "counting"; }
  SaliencyMap compute(const ImageSample&, const RgbImage& image, std::string_view text) override {
    ++calls;
    auto m = stub_saliency(image.height, image.width, text);
    m.values(0, 0) += static_cast<float>(image.at(0, 0, 0));
    return m;
  }
  int calls = 0;
};

TEST(CachedBackendTest, CachedEqualsUncachedAndHitsSkipBackend) {
  auto inner = std::make_shared<CountingBackend>();
  auto cache = std::make_shared<SaliencyCache>();
  CachedBackend cached(inner, cache);
  RgbImage img(16, 12);
  img.at(0, 0, 0) = 3;
  ImageSample sample{"x", 16, 12, ""};
  const std::string spec = "blob:cx=4,cy=4,s=2";
  auto direct = compute_saliency(*inner, sample, img, spec);
  auto first = compute_saliency(cached, sample, img, spec);
  auto second = compute_saliency(cached, sample, img, spec);
  EXPECT_EQ(direct.values, first.values);
  EXPECT_EQ(first.values, second.values);
  EXPECT_EQ(inner->calls, 2);
  EXPECT_EQ(cached.backend_calls(), 1u);

  img.at(0, 0, 0) = 4;
  auto changed = compute_saliency(cached, sample, img, spec);
  EXPECT_NE(changed.values, first.values);
  EXPECT_EQ(cached.backend_calls(), 2u);
}

TEST(CachedBackendTest, DiskLayoutAndReload) {
  auto dir = std::filesystem::temp_directory_path() / ("clickseg_cache_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  RgbImage img(9, 7);
  ImageSample sample{"x", 9, 7, ""};
  const std::string spec = "blob:cx=1,cy=2,s=1.5";
  FloatGrid computed;
  {
    CachedBackend cached(std::make_shared<StubBackend>(), std::make_shared<SaliencyCache>(dir));
    computed = compute_saliency(cached, sample, img, spec).values;
  }
  SaliencyCache reloaded(dir);
  auto file = reloaded.file_for("stub", image_content_hash(img), spec);
  EXPECT_TRUE(std::filesystem::exists(file));
  EXPECT_EQ(file.parent_path().parent_path().filename(), "stub");
  EXPECT_EQ(file.extension(), ".npy");
  auto inner = std::make_shared<CountingBackend>();
  auto hit = reloaded.find("stub", image_content_hash(img), spec);
  ASSERT_TRUE(hit);
  EXPECT_EQ(*hit, computed);
  std::filesystem::remove_all(dir);
}

TEST(CachedBackendTest, ConcurrentRequestsComputeOnce) {
  auto inner = std::make_shared<CountingBackend>();
  CachedBackend cached(inner, std::make_shared<SaliencyCache>());
  RgbImage img(20, 20);
  std::vector<FloatGrid> results(8);
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i)
    threads.emplace_back([&, i] { results[i] = compute_saliency(cached, {"x", 20, 20, ""}, img, "blob:cx=3,cy=3,s=2").values; });
  for (auto& t : threads) t.join();
  for (const auto& r : results) EXPECT_EQ(r, results[0]);
  EXPECT_EQ(inner->calls, 1);
}

}  // namespace
}  // namespace clickseg
