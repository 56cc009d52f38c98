#include "clickseg/image.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <iterator>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "clickseg/error.hpp"

namespace clickseg {
namespace {

constexpr std::array<std::uint8_t, 8> kPngSignature{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

bool is_png(std::span<const std::uint8_t> b) {
  return b.size() >= kPngSignature.size() && std::equal(kPngSignature.begin(), kPngSignature.end(), b.begin());
}

bool is_jpeg(std::span<const std::uint8_t> b) { return b.size() >= 3 && b[0] == 0xff && b[1] == 0xd8 && b[2] == 0xff; }

bool png_complete(std::span<const std::uint8_t> b) {
  static constexpr std::array<std::uint8_t, 4> iend{'I', 'E', 'N', 'D'};
  if (b.size() < 20) return false;
  auto tail = b.subspan(b.size() - 8, 4);
  return std::equal(iend.begin(), iend.end(), tail.begin());
}

bool jpeg_complete(std::span<const std::uint8_t> b) {
  // Some encoders append padding after EOI; tolerate trailing zeros.
  std::size_t end = b.size();
  while (end > 2 && b[end - 1] == 0) --end;
  return end >= 4 && b[end - 2] == 0xff && b[end - 1] == 0xd9;
}

std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) | b[at + 3];
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::not_found, "cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RgbImage from_bgr(const cv::Mat& bgr) {
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  RgbImage out(rgb.cols, rgb.rows);
  for (int y = 0; y < rgb.rows; ++y) {
    std::memcpy(&out.at(y, 0, 0), rgb.ptr<std::uint8_t>(y), static_cast<std::size_t>(rgb.cols) * 3);
  }
  return out;
}

cv::Mat to_bgr(const RgbImage& image) {
  if (image.width <= 0 || image.height <= 0) throw Error(ErrorCode::invalid_argument, "empty image");
  cv::Mat rgb(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.data.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

}  // namespace

RgbImage decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw Error(ErrorCode::parse_error, "empty image payload");
  if (is_png(bytes)) {
    if (!png_complete(bytes)) throw Error(ErrorCode::parse_error, "truncated PNG (no IEND chunk)");
  } else if (is_jpeg(bytes)) {
    if (!jpeg_complete(bytes)) throw Error(ErrorCode::parse_error, "truncated JPEG (no EOI marker)");
  } else {
    throw Error(ErrorCode::parse_error, "unsupported image format (expected PNG or JPEG)");
  }
  cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat bgr = cv::imdecode(buf, cv::IMREAD_COLOR);
  if (bgr.empty()) throw Error(ErrorCode::parse_error, "undecodable image payload");
  return from_bgr(bgr);
}

RgbImage load_image(const std::filesystem::path& path) {
  auto bytes = read_bytes(path);
  try {
    return decode_image(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", to_bgr(image), out)) throw Error(ErrorCode::io_error, "PNG encoding failed");
  return out;
}

void save_png(const RgbImage& image, const std::filesystem::path& path) {
  if (!cv::imwrite(path.string(), to_bgr(image))) throw Error(ErrorCode::io_error, "cannot write " + path.string());
}

void save_mask_png(const Mask& mask, const std::filesystem::path& path) {
  cv::Mat m(mask.height(), mask.width(), CV_8UC1);
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) m.at<std::uint8_t>(y, x) = mask(y, x) ? 255 : 0;
  if (!cv::imwrite(path.string(), m)) throw Error(ErrorCode::io_error, "cannot write " + path.string());
}

Mask load_mask_png(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw Error(ErrorCode::parse_error, "cannot read mask " + path.string());
  Mask out(m.rows, m.cols, 0);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) out(y, x) = m.at<std::uint8_t>(y, x) >= 128 ? 1 : 0;
  return out;
}

std::pair<int, int> probe_image_size(std::span<const std::uint8_t> bytes) {
  if (is_png(bytes)) {
    if (bytes.size() < 24) throw Error(ErrorCode::parse_error, "PNG header too short");
    return {static_cast<int>(be32(bytes, 16)), static_cast<int>(be32(bytes, 20))};
  }
  if (is_jpeg(bytes)) {
    std::size_t i = 2;
    while (i + 9 < bytes.size()) {
      if (bytes[i] != 0xff) {
        ++i;
        continue;
      }
      std::uint8_t marker = bytes[i + 1];
      if (marker == 0xff) {
        ++i;
        continue;
      }
      std::size_t len = (std::size_t{bytes[i + 2]} << 8) | bytes[i + 3];
      bool sof = marker >= 0xc0 && marker <= 0xcf && marker != 0xc4 && marker != 0xc8 && marker != 0xcc;
      if (sof) {
        int h = (bytes[i + 5] << 8) | bytes[i + 6];
        int w = (bytes[i + 7] << 8) | bytes[i + 8];
        return {w, h};
      }
      i += 2 + len;
    }
    throw Error(ErrorCode::parse_error, "JPEG without frame header");
  }
  throw Error(ErrorCode::parse_error, "unsupported image format (expected PNG or JPEG)");
}

FloatGrid resize_bilinear(const FloatGrid& src, int height, int width) {
  if (height <= 0 || width <= 0) throw Error(ErrorCode::invalid_argument, "resize target must be positive");
  if (src.height() == height && src.width() == width) return src;
  cv::Mat in(src.height(), src.width(), CV_32FC1, const_cast<float*>(src.data()));
  cv::Mat out;
  cv::resize(in, out, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  FloatGrid result(height, width, 0.0f);
  for (int y = 0; y < height; ++y) std::memcpy(&result(y, 0), out.ptr<float>(y), sizeof(float) * width);
  return result;
}

Mask resize_nearest(const Mask& src, int height, int width) {
  if (height <= 0 || width <= 0) throw Error(ErrorCode::invalid_argument, "resize target must be positive");
  Mask out(height, width, 0);
  double sy = static_cast<double>(src.height()) / height;
  double sx = static_cast<double>(src.width()) / width;
  for (int y = 0; y < height; ++y) {
    int yy = std::min(src.height() - 1, static_cast<int>((y + 0.5) * sy));
    for (int x = 0; x < width; ++x) {
      int xx = std::min(src.width() - 1, static_cast<int>((x + 0.5) * sx));
      out(y, x) = src(yy, xx);
    }
  }
  return out;
}

RgbImage resize_rgb(const RgbImage& src, int width, int height) {
  if (height <= 0 || width <= 0) throw Error(ErrorCode::invalid_argument, "resize target must be positive");
  if (src.width == width && src.height == height) return src;
  cv::Mat in(src.height, src.width, CV_8UC3, const_cast<std::uint8_t*>(src.data.data()));
  cv::Mat out;
  cv::resize(in, out, cv::Size(width, height), 0, 0, cv::INTER_AREA);
  RgbImage result(width, height);
  for (int y = 0; y < height; ++y) std::memcpy(&result.at(y, 0, 0), out.ptr<std::uint8_t>(y), std::size_t(width) * 3);
  return result;
}

}  // namespace clickseg
