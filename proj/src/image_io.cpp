#include "coview/image_io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace coview {
namespace {

void write_png(const std::filesystem::path& path, int w, int h, bool rgb,
               const std::vector<uint8_t>& bytes) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr))
    fail(ErrorKind::Io, "cannot write " + path.string() + ": " + img.message);
}

std::vector<uint8_t> read_png(const std::filesystem::path& path, bool rgb, int& w, int& h) {
  if (!std::filesystem::exists(path))
    fail(ErrorKind::Integrity, "missing file " + path.string());
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    fail(ErrorKind::Integrity, "cannot decode " + path.string() + ": " + img.message);
  img.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<uint8_t> bytes(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr))
    fail(ErrorKind::Integrity, "cannot decode " + path.string() + ": " + img.message);
  w = static_cast<int>(img.width);
  h = static_cast<int>(img.height);
  return bytes;
}

void put_u32(std::ostream& os, uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(const unsigned char* b) {
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

}  // namespace

void write_frame_png(const std::filesystem::path& path, const Frame& frame) {
  const int w = frame.width(), h = frame.height();
  std::vector<uint8_t> bytes(size_t(w) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        bytes[(size_t(y) * w + x) * 3 + c] = static_cast<uint8_t>(
            std::lround(std::clamp(frame.at(c, y, x), 0.0f, 1.0f) * 255.0f));
  write_png(path, w, h, true, bytes);
}

Frame read_frame_png(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto bytes = read_png(path, true, w, h);
  Frame f(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) f.at(c, y, x) = bytes[(size_t(y) * w + x) * 3 + c] / 255.0f;
  return f;
}

void write_gray_png(const std::filesystem::path& path, const LabelMap& labels) {
  write_png(path, labels.width(), labels.height(), false, labels.data());
}

LabelMap read_gray_png(const std::filesystem::path& path) {
  int w = 0, h = 0;
  auto bytes = read_png(path, false, w, h);
  LabelMap m(w, h);
  m.data() = std::move(bytes);
  return m;
}

void write_rgb_png(const std::filesystem::path& path, int width, int height,
                   const std::vector<uint8_t>& rgb) {
  require(rgb.size() == size_t(width) * height * 3, ErrorKind::Shape, "rgb buffer size");
  write_png(path, width, height, true, rgb);
}

void write_flow(const std::filesystem::path& path, const FlowField& flow) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Io, "cannot write " + path.string());
  os.write("CVFL", 4);
  put_u32(os, static_cast<uint32_t>(flow.width()));
  put_u32(os, static_cast<uint32_t>(flow.height()));
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x)
      for (int c = 0; c < 2; ++c) put_u32(os, std::bit_cast<uint32_t>(flow.at(c, y, x)));
  if (!os) fail(ErrorKind::Io, "short write to " + path.string());
}

FlowField read_flow(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Integrity, "missing flow file " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "CVFL", 4) != 0)
    fail(ErrorKind::Integrity, "bad flow magic in " + path.string());
  const uint32_t w = get_u32(buf.data() + 4), h = get_u32(buf.data() + 8);
  if (w == 0 || h == 0 || buf.size() != 12 + size_t(w) * h * 8)
    fail(ErrorKind::Integrity, "flow payload size mismatch in " + path.string());
  FlowField f(static_cast<int>(w), static_cast<int>(h));
  const unsigned char* p = buf.data() + 12;
  for (uint32_t y = 0; y < h; ++y)
    for (uint32_t x = 0; x < w; ++x)
      for (int c = 0; c < 2; ++c, p += 4) f.at(c, y, x) = std::bit_cast<float>(get_u32(p));
  return f;
}

}  // namespace coview
