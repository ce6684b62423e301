#pragma once

#include <filesystem>

#include "coview/core.hpp"

namespace coview {

// 8-bit RGB PNG; values are quantised to k/255.
void write_frame_png(const std::filesystem::path& path, const Frame& frame);
Frame read_frame_png(const std::filesystem::path& path);

// 8-bit grayscale PNG.
void write_gray_png(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_gray_png(const std::filesystem::path& path);

void write_rgb_png(const std::filesystem::path& path, int width, int height,
                   const std::vector<uint8_t>& rgb);

// Flow file: "CVFL", u32 width, u32 height (little-endian), then
// height*width*(u,v) float32 little-endian, row-major, interleaved.
void write_flow(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flow(const std::filesystem::path& path);

}  // namespace coview
