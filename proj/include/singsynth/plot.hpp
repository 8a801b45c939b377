#pragma once

// Static PNG figures: a greyscale mel raster and a pitch line plot.

#include "singsynth/common.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace singsynth::plot {

struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

    Image(int w, int h, std::uint8_t fill = 255);
    void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

void write_png(const std::filesystem::path& path, const Image& image);

// Frames run left to right, mel bins bottom to top; darker is larger.
Image mel_raster(const Matrix& mel, int pixels_per_frame = 2, int pixels_per_bin = 6);

// One line per contour; non-voiced values (< 0) leave gaps.
Image pitch_plot(const std::vector<std::vector<double>>& contours, int width = 800, int height = 300);

}  // namespace singsynth::plot
