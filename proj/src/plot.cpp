#include "singsynth/plot.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <stdexcept>

namespace singsynth::plot {

Image::Image(int w, int h, std::uint8_t fill) : width(w), height(h) {
    require(w > 0 && h > 0, "image dimensions must be positive");
    rgb.assign(static_cast<size_t>(w) * static_cast<size_t>(h) * 3, fill);
}

void Image::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || y < 0 || x >= width || y >= height) {
        return;
    }
    const size_t i = (static_cast<size_t>(y) * static_cast<size_t>(width) + static_cast<size_t>(x)) * 3;
    rgb[i] = r;
    rgb[i + 1] = g;
    rgb[i + 2] = b;
}

void write_png(const std::filesystem::path& path, const Image& image) {
    std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.string().c_str(), "wb"), &std::fclose);
    if (!file) {
        throw std::runtime_error("cannot write image " + path.string());
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng failed writing " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y) {
        png_write_row(png, image.rgb.data() + static_cast<size_t>(y) * static_cast<size_t>(image.width) * 3);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image mel_raster(const Matrix& mel, int pixels_per_frame, int pixels_per_bin) {
    require(mel.rows() > 0 && mel.cols() > 0, "mel_raster: empty mel");
    require(pixels_per_frame > 0 && pixels_per_bin > 0, "mel_raster: scale must be positive");
    const double lo = mel.minCoeff();
    const double hi = mel.maxCoeff();
    const double range = hi > lo ? hi - lo : 1.0;
    Image img(static_cast<int>(mel.rows()) * pixels_per_frame, static_cast<int>(mel.cols()) * pixels_per_bin);
    for (Eigen::Index f = 0; f < mel.rows(); ++f) {
        for (Eigen::Index b = 0; b < mel.cols(); ++b) {
            const double v = (mel(f, b) - lo) / range;
            const auto g = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - v)));
            const int y0 = static_cast<int>(mel.cols() - 1 - b) * pixels_per_bin;
            for (int dx = 0; dx < pixels_per_frame; ++dx) {
                for (int dy = 0; dy < pixels_per_bin; ++dy) {
                    img.set(static_cast<int>(f) * pixels_per_frame + dx, y0 + dy, g, g, g);
                }
            }
        }
    }
    return img;
}

Image pitch_plot(const std::vector<std::vector<double>>& contours, int width, int height) {
    require(!contours.empty(), "pitch_plot: nothing to plot");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    size_t frames = 0;
    for (const auto& c : contours) {
        frames = std::max(frames, c.size());
        for (double p : c) {
            if (p >= 0) {
                lo = std::min(lo, p);
                hi = std::max(hi, p);
            }
        }
    }
    Image img(width, height);
    if (frames == 0 || !std::isfinite(lo)) {
        return img;
    }
    lo = std::floor(lo) - 1;
    hi = std::ceil(hi) + 1;
    const int margin = 10;
    auto to_x = [&](size_t f) {
        return margin + static_cast<int>(std::lround(static_cast<double>(f) * (width - 2 * margin - 1) /
                                                     std::max<size_t>(1, frames - 1)));
    };
    auto to_y = [&](double p) {
        return height - 1 - margin - static_cast<int>(std::lround((p - lo) / (hi - lo) * (height - 2 * margin - 1)));
    };
    // Light grid every semitone.
    for (double p = lo; p <= hi; p += 1.0) {
        const int y = to_y(p);
        for (int x = margin; x < width - margin; ++x) {
            img.set(x, y, 225, 225, 225);
        }
    }
    const std::array<std::array<std::uint8_t, 3>, 4> palette{{{0, 0, 0}, {200, 30, 30}, {30, 90, 200}, {30, 150, 60}}};
    for (size_t k = 0; k < contours.size(); ++k) {
        const auto& colour = palette[k % palette.size()];
        const auto& c = contours[k];
        for (size_t f = 0; f < c.size(); ++f) {
            if (c[f] < 0) {
                continue;
            }
            const int x0 = to_x(f);
            const int y0 = to_y(c[f]);
            img.set(x0, y0, colour[0], colour[1], colour[2]);
            if (f + 1 < c.size() && c[f + 1] >= 0) {
                const int x1 = to_x(f + 1);
                const int y1 = to_y(c[f + 1]);
                const int n = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
                for (int s = 1; s <= n; ++s) {
                    img.set(x0 + (x1 - x0) * s / n, y0 + (y1 - y0) * s / n, colour[0], colour[1], colour[2]);
                }
            }
        }
    }
    return img;
}

}  // namespace singsynth::plot
