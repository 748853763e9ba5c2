#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace qdgs {

/// Interleaved RGB, row-major, channel values in [0, 1].
struct ImageBuffer {
    int width = 0;
    int height = 0;
    std::vector<double> rgb;

    ImageBuffer() = default;
    ImageBuffer(int w, int h, double fill = 1.0)
        : width(w), height(h), rgb(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {}

    std::size_t pixels() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
    double& at(int x, int y, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    bool operator==(const ImageBuffer&) const = default;
};

/// Average-pools by an integer factor; width and height must be divisible by it.
ImageBuffer downsample(const ImageBuffer& image, int factor);

/// Area-weighted resize to an arbitrary size.
ImageBuffer resize_box(const ImageBuffer& image, int width, int height);

/// 8-bit RGB PNG. Throws IoError naming the path on failure.
void write_png(const std::string& path, const ImageBuffer& image);
ImageBuffer read_png(const std::string& path);

/// Quantizes to 8 bits per channel, the precision PNG round-trips exactly.
ImageBuffer quantize8(const ImageBuffer& image);

/// Binary PPM (P6).
void write_ppm(const std::string& path, const ImageBuffer& image);

} // namespace qdgs
