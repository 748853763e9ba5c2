#include "qdgs/image.hpp"

#include "qdgs/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

namespace qdgs {

ImageBuffer downsample(const ImageBuffer& image, int factor)
{
    if (factor < 1 || image.width % factor != 0 || image.height % factor != 0)
        throw ConfigError("downsample factor must divide the image size");
    ImageBuffer out(image.width / factor, image.height / factor, 0.0);
    const double norm = 1.0 / (factor * factor);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(x / factor, y / factor, c) += image.at(x, y, c) * norm;
    return out;
}

ImageBuffer resize_box(const ImageBuffer& image, int width, int height)
{
    if (image.width % width == 0 && image.height % height == 0 && image.width / width == image.height / height)
        return downsample(image, image.width / width);
    ImageBuffer out(width, height, 0.0);
    const double sx = static_cast<double>(image.width) / width;
    const double sy = static_cast<double>(image.height) / height;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double acc[3] = {0, 0, 0};
            double wsum = 0;
            const double x0 = x * sx, x1 = (x + 1) * sx, y0 = y * sy, y1 = (y + 1) * sy;
            for (int iy = static_cast<int>(y0); iy < std::min<int>(image.height, static_cast<int>(std::ceil(y1))); ++iy) {
                const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
                for (int ix = static_cast<int>(x0); ix < std::min<int>(image.width, static_cast<int>(std::ceil(x1)));
                     ++ix) {
                    const double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
                    const double wgt = wx * wy;
                    if (wgt <= 0)
                        continue;
                    wsum += wgt;
                    for (int c = 0; c < 3; ++c)
                        acc[c] += wgt * image.at(ix, iy, c);
                }
            }
            for (int c = 0; c < 3; ++c)
                out.at(x, y, c) = wsum > 0 ? acc[c] / wsum : 1.0;
        }
    }
    return out;
}

namespace {

unsigned char to_byte(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

struct FileCloser {
    void operator()(std::FILE* f) const
    {
        if (f)
            std::fclose(f);
    }
};

} // namespace

ImageBuffer quantize8(const ImageBuffer& image)
{
    ImageBuffer out = image;
    for (auto& v : out.rgb)
        v = to_byte(v) / 255.0;
    return out;
}

void write_png(const std::string& path, const ImageBuffer& image)
{
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp)
        throw IoError(path, "cannot open for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError(path, "libpng initialization failed");
    }
    std::vector<unsigned char> row(static_cast<std::size_t>(image.width) * 3);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError(path, "PNG encoding failed");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c)
                row[static_cast<std::size_t>(x) * 3 + c] = to_byte(image.at(x, y, c));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

ImageBuffer read_png(const std::string& path)
{
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw IoError(path, "cannot read PNG");
    img.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw IoError(path, "cannot decode PNG");
    }
    ImageBuffer out(static_cast<int>(img.width), static_cast<int>(img.height), 0.0);
    for (std::size_t i = 0; i < out.rgb.size(); ++i)
        out.rgb[i] = buf[i] / 255.0;
    return out;
}

void write_ppm(const std::string& path, const ImageBuffer& image)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError(path, "cannot open for writing");
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    for (double v : image.rgb)
        out.put(static_cast<char>(to_byte(v)));
    if (!out)
        throw IoError(path, "write failed");
}

} // namespace qdgs
