#include "cdam/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>

#include "cdam/error.hpp"

namespace cdam {

namespace {

// Owns a png_image and releases libpng state on scope exit.
struct PngHandle {
    png_image image;
    PngHandle() {
        std::memset(&image, 0, sizeof(image));
        image.version = PNG_IMAGE_VERSION;
    }
    ~PngHandle() { png_image_free(&image); }
    PngHandle(const PngHandle&) = delete;
    PngHandle& operator=(const PngHandle&) = delete;
};

}  // namespace

RgbImage read_png(const std::filesystem::path& path) {
    std::FILE* probe = std::fopen(path.c_str(), "rb");
    if (probe == nullptr) fail(Errc::io, "cannot open image '" + path.string() + "'");
    std::fclose(probe);

    PngHandle h;
    if (!png_image_begin_read_from_file(&h.image, path.c_str())) {
        fail(Errc::parse, "'" + path.string() + "' is not a readable PNG: " + h.image.message);
    }
    if (h.image.format != PNG_FORMAT_RGB) {
        fail(Errc::parse, "'" + path.string() + "': unsupported PNG encoding (only 8-bit RGB without alpha)");
    }
    RgbImage out;
    out.width = h.image.width;
    out.height = h.image.height;
    out.pixels.resize(PNG_IMAGE_SIZE(h.image));
    if (!png_image_finish_read(&h.image, nullptr, out.pixels.data(), 0, nullptr)) {
        fail(Errc::parse, "'" + path.string() + "': corrupt PNG data: " + h.image.message);
    }
    return out;
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
    if (image.pixels.size() != image.width * image.height * 3 || image.width == 0 || image.height == 0) {
        fail(Errc::invalid_argument, "write_png: pixel buffer does not match " + std::to_string(image.width) + "x" +
                                         std::to_string(image.height));
    }
    PngHandle h;
    h.image.width = static_cast<png_uint_32>(image.width);
    h.image.height = static_cast<png_uint_32>(image.height);
    h.image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&h.image, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
        fail(Errc::io, "cannot write PNG '" + path.string() + "': " + h.image.message);
    }
}

Tensor to_unit_tensor(const RgbImage& image) {
    Tensor t({image.height, image.width, 3});
    for (std::size_t i = 0; i < image.pixels.size(); ++i) t[i] = static_cast<double>(image.pixels[i]) / 255.0;
    return t;
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
    if (image.rank() != 3) fail(Errc::shape_mismatch, "resize_bilinear expects [H x W x C]");
    const std::size_t ih = image.dim(0), iw = image.dim(1), c = image.dim(2);
    if (ih == height && iw == width) return image;
    Tensor out({height, width, c});
    auto coord = [](std::size_t px, std::size_t n_out, std::size_t n_in, std::size_t& lo, std::size_t& hi,
                    double& frac) {
        const double u = (static_cast<double>(px) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
        const double clamped = std::clamp(u, 0.0, static_cast<double>(n_in - 1));
        lo = static_cast<std::size_t>(std::floor(clamped));
        hi = std::min(lo + 1, n_in - 1);
        frac = clamped - static_cast<double>(lo);
    };
    for (std::size_t y = 0; y < height; ++y) {
        std::size_t y0, y1;
        double fy;
        coord(y, height, ih, y0, y1, fy);
        for (std::size_t x = 0; x < width; ++x) {
            std::size_t x0, x1;
            double fx;
            coord(x, width, iw, x0, x1, fx);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double a = image.at3(y0, x0, ch), b = image.at3(y0, x1, ch);
                const double cc = image.at3(y1, x0, ch), d = image.at3(y1, x1, ch);
                const double top = a + (b - a) * fx;
                const double bottom = cc + (d - cc) * fx;
                out.at3(y, x, ch) = top + (bottom - top) * fy;
            }
        }
    }
    return out;
}

Tensor normalize(const Tensor& unit_image, const Preprocess& pre) {
    Tensor out = unit_image;
    const std::size_t c = unit_image.dim(2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::size_t ch = i % c;
        out[i] = (out[i] - pre.mean[ch]) / pre.std[ch];
    }
    return out;
}

Tensor denormalize(const Tensor& image, const Preprocess& pre) {
    Tensor out = image;
    const std::size_t c = image.dim(2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::size_t ch = i % c;
        out[i] = out[i] * pre.std[ch] + pre.mean[ch];
    }
    return out;
}

Tensor prepare_image(const RgbImage& image, const ViTConfig& config, const Preprocess& pre, ResizeMode mode) {
    Tensor unit = to_unit_tensor(image);
    const std::size_t s = config.image_size;
    if (image.width != s || image.height != s) {
        if (mode == ResizeMode::exact) {
            fail(Errc::shape_mismatch, "image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                                           ", model expects " + std::to_string(s) + "x" + std::to_string(s) +
                                           " (enable resizing to rescale)");
        }
        unit = resize_bilinear(unit, s, s);
    }
    return normalize(unit, pre);
}

Tensor load_image(const std::filesystem::path& path, const ViTConfig& config, const Preprocess& pre,
                  ResizeMode mode) {
    return prepare_image(read_png(path), config, pre, mode);
}

}  // namespace cdam
