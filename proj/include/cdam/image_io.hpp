#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cdam/tensor.hpp"
#include "cdam/vit.hpp"

namespace cdam {

// 8-bit RGB, interleaved, row-major.
struct RgbImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t& at(std::size_t y, std::size_t x, std::size_t ch) { return pixels[(y * width + x) * 3 + ch]; }
    std::uint8_t at(std::size_t y, std::size_t x, std::size_t ch) const { return pixels[(y * width + x) * 3 + ch]; }

    bool operator==(const RgbImage&) const = default;
};

// Only 8-bit RGB PNGs (no alpha, no palette, no grayscale). Errc::io when the
// file cannot be opened, Errc::parse for unsupported or corrupt encodings.
RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);

enum class ResizeMode { exact, bilinear };

// [H x W x 3] in [0, 1].
Tensor to_unit_tensor(const RgbImage& image);

// Half-pixel-centre bilinear resize of an [H x W x C] tensor, border clamped.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

// (x - mean[c]) / std[c] per channel, and its inverse.
Tensor normalize(const Tensor& unit_image, const Preprocess& pre);
Tensor denormalize(const Tensor& image, const Preprocess& pre);

// Converts to the model input: exact mode requires image_size x image_size,
// bilinear mode resizes first. Errc::shape_mismatch on a size mismatch.
Tensor prepare_image(const RgbImage& image, const ViTConfig& config, const Preprocess& pre, ResizeMode mode);

Tensor load_image(const std::filesystem::path& path, const ViTConfig& config, const Preprocess& pre,
                  ResizeMode mode);

}  // namespace cdam
