#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "cdam/estimators.hpp"
#include "cdam/image_io.hpp"

namespace cdam {

// Diverging colormap: -1 -> negative, 0 -> white, +1 -> positive, linear in
// between. Each map is scaled by its own max |score|; no clipping.
struct HeatmapStyle {
    std::array<std::uint8_t, 3> positive{255, 127, 0};  // orange
    std::array<std::uint8_t, 3> negative{0, 90, 255};   // blue
};

std::array<std::uint8_t, 3> heatmap_color(double normalized, const HeatmapStyle& style);

// All-zero maps render solid white. Errc::numeric for non-finite maps.
RgbImage heatmap_image(const PixelMap& map, const HeatmapStyle& style = {});
void render_heatmap(const PixelMap& map, const HeatmapStyle& style, const std::filesystem::path& out_path);

}  // namespace cdam
