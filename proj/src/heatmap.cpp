#include "cdam/heatmap.hpp"

#include <algorithm>
#include <cmath>

#include "cdam/error.hpp"

namespace cdam {

std::array<std::uint8_t, 3> heatmap_color(double normalized, const HeatmapStyle& style) {
    const double v = std::clamp(normalized, -1.0, 1.0);
    const auto& target = v >= 0.0 ? style.positive : style.negative;
    const double w = std::abs(v);
    std::array<std::uint8_t, 3> out{};
    for (int ch = 0; ch < 3; ++ch) {
        out[ch] = static_cast<std::uint8_t>(std::lround(255.0 + (static_cast<double>(target[ch]) - 255.0) * w));
    }
    return out;
}

RgbImage heatmap_image(const PixelMap& map, const HeatmapStyle& style) {
    if (map.grid.rank() != 2) fail(Errc::shape_mismatch, "heatmap needs an [H x W] map");
    require_finite(map.grid, "heatmap input");
    RgbImage img;
    img.height = map.grid.rows();
    img.width = map.grid.cols();
    img.pixels.assign(img.width * img.height * 3, 255);
    const double peak = max_abs(map.grid.values());
    if (peak == 0.0) return img;
    for (std::size_t i = 0; i < map.grid.size(); ++i) {
        const auto c = heatmap_color(map.grid[i] / peak, style);
        for (int ch = 0; ch < 3; ++ch) img.pixels[i * 3 + ch] = c[ch];
    }
    return img;
}

void render_heatmap(const PixelMap& map, const HeatmapStyle& style, const std::filesystem::path& out_path) {
    write_png(out_path, heatmap_image(map, style));
}

}  // namespace cdam
