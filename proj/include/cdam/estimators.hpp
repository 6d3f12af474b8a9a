#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "cdam/head_grad.hpp"
#include "cdam/tensor.hpp"
#include "cdam/vit.hpp"

namespace cdam {

// Per-token importance. `grid` holds the patch tokens only ([grid x grid],
// row-major); `token_scores` holds every token including CLS (index 0) and
// registers, which completeness checks need.
struct ScoreMap {
    Tensor grid;
    Tensor token_scores;

    double cls_score() const { return token_scores.empty() ? 0.0 : token_scores[0]; }
};

struct PixelMap {
    Tensor grid;  // [H x W]
};

struct ConceptVector {
    Tensor latent;  // l_c, [d_model]
    std::size_t n_examples = 0;
};

// Builds a ScoreMap from a full per-token score vector.
ScoreMap score_map_from_tokens(const ViTConfig& config, Tensor token_scores);

// Head-averaged CLS-query attention of the final block, patch tokens only.
ScoreMap attention_map(const ViTModel& model, const ForwardTrace& trace);

// Vanilla CDAM: S_i = sum_j T_ij * d target / d T_ij at the captured site.
ScoreMap cdam(const ViTModel& model, const ForwardTrace& trace, const GradTarget& target,
              ActivationSite site = ActivationSite::post_ln1);

ScoreMap cdam_class(const ViTModel& model, const ForwardTrace& trace, std::size_t class_index,
                    ActivationSite site = ActivationSite::post_ln1);

ScoreMap cdam_concept(const ViTModel& model, const ForwardTrace& trace, const Tensor& concept_vector,
                      Metric metric = Metric::dot, ActivationSite site = ActivationSite::post_ln1);

// Mean CLS latent over the images. Images are processed on `jobs` threads;
// the mean is accumulated in input order.
ConceptVector concept_embedding(const ViTModel& model, std::span<const Tensor> images, unsigned jobs = 1);

// 0.1 x population std of the whole site activation matrix.
double default_smooth_sigma(const Tensor& activations);

struct SmoothOptions {
    double sigma = -1.0;  // negative: default_smooth_sigma(site activations)
    std::size_t n = 50;
    std::uint64_t seed = 0;
    ActivationSite site = ActivationSite::block_input;
    unsigned jobs = 1;
};

// Draw k uses SeededRng(derive_seed(seed, k)), so results do not depend on
// `jobs`. The draws are summed in k order. When `token_variance` is non-null it
// receives the per-token sample variance of the n draws (n - 1 denominator).
ScoreMap smooth_cdam(const ViTModel& model, const ForwardTrace& trace, const GradTarget& target,
                     const SmoothOptions& options, Tensor* token_variance = nullptr);

// Right Riemann sum along the straight path from the zero baseline, k = 1..n.
ScoreMap integrated_cdam(const ViTModel& model, const ForwardTrace& trace, const GradTarget& target,
                         std::size_t n = 50, ActivationSite site = ActivationSite::block_input, unsigned jobs = 1);

enum class UpsampleMode { nearest, bilinear };

UpsampleMode parse_upsample_mode(const std::string& name);
const char* upsample_mode_name(UpsampleMode mode) noexcept;

// Nearest requires H and W to be multiples of the grid extents. Bilinear maps
// pixel centres onto cell centres and clamps at the border.
PixelMap upsample(const ScoreMap& map, std::size_t height, std::size_t width, UpsampleMode mode);
PixelMap upsample(const Tensor& grid, std::size_t height, std::size_t width, UpsampleMode mode);

}  // namespace cdam
