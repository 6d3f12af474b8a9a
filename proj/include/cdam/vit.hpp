#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cdam/tensor.hpp"

namespace cdam {

// How the final transformer block is evaluated.
//
//   standard           pre-LN block: x + MHA(LN1(x)), then + MLP(LN2(.)), final LN, head.
//   linear_pool        final block replaced by l = mean over all tokens of the site
//                      activations (LN1 bypassed), logits = head(l). The model is then
//                      linear in the final-block tokens.
//   detached_identity  LN1, LN2, MLP and the final LN bypassed: l = x_cls + MHA(x)_cls.
//                      The attention weights are treated as constants when
//                      differentiating, which makes the closed-form token scores exact.
//
// Only the final block is affected; earlier blocks are always standard.
enum class TailMode { standard, linear_pool, detached_identity };

const char* tail_mode_name(TailMode mode) noexcept;
TailMode parse_tail_mode(const std::string& name);

struct ViTConfig {
    std::size_t image_size = 224;
    std::size_t patch_size = 8;
    std::size_t d_model = 384;
    std::size_t n_heads = 6;
    std::size_t n_blocks = 12;
    std::size_t d_mlp = 1536;
    std::size_t n_classes = 0;  // 0 = headless (concept-only)
    double ln_eps = 1e-6;
    // Non-spatial tokens inserted right after CLS (token indices 1..n_registers).
    std::size_t n_registers = 0;
    TailMode tail_mode = TailMode::standard;

    std::size_t grid_size() const noexcept { return image_size / patch_size; }
    std::size_t n_patches() const noexcept { return grid_size() * grid_size(); }
    std::size_t first_patch_token() const noexcept { return 1 + n_registers; }
    std::size_t n_tokens() const noexcept { return first_patch_token() + n_patches(); }
    std::size_t d_head() const noexcept { return d_model / n_heads; }
    std::size_t patch_dim() const noexcept { return patch_size * patch_size * 3; }

    // Throws Errc::invalid_config.
    void validate() const;

    bool operator==(const ViTConfig&) const = default;
};

// Per-channel normalisation applied by load_image: (x - mean) / std with x in [0, 1].
struct Preprocess {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> std{1.0, 1.0, 1.0};

    bool operator==(const Preprocess&) const = default;
};

// y = x * weight + bias, weight stored [in x out].
struct Linear {
    Tensor weight;
    Tensor bias;
};

struct LayerNormParams {
    Tensor gamma;
    Tensor beta;
};

struct BlockWeights {
    LayerNormParams ln1;
    Linear wq, wk, wv, wo;
    LayerNormParams ln2;
    Linear fc1, fc2;
};

// Immutable after construction. Weight layouts:
//   patch_embed.weight  [patch_size*patch_size*3 x d_model], patch flattened (row, col, channel)
//   pos_embed           [(1 + n_patches) x d_model], CLS first
//   cls_token           [d_model]
//   register_tokens     [n_registers x d_model] (only when n_registers > 0)
//   attn / mlp / head   Linear, weight [in x out]
struct ViTModel {
    ViTConfig config;
    Preprocess preprocess;
    Linear patch_embed;
    Tensor pos_embed;
    Tensor cls_token;
    Tensor register_tokens;
    std::vector<BlockWeights> blocks;
    LayerNormParams final_ln;
    std::optional<Linear> head;

    bool has_head() const noexcept { return head.has_value() && config.n_classes > 0; }
    const BlockWeights& final_block() const { return blocks.back(); }
};

// Enumerates every tensor under its file name (see model-io naming scheme).
std::map<std::string, Tensor> named_tensors(const ViTModel& model);

// Expected shape of every tensor the config requires, by name.
std::map<std::string, Shape> required_tensor_shapes(const ViTConfig& config, bool with_head);

// Assembles a model from named tensors. Errc::missing_tensor / Errc::shape_mismatch.
ViTModel model_from_tensors(const ViTConfig& config, const Preprocess& preprocess,
                            const std::map<std::string, Tensor>& tensors);

// Checks every tensor against the config. Errc::shape_mismatch / invalid_config / numeric.
void validate_model(const ViTModel& model);

// Random model for tests and the verify command. Weight scale chosen so that
// activations stay O(1) through a few blocks.
ViTModel random_model(const ViTConfig& config, std::uint64_t seed, double weight_scale = 0.3);

enum class ActivationSite { block_input, post_ln1 };

const char* site_name(ActivationSite site) noexcept;
ActivationSite parse_site(const std::string& name);

struct ForwardTrace {
    Tensor tokens_pre;  // [n_tokens x d_model] entering the final block
    Tensor tokens_ln;   // [n_tokens x d_model] final block LN1 output
    Tensor attn;        // [n_heads x n_tokens] CLS-query attention per head, final block
    Tensor cls_latent;  // [d_model]
    Tensor logits;      // [n_classes], empty when headless

    const Tensor& at(ActivationSite site) const {
        return site == ActivationSite::block_input ? tokens_pre : tokens_ln;
    }
};

// Patch embedding + position embeddings + CLS (+ registers). image [H x W x 3].
Tensor embed(const ViTModel& model, const Tensor& image);

// Runs a standard pre-LN block on all tokens.
Tensor run_block(const ViTModel& model, const BlockWeights& block, const Tensor& x);

ForwardTrace forward(const ViTModel& model, const Tensor& image);

struct TailOutput {
    Tensor cls_latent;
    Tensor logits;
};

// Recomputes the path from `site` to the output. For post_ln1 the final block's
// first residual adds trace.tokens_pre, held fixed. Feeding trace.at(site) back
// reproduces trace.logits bitwise.
TailOutput tail_forward(const ViTModel& model, const ForwardTrace& trace, ActivationSite site,
                        const Tensor& activations);

enum class Metric { dot, cosine, l2 };

const char* metric_name(Metric m) noexcept;
Metric parse_metric(const std::string& name);

// dot: l . lc; cosine: dot / (|l| |lc|); l2: -|l - lc|. Higher is more similar.
double similarity(const Tensor& l, const Tensor& lc, Metric metric);

// Gradient of similarity() with respect to l. l2 at l == lc returns zeros.
Tensor similarity_gradient(const Tensor& l, const Tensor& lc, Metric metric);

}  // namespace cdam
