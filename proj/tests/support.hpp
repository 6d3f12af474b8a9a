#pragma once

// Shared test helpers: an independent naive ViT forward pass used as the
// reference oracle, and builders for hand-constructed models.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "cdam/kernels.hpp"
#include "cdam/rng.hpp"
#include "cdam/vit.hpp"
#include "cdam/vtw.hpp"

namespace testing {

using Mat = std::vector<std::vector<double>>;

inline cdam::ViTConfig tiny(std::size_t n_classes = 5) {
    cdam::ViTConfig c;
    c.image_size = 16;
    c.patch_size = 4;
    c.d_model = 16;
    c.n_heads = 2;
    c.n_blocks = 3;
    c.d_mlp = 32;
    c.n_classes = n_classes;
    return c;
}

inline cdam::Tensor random_image(const cdam::ViTConfig& c, std::uint64_t seed, double scale = 1.0) {
    cdam::SeededRng rng(seed);
    return cdam::normal_sample(rng, {c.image_size, c.image_size, 3}, scale);
}

inline cdam::Tensor random_vector(std::size_t n, std::uint64_t seed) {
    cdam::SeededRng rng(seed);
    return cdam::normal_sample(rng, {n}, 1.0);
}

// Every tensor zero except layer-norm gammas (one).
inline cdam::ViTModel blank_model(const cdam::ViTConfig& c) {
    std::map<std::string, cdam::Tensor> tensors;
    for (const auto& [name, shape] : cdam::required_tensor_shapes(c, c.n_classes > 0)) {
        const bool gamma = name.size() >= 6 && name.compare(name.size() - 6, 6, ".gamma") == 0;
        tensors.emplace(name, cdam::Tensor(shape, gamma ? 1.0 : 0.0));
    }
    return cdam::model_from_tensors(c, cdam::Preprocess{}, tensors);
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("cdam_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// ---------------------------------------------------------------- reference forward

inline Mat to_mat(const cdam::Tensor& t) {
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(r, c);
    return m;
}

inline std::vector<double> vec(const cdam::Tensor& t) { return {t.values().begin(), t.values().end()}; }

inline Mat affine(const Mat& x, const cdam::Linear& l) {
    const auto w = to_mat(l.weight);
    Mat y(x.size(), std::vector<double>(w[0].size()));
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < w[0].size(); ++j) {
            double s = l.bias[j];
            for (std::size_t k = 0; k < w.size(); ++k) s += x[i][k] * w[k][j];
            y[i][j] = s;
        }
    return y;
}

inline std::vector<double> ref_ln(const std::vector<double>& x, const cdam::LayerNormParams& p, double eps) {
    const double n = static_cast<double>(x.size());
    double mean = 0.0, var = 0.0;
    for (double v : x) mean += v / n;
    for (double v : x) var += (v - mean) * (v - mean) / n;
    std::vector<double> y(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) y[j] = p.gamma[j] * (x[j] - mean) / std::sqrt(var + eps) + p.beta[j];
    return y;
}

inline double ref_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline Mat ref_embed(const cdam::ViTModel& m, const cdam::Tensor& image) {
    const auto& c = m.config;
    const std::size_t g = c.grid_size(), p = c.patch_size, d = c.d_model;
    Mat tokens;
    std::vector<double> cls(d);
    for (std::size_t j = 0; j < d; ++j) cls[j] = m.cls_token[j] + m.pos_embed(0, j);
    tokens.push_back(cls);
    for (std::size_t r = 0; r < c.n_registers; ++r) {
        std::vector<double> reg(d);
        for (std::size_t j = 0; j < d; ++j) reg[j] = m.register_tokens(r, j);
        tokens.push_back(reg);
    }
    for (std::size_t py = 0; py < g; ++py)
        for (std::size_t px = 0; px < g; ++px) {
            std::vector<double> t(d);
            for (std::size_t j = 0; j < d; ++j) {
                double s = m.patch_embed.bias[j] + m.pos_embed(1 + py * g + px, j);
                std::size_t k = 0;
                for (std::size_t y = 0; y < p; ++y)
                    for (std::size_t x = 0; x < p; ++x)
                        for (std::size_t ch = 0; ch < 3; ++ch, ++k)
                            s += image.at3(py * p + y, px * p + x, ch) * m.patch_embed.weight(k, j);
                t[j] = s;
            }
            tokens.push_back(t);
        }
    return tokens;
}

struct RefAttention {
    Mat out;    // [n x d] concatenated head outputs before Wo
    Mat probs;  // [heads x n] CLS-query attention
};

inline RefAttention ref_attention(const Mat& x, const cdam::BlockWeights& b, std::size_t heads) {
    const Mat q = affine(x, b.wq), k = affine(x, b.wk), v = affine(x, b.wv);
    const std::size_t n = x.size(), d = q[0].size(), dh = d / heads;
    RefAttention r{Mat(n, std::vector<double>(d, 0.0)), Mat(heads, std::vector<double>(n))};
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> e(n);
            double z = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t t = 0; t < dh; ++t) s += q[i][h * dh + t] * k[j][h * dh + t];
                e[j] = std::exp(s / std::sqrt(static_cast<double>(dh)));
                z += e[j];
            }
            for (std::size_t j = 0; j < n; ++j) {
                const double a = e[j] / z;
                if (i == 0) r.probs[h][j] = a;
                for (std::size_t t = 0; t < dh; ++t) r.out[i][h * dh + t] += a * v[j][h * dh + t];
            }
        }
    return r;
}

inline Mat ref_block(const cdam::ViTConfig& c, const cdam::BlockWeights& b, const Mat& x) {
    Mat ln(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) ln[i] = ref_ln(x[i], b.ln1, c.ln_eps);
    const Mat a = affine(ref_attention(ln, b, c.n_heads).out, b.wo);
    Mat y = x;
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < y[i].size(); ++j) y[i][j] += a[i][j];
    Mat u(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) u[i] = ref_ln(y[i], b.ln2, c.ln_eps);
    Mat h = affine(u, b.fc1);
    for (auto& row : h)
        for (double& v : row) v = ref_gelu(v);
    const Mat o = affine(h, b.fc2);
    for (std::size_t i = 0; i < y.size(); ++i)
        for (std::size_t j = 0; j < y[i].size(); ++j) y[i][j] += o[i][j];
    return y;
}

struct RefOutput {
    Mat tokens_pre;
    Mat attn;
    std::vector<double> latent;
    std::vector<double> logits;
};

// Standard-mode reference: every block is a full pre-LN block.
inline RefOutput ref_forward(const cdam::ViTModel& m, const cdam::Tensor& image) {
    const auto& c = m.config;
    Mat x = ref_embed(m, image);
    for (std::size_t l = 0; l + 1 < c.n_blocks; ++l) x = ref_block(c, m.blocks[l], x);
    RefOutput out;
    out.tokens_pre = x;
    const auto& b = m.final_block();
    Mat ln(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) ln[i] = ref_ln(x[i], b.ln1, c.ln_eps);
    out.attn = ref_attention(ln, b, c.n_heads).probs;
    const Mat y = ref_block(c, b, x);
    out.latent = ref_ln(y[0], m.final_ln, c.ln_eps);
    if (m.has_head()) out.logits = affine(Mat{out.latent}, *m.head)[0];
    return out;
}

// ---------------------------------------------------------------- constructed models

// Two-class detached-attention model on a 16x16 image with 4x4 patches.
// Token features: dim 0 = patch mean intensity, dim 1 = "left half" marker,
// dim 2 = "right half" marker, dim 3 = CLS marker. Head 1 attends the left
// half, head 2 the right half (keys come from the position markers only), and
// both carry the intensity as value. Class 0 reads head 1, class 1 reads head 2.
inline cdam::ViTModel two_group_model() {
    cdam::ViTConfig c;
    c.image_size = 16;
    c.patch_size = 4;
    c.d_model = 8;
    c.n_heads = 2;
    c.n_blocks = 1;
    c.d_mlp = 4;
    c.n_classes = 2;
    c.tail_mode = cdam::TailMode::detached_identity;
    cdam::ViTModel m = blank_model(c);
    const std::size_t g = c.grid_size();
    for (std::size_t k = 0; k < c.patch_dim(); ++k) m.patch_embed.weight(k, 0) = 1.0 / static_cast<double>(c.patch_dim());
    for (std::size_t py = 0; py < g; ++py)
        for (std::size_t px = 0; px < g; ++px) m.pos_embed(1 + py * g + px, px < g / 2 ? 1 : 2) = 1.0;
    m.cls_token[3] = 1.0;
    auto& b = m.blocks[0];
    b.wq.weight(3, 0) = 20.0;
    b.wq.weight(3, 4) = 20.0;
    b.wk.weight(1, 0) = 1.0;
    b.wk.weight(2, 4) = 1.0;
    b.wv.weight(0, 0) = 1.0;
    b.wv.weight(0, 4) = 1.0;
    for (std::size_t j = 0; j < c.d_model; ++j) b.wo.weight(j, j) = 1.0;
    m.head->weight(0, 0) = 1.0;
    m.head->weight(4, 1) = 1.0;
    return m;
}

// Left half (columns < 8) at 1.0, right half at 0.5, all channels.
inline cdam::Tensor two_group_image() {
    cdam::Tensor img({16, 16, 3});
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x)
            for (std::size_t ch = 0; ch < 3; ++ch) img.at3(y, x, ch) = x < 8 ? 1.0 : 0.5;
    return img;
}

// Encoded weights with one NaN in block `block`'s fc2 bias. The encoder refuses
// non-finite values, so a sentinel is written and its bytes swapped afterwards.
inline std::vector<std::uint8_t> weights_with_nan(cdam::ViTModel m, std::size_t block) {
    constexpr float sentinel = 1234.5f;
    m.blocks.at(block).fc2.bias[0] = sentinel;
    auto bytes = cdam::encode_weights(m);
    const auto s = std::bit_cast<std::array<std::uint8_t, 4>>(sentinel);
    const auto nan = std::bit_cast<std::array<std::uint8_t, 4>>(std::numeric_limits<float>::quiet_NaN());
    const auto it = std::search(bytes.begin(), bytes.end(), s.begin(), s.end());
    std::copy(nan.begin(), nan.end(), it);
    return bytes;
}

}  // namespace testing
