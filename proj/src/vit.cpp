#include "cdam/vit.hpp"

#include <cmath>
#include <string>

#include "cdam/error.hpp"
#include "cdam/kernels.hpp"
#include "cdam/rng.hpp"
#include "tail.hpp"

namespace cdam {

const char* tail_mode_name(TailMode mode) noexcept {
    switch (mode) {
        case TailMode::standard: return "standard";
        case TailMode::linear_pool: return "linear_pool";
        case TailMode::detached_identity: return "detached_identity";
    }
    return "standard";
}

TailMode parse_tail_mode(const std::string& name) {
    if (name == "standard") return TailMode::standard;
    if (name == "linear_pool") return TailMode::linear_pool;
    if (name == "detached_identity") return TailMode::detached_identity;
    fail(Errc::invalid_config, "unknown tail_mode '" + name + "'");
}

const char* site_name(ActivationSite site) noexcept {
    return site == ActivationSite::block_input ? "block-input" : "post-ln1";
}

ActivationSite parse_site(const std::string& name) {
    if (name == "block-input" || name == "block_input") return ActivationSite::block_input;
    if (name == "post-ln1" || name == "post_ln1") return ActivationSite::post_ln1;
    fail(Errc::usage, "unknown activation site '" + name + "' (expected block-input or post-ln1)");
}

const char* metric_name(Metric m) noexcept {
    switch (m) {
        case Metric::dot: return "dot";
        case Metric::cosine: return "cosine";
        case Metric::l2: return "l2";
    }
    return "dot";
}

Metric parse_metric(const std::string& name) {
    if (name == "dot") return Metric::dot;
    if (name == "cosine") return Metric::cosine;
    if (name == "l2") return Metric::l2;
    fail(Errc::usage, "unknown similarity metric '" + name + "' (expected dot, cosine or l2)");
}

void ViTConfig::validate() const {
    auto bad = [](const std::string& msg) { fail(Errc::invalid_config, "invalid config: " + msg); };
    if (patch_size == 0 || image_size == 0) bad("image_size and patch_size must be positive");
    if (image_size % patch_size != 0) bad("image_size must be divisible by patch_size");
    if (n_heads == 0 || d_model == 0) bad("d_model and n_heads must be positive");
    if (d_model % n_heads != 0) bad("d_model must be divisible by n_heads");
    if (n_blocks == 0) bad("n_blocks must be at least 1");
    if (d_mlp == 0) bad("d_mlp must be positive");
    if (!(ln_eps > 0.0)) bad("ln_eps must be positive");
}

// ---------------------------------------------------------------------------
// Naming

namespace {

std::string block_prefix(std::size_t i) { return "block" + std::to_string(i) + "."; }

void put_linear(std::map<std::string, Tensor>& out, const std::string& name, const Linear& l) {
    out[name + ".weight"] = l.weight;
    out[name + ".bias"] = l.bias;
}

void put_ln(std::map<std::string, Tensor>& out, const std::string& name, const LayerNormParams& ln) {
    out[name + ".gamma"] = ln.gamma;
    out[name + ".beta"] = ln.beta;
}

}  // namespace

std::map<std::string, Tensor> named_tensors(const ViTModel& model) {
    std::map<std::string, Tensor> out;
    put_linear(out, "patch_embed", model.patch_embed);
    out["pos_embed"] = model.pos_embed;
    out["cls_token"] = model.cls_token;
    if (model.config.n_registers > 0) out["register_tokens"] = model.register_tokens;
    for (std::size_t i = 0; i < model.blocks.size(); ++i) {
        const auto& b = model.blocks[i];
        const std::string p = block_prefix(i);
        put_ln(out, p + "ln1", b.ln1);
        put_linear(out, p + "attn.wq", b.wq);
        put_linear(out, p + "attn.wk", b.wk);
        put_linear(out, p + "attn.wv", b.wv);
        put_linear(out, p + "attn.wo", b.wo);
        put_ln(out, p + "ln2", b.ln2);
        put_linear(out, p + "mlp.fc1", b.fc1);
        put_linear(out, p + "mlp.fc2", b.fc2);
    }
    put_ln(out, "final_ln", model.final_ln);
    if (model.head) put_linear(out, "head", *model.head);
    return out;
}

std::map<std::string, Shape> required_tensor_shapes(const ViTConfig& c, bool with_head) {
    std::map<std::string, Shape> s;
    const std::size_t d = c.d_model;
    s["patch_embed.weight"] = {c.patch_dim(), d};
    s["patch_embed.bias"] = {d};
    s["pos_embed"] = {1 + c.n_patches(), d};
    s["cls_token"] = {d};
    if (c.n_registers > 0) s["register_tokens"] = {c.n_registers, d};
    for (std::size_t i = 0; i < c.n_blocks; ++i) {
        const std::string p = block_prefix(i);
        s[p + "ln1.gamma"] = {d};
        s[p + "ln1.beta"] = {d};
        for (const char* w : {"wq", "wk", "wv", "wo"}) {
            s[p + "attn." + w + ".weight"] = {d, d};
            s[p + "attn." + w + ".bias"] = {d};
        }
        s[p + "ln2.gamma"] = {d};
        s[p + "ln2.beta"] = {d};
        s[p + "mlp.fc1.weight"] = {d, c.d_mlp};
        s[p + "mlp.fc1.bias"] = {c.d_mlp};
        s[p + "mlp.fc2.weight"] = {c.d_mlp, d};
        s[p + "mlp.fc2.bias"] = {d};
    }
    s["final_ln.gamma"] = {d};
    s["final_ln.beta"] = {d};
    if (with_head) {
        s["head.weight"] = {d, c.n_classes};
        s["head.bias"] = {c.n_classes};
    }
    return s;
}

ViTModel model_from_tensors(const ViTConfig& config, const Preprocess& preprocess,
                            const std::map<std::string, Tensor>& tensors) {
    config.validate();
    const bool with_head = config.n_classes > 0;
    const auto shapes = required_tensor_shapes(config, with_head);
    for (const auto& [name, shape] : shapes) {
        auto it = tensors.find(name);
        if (it == tensors.end()) fail(Errc::missing_tensor, "missing tensor '" + name + "'");
        require_shape(it->second, shape, name);
    }
    auto get = [&](const std::string& n) { return tensors.at(n); };
    auto lin = [&](const std::string& n) { return Linear{get(n + ".weight"), get(n + ".bias")}; };
    auto ln = [&](const std::string& n) { return LayerNormParams{get(n + ".gamma"), get(n + ".beta")}; };

    ViTModel m;
    m.config = config;
    m.preprocess = preprocess;
    m.patch_embed = lin("patch_embed");
    m.pos_embed = get("pos_embed");
    m.cls_token = get("cls_token");
    if (config.n_registers > 0) m.register_tokens = get("register_tokens");
    for (std::size_t i = 0; i < config.n_blocks; ++i) {
        const std::string p = block_prefix(i);
        BlockWeights b;
        b.ln1 = ln(p + "ln1");
        b.wq = lin(p + "attn.wq");
        b.wk = lin(p + "attn.wk");
        b.wv = lin(p + "attn.wv");
        b.wo = lin(p + "attn.wo");
        b.ln2 = ln(p + "ln2");
        b.fc1 = lin(p + "mlp.fc1");
        b.fc2 = lin(p + "mlp.fc2");
        m.blocks.push_back(std::move(b));
    }
    m.final_ln = ln("final_ln");
    if (with_head) m.head = lin("head");
    validate_model(m);
    return m;
}

void validate_model(const ViTModel& model) {
    model.config.validate();
    if (model.blocks.size() != model.config.n_blocks) {
        fail(Errc::shape_mismatch, "model has " + std::to_string(model.blocks.size()) + " blocks, config says " +
                                       std::to_string(model.config.n_blocks));
    }
    const auto shapes = required_tensor_shapes(model.config, model.has_head());
    const auto named = named_tensors(model);
    for (const auto& [name, shape] : shapes) {
        auto it = named.find(name);
        if (it == named.end()) fail(Errc::missing_tensor, "missing tensor '" + name + "'");
        require_shape(it->second, shape, name);
        require_finite(it->second, name);
    }
    for (int ch = 0; ch < 3; ++ch) {
        if (!(model.preprocess.std[ch] > 0.0)) fail(Errc::invalid_config, "preprocess std must be positive");
    }
}

ViTModel random_model(const ViTConfig& config, std::uint64_t seed, double weight_scale) {
    config.validate();
    SeededRng rng(seed);
    std::map<std::string, Tensor> tensors;
    for (const auto& [name, shape] : required_tensor_shapes(config, config.n_classes > 0)) {
        Tensor t(shape);
        const bool is_gamma = name.ends_with(".gamma");
        const bool is_weight = name.ends_with(".weight");
        const double fan_in = static_cast<double>(shape.front());
        for (double& v : t.values()) {
            const double z = rng.normal();
            if (is_gamma) {
                v = 1.0 + 0.1 * z;
            } else if (is_weight) {
                v = z / std::sqrt(fan_in);
            } else if (name == "pos_embed" || name == "cls_token" || name == "register_tokens") {
                v = weight_scale * z;
            } else {
                v = 0.1 * z;
            }
            v = static_cast<double>(static_cast<float>(v));  // weights are stored as f32
        }
        tensors.emplace(name, std::move(t));
    }
    return model_from_tensors(config, Preprocess{}, tensors);
}

// ---------------------------------------------------------------------------
// Forward

Tensor embed(const ViTModel& model, const Tensor& image) {
    const auto& c = model.config;
    require_shape(image, {c.image_size, c.image_size, 3}, "input image");
    const std::size_t g = c.grid_size(), p = c.patch_size;
    Tensor patches({c.n_patches(), c.patch_dim()});
    for (std::size_t gy = 0; gy < g; ++gy) {
        for (std::size_t gx = 0; gx < g; ++gx) {
            const std::size_t idx = gy * g + gx;
            std::size_t k = 0;
            for (std::size_t r = 0; r < p; ++r) {
                for (std::size_t col = 0; col < p; ++col) {
                    for (std::size_t ch = 0; ch < 3; ++ch) patches(idx, k++) = image.at3(gy * p + r, gx * p + col, ch);
                }
            }
        }
    }
    const Tensor emb = linear(patches, model.patch_embed.weight, model.patch_embed.bias);

    const std::size_t d = c.d_model;
    Tensor tokens({c.n_tokens(), d});
    for (std::size_t j = 0; j < d; ++j) tokens(0, j) = round_to_precision(model.cls_token[j] + model.pos_embed(0, j));
    for (std::size_t r = 0; r < c.n_registers; ++r) {
        for (std::size_t j = 0; j < d; ++j) tokens(1 + r, j) = model.register_tokens(r, j);
    }
    const std::size_t first = c.first_patch_token();
    for (std::size_t i = 0; i < c.n_patches(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            tokens(first + i, j) = round_to_precision(emb(i, j) + model.pos_embed(1 + i, j));
        }
    }
    require_finite(tokens, "patch embedding");
    return tokens;
}

Tensor run_block(const ViTModel& model, const BlockWeights& b, const Tensor& x) {
    const auto& c = model.config;
    const std::size_t n = x.rows(), d = c.d_model, dh = c.d_head();
    const Tensor t = layer_norm(x, b.ln1.gamma, b.ln1.beta, c.ln_eps);
    const Tensor q = linear(t, b.wq.weight, b.wq.bias);
    const Tensor k = linear(t, b.wk.weight, b.wk.bias);
    const Tensor v = linear(t, b.wv.weight, b.wv.bias);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor mixed({n, d});
    std::vector<double> scores(n);
    for (std::size_t h = 0; h < c.n_heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t m = 0; m < n; ++m) {
                double s = 0.0;
                for (std::size_t e = 0; e < dh; ++e) s += q(i, off + e) * k(m, off + e);
                scores[m] = s * scale;
            }
            softmax_inplace(scores);
            for (std::size_t m = 0; m < n; ++m) {
                const double pm = round_to_precision(scores[m]);
                for (std::size_t e = 0; e < dh; ++e) mixed(i, off + e) += pm * v(m, off + e);
            }
        }
    }
    for (double& e : mixed.values()) e = round_to_precision(e);
    const Tensor o = linear(mixed, b.wo.weight, b.wo.bias);
    Tensor r1 = x;
    for (std::size_t i = 0; i < r1.size(); ++i) r1[i] = round_to_precision(r1[i] + o[i]);
    const Tensor u = layer_norm(r1, b.ln2.gamma, b.ln2.beta, c.ln_eps);
    const Tensor hidden = gelu(linear(u, b.fc1.weight, b.fc1.bias));
    const Tensor mlp = linear(hidden, b.fc2.weight, b.fc2.bias);
    Tensor y = r1;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = round_to_precision(y[i] + mlp[i]);
    require_finite(y, "block output");
    return y;
}

namespace {

ForwardTrace trace_from_state(const ViTModel& model, Tensor tokens_pre, detail::TailState state) {
    ForwardTrace tr;
    tr.tokens_pre = std::move(tokens_pre);
    tr.tokens_ln = std::move(state.tokens);
    tr.attn = std::move(state.probs);
    tr.cls_latent = Tensor::vector(std::move(state.latent));
    if (model.has_head()) tr.logits = Tensor::vector(std::move(state.logits));
    return tr;
}

}  // namespace

ForwardTrace forward(const ViTModel& model, const Tensor& image) {
    Tensor x = embed(model, image);
    const std::size_t last = model.blocks.size() - 1;
    for (std::size_t i = 0; i < last; ++i) {
        try {
            x = run_block(model, model.blocks[i], x);
        } catch (const Error& e) {
            if (e.code() != Errc::numeric) throw;
            fail(Errc::numeric, "block " + std::to_string(i) + ": " + e.what());
        }
    }
    try {
        auto state = detail::run_tail(model, ActivationSite::block_input, x, x.row(0));
        return trace_from_state(model, std::move(x), std::move(state));
    } catch (const Error& e) {
        if (e.code() != Errc::numeric) throw;
        fail(Errc::numeric, "block " + std::to_string(last) + ": " + e.what());
    }
}

TailOutput tail_forward(const ViTModel& model, const ForwardTrace& trace, ActivationSite site,
                        const Tensor& activations) {
    require_shape(activations, trace.at(site).shape(), "tail_forward activations");
    auto state = detail::run_tail(model, site, activations, trace.tokens_pre.row(0));
    TailOutput out;
    out.cls_latent = Tensor::vector(std::move(state.latent));
    if (model.has_head()) out.logits = Tensor::vector(std::move(state.logits));
    return out;
}

// ---------------------------------------------------------------------------
// Similarity

namespace {

void require_same_dim(const Tensor& l, const Tensor& lc) {
    if (l.size() != lc.size()) {
        fail(Errc::shape_mismatch, "similarity: latent has " + std::to_string(l.size()) +
                                       " components, concept vector " + std::to_string(lc.size()));
    }
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

double similarity(const Tensor& l, const Tensor& lc, Metric metric) {
    require_same_dim(l, lc);
    switch (metric) {
        case Metric::dot: return dot(l.values(), lc.values());
        case Metric::cosine: {
            const double nl = std::sqrt(dot(l.values(), l.values()));
            const double nc = std::sqrt(dot(lc.values(), lc.values()));
            if (nl == 0.0 || nc == 0.0) fail(Errc::invalid_argument, "cosine similarity with a zero vector");
            return dot(l.values(), lc.values()) / (nl * nc);
        }
        case Metric::l2: {
            double s = 0.0;
            for (std::size_t i = 0; i < l.size(); ++i) s += (l[i] - lc[i]) * (l[i] - lc[i]);
            return -std::sqrt(s);
        }
    }
    return 0.0;
}

Tensor similarity_gradient(const Tensor& l, const Tensor& lc, Metric metric) {
    require_same_dim(l, lc);
    Tensor g({l.size()});
    switch (metric) {
        case Metric::dot:
            g = lc;
            break;
        case Metric::cosine: {
            const double nl = std::sqrt(dot(l.values(), l.values()));
            const double nc = std::sqrt(dot(lc.values(), lc.values()));
            if (nl == 0.0 || nc == 0.0) fail(Errc::invalid_argument, "cosine similarity with a zero vector");
            const double cosv = dot(l.values(), lc.values()) / (nl * nc);
            for (std::size_t i = 0; i < l.size(); ++i) g[i] = lc[i] / (nl * nc) - cosv * l[i] / (nl * nl);
            break;
        }
        case Metric::l2: {
            double s = 0.0;
            for (std::size_t i = 0; i < l.size(); ++i) s += (l[i] - lc[i]) * (l[i] - lc[i]);
            const double norm = std::sqrt(s);
            if (norm == 0.0) break;
            for (std::size_t i = 0; i < l.size(); ++i) g[i] = -(l[i] - lc[i]) / norm;
            break;
        }
    }
    return g.reshaped({l.size()});
}

}  // namespace cdam
