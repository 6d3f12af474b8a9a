#include "tail.hpp"

#include <cmath>

#include "cdam/error.hpp"
#include "cdam/kernels.hpp"

namespace cdam::detail {

namespace {

void round_vec(std::vector<double>& v) {
    if (precision() == Precision::F64) return;
    for (double& e : v) e = round_to_precision(e);
}

// out[j] = bias[j] + sum_i in[i] * w(i, j)
std::vector<double> affine_row(std::span<const double> in, const Linear& l) {
    const std::size_t n_out = l.weight.cols();
    std::vector<double> out(n_out, 0.0);
    for (std::size_t i = 0; i < in.size(); ++i) {
        const double x = in[i];
        const auto wrow = l.weight.row(i);
        for (std::size_t j = 0; j < n_out; ++j) out[j] += x * wrow[j];
    }
    for (std::size_t j = 0; j < n_out; ++j) out[j] += l.bias[j];
    round_vec(out);
    return out;
}

void check(std::span<const double> v, const char* what) {
    if (!all_finite(v)) fail(Errc::numeric, std::string("non-finite value in ") + what);
}

}  // namespace

void ln_row(std::span<const double> in, const Tensor& gamma, const Tensor& beta, double eps,
            std::span<double> out, LnCache* cache) {
    const std::size_t d = in.size();
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    if (cache) {
        cache->xhat.resize(d);
        cache->inv_std = inv;
    }
    for (std::size_t j = 0; j < d; ++j) {
        const double xh = (in[j] - mean) * inv;
        if (cache) cache->xhat[j] = xh;
        out[j] = round_to_precision(gamma[j] * xh + beta[j]);
    }
}

std::vector<double> ln_row_backward(const LnCache& cache, const Tensor& gamma, std::span<const double> grad_out) {
    const std::size_t d = cache.xhat.size();
    std::vector<double> gx(d);
    double mean_g = 0.0, mean_gx = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double g = grad_out[j] * gamma[j];
        gx[j] = g;
        mean_g += g;
        mean_gx += g * cache.xhat[j];
    }
    mean_g /= static_cast<double>(d);
    mean_gx /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) gx[j] = cache.inv_std * (gx[j] - mean_g - cache.xhat[j] * mean_gx);
    return gx;
}

TailState run_tail(const ViTModel& model, ActivationSite site, const Tensor& activations,
                   std::span<const double> cls_residual) {
    const auto& c = model.config;
    const auto& b = model.final_block();
    const std::size_t n = c.n_tokens(), d = c.d_model, dh = c.d_head();
    require_shape(activations, {n, d}, "final block activations");
    require_finite(activations, "final block activations");

    TailState s;
    s.site = site;
    const auto residual = site == ActivationSite::block_input ? activations.row(0) : cls_residual;

    if (site == ActivationSite::block_input && c.tail_mode == TailMode::standard) {
        s.tokens = Tensor({n, d});
        s.ln1.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            ln_row(activations.row(i), b.ln1.gamma, b.ln1.beta, c.ln_eps, s.tokens.row(i), &s.ln1[i]);
        }
    } else {
        s.tokens = activations;
    }

    if (c.tail_mode == TailMode::linear_pool) {
        s.latent.assign(d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = s.tokens.row(i);
            for (std::size_t j = 0; j < d; ++j) s.latent[j] += r[j];
        }
        for (double& v : s.latent) v /= static_cast<double>(n);
        round_vec(s.latent);
        // Attention is not part of the pooled tail; report the uniform row.
        s.probs = Tensor({c.n_heads, n}, 1.0 / static_cast<double>(n));
    } else {
        s.q_cls = affine_row(s.tokens.row(0), b.wq);
        s.keys = linear(s.tokens, b.wk.weight, b.wk.bias);
        s.values = linear(s.tokens, b.wv.weight, b.wv.bias);
        s.probs = Tensor({c.n_heads, n});
        s.mixed.assign(d, 0.0);
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<double> scores(n);
        for (std::size_t h = 0; h < c.n_heads; ++h) {
            const std::size_t off = h * dh;
            for (std::size_t m = 0; m < n; ++m) {
                double acc = 0.0;
                for (std::size_t e = 0; e < dh; ++e) acc += s.q_cls[off + e] * s.keys(m, off + e);
                scores[m] = acc * scale;
            }
            softmax_inplace(scores);
            for (std::size_t m = 0; m < n; ++m) {
                const double pm = round_to_precision(scores[m]);
                s.probs(h, m) = pm;
                for (std::size_t e = 0; e < dh; ++e) s.mixed[off + e] += pm * s.values(m, off + e);
            }
        }
        round_vec(s.mixed);
        const auto attn_out = affine_row(s.mixed, b.wo);
        s.residual1.resize(d);
        for (std::size_t j = 0; j < d; ++j) s.residual1[j] = round_to_precision(residual[j] + attn_out[j]);

        if (c.tail_mode == TailMode::detached_identity) {
            s.latent = s.residual1;
        } else {
            std::vector<double> u(d);
            ln_row(s.residual1, b.ln2.gamma, b.ln2.beta, c.ln_eps, u, &s.ln2);
            s.mlp_pre = affine_row(u, b.fc1);
            s.mlp_hidden.resize(s.mlp_pre.size());
            for (std::size_t j = 0; j < s.mlp_pre.size(); ++j) s.mlp_hidden[j] = round_to_precision(gelu(s.mlp_pre[j]));
            const auto mlp_out = affine_row(s.mlp_hidden, b.fc2);
            s.block_out.resize(d);
            for (std::size_t j = 0; j < d; ++j) s.block_out[j] = round_to_precision(s.residual1[j] + mlp_out[j]);
            s.latent.resize(d);
            ln_row(s.block_out, model.final_ln.gamma, model.final_ln.beta, c.ln_eps, s.latent, &s.final_ln);
        }
    }
    check(s.latent, "final block output");

    if (model.has_head()) {
        s.logits = affine_row(s.latent, *model.head);
        check(s.logits, "logits");
    }
    return s;
}

}  // namespace cdam::detail
