#include "cdam/head_grad.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cdam/error.hpp"
#include "cdam/kernels.hpp"
#include "cdam/rng.hpp"
#include "tail.hpp"

namespace cdam {

void validate_target(const ViTModel& model, const GradTarget& target) {
    if (const auto* cls = std::get_if<ClassLogit>(&target)) {
        if (!model.has_head()) fail(Errc::no_head, "class target requested but the model has no classifier head");
        if (cls->index >= model.config.n_classes) {
            fail(Errc::invalid_argument, "class index " + std::to_string(cls->index) + " out of range (n_classes=" +
                                             std::to_string(model.config.n_classes) + ")");
        }
        return;
    }
    const auto& sim = std::get<ConceptSim>(target);
    if (sim.concept_vector.size() != model.config.d_model) {
        fail(Errc::shape_mismatch, "concept vector has " + std::to_string(sim.concept_vector.size()) +
                                       " components, d_model is " + std::to_string(model.config.d_model));
    }
    require_finite(sim.concept_vector, "concept vector");
    if (sim.metric == Metric::cosine && max_abs(sim.concept_vector.values()) == 0.0) {
        fail(Errc::invalid_argument, "cosine similarity with a zero concept vector");
    }
}

double target_value(const ViTModel& model, const TailOutput& out, const GradTarget& target) {
    if (const auto* cls = std::get_if<ClassLogit>(&target)) {
        validate_target(model, target);
        return out.logits[cls->index];
    }
    const auto& sim = std::get<ConceptSim>(target);
    return similarity(out.cls_latent, sim.concept_vector, sim.metric);
}

namespace {

// d target / d latent.
std::vector<double> latent_gradient(const ViTModel& model, const detail::TailState& s, const GradTarget& target,
                                    double& value) {
    const std::size_t d = model.config.d_model;
    std::vector<double> g(d);
    if (const auto* cls = std::get_if<ClassLogit>(&target)) {
        const auto& w = model.head->weight;
        for (std::size_t j = 0; j < d; ++j) g[j] = w(j, cls->index);
        value = s.logits[cls->index];
        return g;
    }
    const auto& sim = std::get<ConceptSim>(target);
    const Tensor latent = Tensor::vector(s.latent);
    value = similarity(latent, sim.concept_vector, sim.metric);
    const Tensor gl = similarity_gradient(latent, sim.concept_vector, sim.metric);
    std::copy(gl.values().begin(), gl.values().end(), g.begin());
    return g;
}

// out[i] = sum_j w(i, j) * g[j], i.e. the input gradient of x * W.
std::vector<double> back_through(const Tensor& w, std::span<const double> g) {
    std::vector<double> out(w.rows(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        const auto wrow = w.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < g.size(); ++j) acc += wrow[j] * g[j];
        out[i] = acc;
    }
    return out;
}

}  // namespace

SiteGradient site_gradient(const ViTModel& model, const ForwardTrace& trace, ActivationSite site,
                           const Tensor& activations, const GradTarget& target) {
    validate_target(model, target);
    const auto& c = model.config;
    const auto& b = model.final_block();
    const std::size_t n = c.n_tokens(), d = c.d_model, dh = c.d_head();
    require_shape(activations, trace.at(site).shape(), "site activations");

    // Reverse-mode arithmetic runs in double regardless of the precision mode.
    const auto s = [&] {
        PrecisionScope exact(Precision::F64);
        return detail::run_tail(model, site, activations, trace.tokens_pre.row(0));
    }();

    SiteGradient out;
    const auto g_latent = latent_gradient(model, s, target, out.value);
    out.grad = Tensor({n, d});

    if (c.tail_mode == TailMode::linear_pool) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) out.grad(i, j) = g_latent[j] / static_cast<double>(n);
        }
        require_finite(out.grad, "site gradient");
        return out;
    }

    // Back to the first residual (CLS row).
    std::vector<double> g_res1;
    if (c.tail_mode == TailMode::detached_identity) {
        g_res1 = g_latent;
    } else {
        const auto g_block = detail::ln_row_backward(s.final_ln, model.final_ln.gamma, g_latent);
        g_res1 = g_block;
        const auto g_hidden = back_through(b.fc2.weight, g_block);
        std::vector<double> g_pre(g_hidden.size());
        for (std::size_t j = 0; j < g_pre.size(); ++j) g_pre[j] = g_hidden[j] * gelu_derivative(s.mlp_pre[j]);
        const auto g_u = back_through(b.fc1.weight, g_pre);
        const auto g_ln2 = detail::ln_row_backward(s.ln2, b.ln2.gamma, g_u);
        for (std::size_t j = 0; j < d; ++j) g_res1[j] += g_ln2[j];
    }

    // Attention output projection, then the CLS attention row of every head.
    const auto g_mixed = back_through(b.wo.weight, g_res1);
    Tensor g_values({n, d});
    Tensor g_keys({n, d});
    std::vector<double> g_query(d, 0.0);
    const bool detached = c.tail_mode == TailMode::detached_identity;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> g_probs(n), g_scores;
    for (std::size_t h = 0; h < c.n_heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t m = 0; m < n; ++m) {
            const double p = s.probs(h, m);
            double gp = 0.0;
            for (std::size_t e = 0; e < dh; ++e) {
                g_values(m, off + e) += p * g_mixed[off + e];
                gp += g_mixed[off + e] * s.values(m, off + e);
            }
            g_probs[m] = gp;
        }
        if (detached) continue;
        g_scores = softmax_vjp(s.probs.row(h), g_probs);
        for (double& g : g_scores) g *= scale;
        for (std::size_t m = 0; m < n; ++m) {
            for (std::size_t e = 0; e < dh; ++e) {
                g_query[off + e] += g_scores[m] * s.keys(m, off + e);
                g_keys(m, off + e) += g_scores[m] * s.q_cls[off + e];
            }
        }
    }

    // Projections back onto the tokens that entered the attention.
    Tensor g_tokens({n, d});
    for (std::size_t m = 0; m < n; ++m) {
        const auto gv = back_through(b.wv.weight, g_values.row(m));
        std::vector<double> gk(d, 0.0);
        if (!detached) gk = back_through(b.wk.weight, g_keys.row(m));
        for (std::size_t j = 0; j < d; ++j) g_tokens(m, j) = gv[j] + gk[j];
    }
    if (!detached) {
        const auto gq = back_through(b.wq.weight, g_query);
        for (std::size_t j = 0; j < d; ++j) g_tokens(0, j) += gq[j];
    }

    if (site == ActivationSite::post_ln1) {
        out.grad = std::move(g_tokens);
    } else {
        if (c.tail_mode == TailMode::standard) {
            for (std::size_t m = 0; m < n; ++m) {
                const auto gx = detail::ln_row_backward(s.ln1[m], b.ln1.gamma, g_tokens.row(m));
                std::copy(gx.begin(), gx.end(), out.grad.row(m).begin());
            }
        } else {
            out.grad = std::move(g_tokens);
        }
        for (std::size_t j = 0; j < d; ++j) out.grad(0, j) += g_res1[j];
    }
    require_finite(out.grad, "site gradient");
    return out;
}

SiteGradient head_vjp(const ViTModel& model, const ForwardTrace& trace, ActivationSite site,
                      const GradTarget& target) {
    return site_gradient(model, trace, site, trace.at(site), target);
}

double fd_check(const ViTModel& model, const ForwardTrace& trace, ActivationSite site, const GradTarget& target,
                double eps, std::size_t sample_size) {
    if (!(eps > 0.0) || !std::isfinite(eps)) fail(Errc::invalid_argument, "fd_check: eps must be positive");
    if (precision() != Precision::F64) fail(Errc::invalid_argument, "fd_check requires 64-bit precision mode");
    if (model.config.tail_mode == TailMode::detached_identity)
        fail(Errc::invalid_argument, "fd_check: detached_identity gradients treat attention as constant");

    const Tensor& base = trace.at(site);
    const auto analytic = head_vjp(model, trace, site, target);

    std::vector<std::size_t> coords;
    if (sample_size == 0) fail(Errc::invalid_argument, "fd_check: sample size must be positive");
    if (model.config.d_model <= 32) {
        coords.resize(base.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
        SeededRng rng(0x5eed);
        for (std::size_t k = 0; k < sample_size; ++k) coords.push_back(rng.uniform_below(base.size()));
    }

    auto eval = [&](const Tensor& x) { return target_value(model, tail_forward(model, trace, site, x), target); };

    std::vector<double> numeric(coords.size());
    Tensor x = base;
    for (std::size_t k = 0; k < coords.size(); ++k) {
        const std::size_t i = coords[k];
        const double orig = x[i];
        x[i] = orig + eps;
        const double fp = eval(x);
        x[i] = orig - eps;
        const double fm = eval(x);
        x[i] = orig;
        numeric[k] = (fp - fm) / (2.0 * eps);
    }
    const double floor = std::max(1e-3 * max_abs(numeric), 1e-300);
    double worst = 0.0;
    for (std::size_t k = 0; k < coords.size(); ++k) {
        const double a = analytic.grad[coords[k]];
        const double num = numeric[k];
        const double denom = std::max({std::abs(a), std::abs(num), floor});
        worst = std::max(worst, std::abs(a - num) / denom);
    }
    return worst;
}

}  // namespace cdam
