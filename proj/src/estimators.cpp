#include "cdam/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "cdam/error.hpp"
#include "cdam/kernels.hpp"
#include "cdam/rng.hpp"

namespace cdam {

namespace {

// Runs fn(k) for k in [0, count) on up to `jobs` threads (strided assignment).
template <class Fn>
void parallel_for(std::size_t count, unsigned jobs, Fn&& fn) {
    jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
    if (jobs == 1) {
        for (std::size_t k = 0; k < count; ++k) fn(k);
        return;
    }
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(jobs);
    for (unsigned w = 0; w < jobs; ++w) {
        workers.emplace_back([&, w] {
            try {
                for (std::size_t k = w; k < count; k += jobs) fn(k);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

std::vector<double> row_dot(const Tensor& acts, const Tensor& grad) {
    std::vector<double> out(acts.rows(), 0.0);
    for (std::size_t i = 0; i < acts.rows(); ++i) {
        const auto a = acts.row(i);
        const auto g = grad.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * g[j];
        out[i] = s;
    }
    return out;
}

}  // namespace

ScoreMap score_map_from_tokens(const ViTConfig& config, Tensor token_scores) {
    require_shape(token_scores, {config.n_tokens()}, "token scores");
    require_finite(token_scores, "token scores");
    const std::size_t g = config.grid_size(), first = config.first_patch_token();
    ScoreMap map;
    map.grid = Tensor({g, g});
    for (std::size_t i = 0; i < config.n_patches(); ++i) map.grid[i] = token_scores[first + i];
    map.token_scores = std::move(token_scores);
    return map;
}

ScoreMap attention_map(const ViTModel& model, const ForwardTrace& trace) {
    const auto& c = model.config;
    require_shape(trace.attn, {c.n_heads, c.n_tokens()}, "trace attention");
    Tensor scores({c.n_tokens()});
    for (std::size_t m = 0; m < c.n_tokens(); ++m) {
        double s = 0.0;
        for (std::size_t h = 0; h < c.n_heads; ++h) s += trace.attn(h, m);
        scores[m] = s / static_cast<double>(c.n_heads);
    }
    return score_map_from_tokens(c, std::move(scores));
}

ScoreMap cdam(const ViTModel& model, const ForwardTrace& trace, const GradTarget& target, ActivationSite site) {
    const auto g = head_vjp(model, trace, site, target);
    return score_map_from_tokens(model.config, Tensor::vector(row_dot(trace.at(site), g.grad)));
}

ScoreMap cdam_class(const ViTModel& model, const ForwardTrace& trace, std::size_t class_index, ActivationSite site) {
    return cdam(model, trace, ClassLogit{class_index}, site);
}

ScoreMap cdam_concept(const ViTModel& model, const ForwardTrace& trace, const Tensor& concept_vector, Metric metric,
                      ActivationSite site) {
    return cdam(model, trace, ConceptSim{concept_vector, metric}, site);
}

ConceptVector concept_embedding(const ViTModel& model, std::span<const Tensor> images, unsigned jobs) {
    if (images.empty()) fail(Errc::invalid_argument, "concept embedding needs at least one image");
    std::vector<Tensor> latents(images.size());
    parallel_for(images.size(), jobs, [&](std::size_t k) { latents[k] = forward(model, images[k]).cls_latent; });
    ConceptVector cv;
    cv.n_examples = images.size();
    cv.latent = Tensor({model.config.d_model});
    for (const auto& l : latents) {
        for (std::size_t j = 0; j < l.size(); ++j) cv.latent[j] += l[j];
    }
    for (double& v : cv.latent.values()) v /= static_cast<double>(images.size());
    require_finite(cv.latent, "concept vector");
    return cv;
}

double default_smooth_sigma(const Tensor& activations) { return 0.1 * population_std(activations.values()); }

ScoreMap smooth_cdam(const ViTModel& model, const ForwardTrace& trace, const GradTarget& target,
                     const SmoothOptions& options, Tensor* token_variance) {
    if (options.n == 0) fail(Errc::invalid_argument, "smooth CDAM needs n >= 1");
    validate_target(model, target);
    const Tensor& base = trace.at(options.site);
    const double sigma = options.sigma < 0.0 ? default_smooth_sigma(base) : options.sigma;
    if (!std::isfinite(sigma)) fail(Errc::invalid_argument, "smooth CDAM sigma must be finite");

    const std::size_t n_tokens = base.rows();
    std::vector<std::vector<double>> draws(options.n);
    parallel_for(options.n, options.jobs, [&](std::size_t k) {
        SeededRng rng(derive_seed(options.seed, k));
        Tensor noisy = base;
        if (sigma > 0.0) {
            const Tensor noise = normal_sample(rng, base.shape(), sigma);
            for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] += noise[i];
        }
        const auto g = site_gradient(model, trace, options.site, noisy, target);
        draws[k] = row_dot(noisy, g.grad);
    });

    Tensor mean({n_tokens});
    for (const auto& d : draws) {
        for (std::size_t i = 0; i < n_tokens; ++i) mean[i] += d[i];
    }
    for (double& v : mean.values()) v /= static_cast<double>(options.n);

    if (token_variance != nullptr) {
        *token_variance = Tensor({n_tokens});
        if (options.n > 1) {
            for (const auto& d : draws) {
                for (std::size_t i = 0; i < n_tokens; ++i) (*token_variance)[i] += (d[i] - mean[i]) * (d[i] - mean[i]);
            }
            for (double& v : token_variance->values()) v /= static_cast<double>(options.n - 1);
        }
    }
    return score_map_from_tokens(model.config, std::move(mean));
}

ScoreMap integrated_cdam(const ViTModel& model, const ForwardTrace& trace, const GradTarget& target, std::size_t n,
                         ActivationSite site, unsigned jobs) {
    if (n == 0) fail(Errc::invalid_argument, "integrated CDAM needs n >= 1");
    validate_target(model, target);
    const Tensor& acts = trace.at(site);

    std::vector<Tensor> grads(n);
    parallel_for(n, jobs, [&](std::size_t k) {
        const double alpha = static_cast<double>(k + 1) / static_cast<double>(n);
        Tensor point = acts;
        if (k + 1 != n) {
            for (double& v : point.values()) v *= alpha;
        }
        grads[k] = site_gradient(model, trace, site, point, target).grad;
    });

    Tensor mean_grad(acts.shape());
    for (const auto& g : grads) {
        for (std::size_t i = 0; i < g.size(); ++i) mean_grad[i] += g[i];
    }
    for (double& v : mean_grad.values()) v /= static_cast<double>(n);
    return score_map_from_tokens(model.config, Tensor::vector(row_dot(acts, mean_grad)));
}

UpsampleMode parse_upsample_mode(const std::string& name) {
    if (name == "nearest") return UpsampleMode::nearest;
    if (name == "bilinear") return UpsampleMode::bilinear;
    fail(Errc::usage, "unknown upsample mode '" + name + "' (expected nearest or bilinear)");
}

const char* upsample_mode_name(UpsampleMode mode) noexcept {
    return mode == UpsampleMode::nearest ? "nearest" : "bilinear";
}

PixelMap upsample(const ScoreMap& map, std::size_t height, std::size_t width, UpsampleMode mode) {
    return upsample(map.grid, height, width, mode);
}

PixelMap upsample(const Tensor& grid, std::size_t height, std::size_t width, UpsampleMode mode) {
    if (grid.rank() != 2 || grid.empty()) fail(Errc::shape_mismatch, "upsample: grid must be a non-empty matrix");
    const std::size_t gh = grid.rows(), gw = grid.cols();
    if (height == 0 || width == 0) fail(Errc::shape_mismatch, "upsample: target size must be positive");
    PixelMap out;
    out.grid = Tensor({height, width});
    if (mode == UpsampleMode::nearest) {
        if (height % gh != 0 || width % gw != 0) {
            fail(Errc::shape_mismatch, "upsample: " + std::to_string(height) + "x" + std::to_string(width) +
                                           " is not a multiple of the " + std::to_string(gh) + "x" +
                                           std::to_string(gw) + " grid");
        }
        const std::size_t sy = height / gh, sx = width / gw;
        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) out.grid(y, x) = grid(y / sy, x / sx);
        }
        return out;
    }
    auto coord = [](std::size_t px, std::size_t n_px, std::size_t n_cells, std::size_t& lo, std::size_t& hi,
                    double& frac) {
        const double u = (static_cast<double>(px) + 0.5) * static_cast<double>(n_cells) / static_cast<double>(n_px) - 0.5;
        const double clamped = std::clamp(u, 0.0, static_cast<double>(n_cells - 1));
        lo = static_cast<std::size_t>(std::floor(clamped));
        hi = std::min(lo + 1, n_cells - 1);
        frac = clamped - static_cast<double>(lo);
    };
    for (std::size_t y = 0; y < height; ++y) {
        std::size_t y0, y1;
        double fy;
        coord(y, height, gh, y0, y1, fy);
        for (std::size_t x = 0; x < width; ++x) {
            std::size_t x0, x1;
            double fx;
            coord(x, width, gw, x0, x1, fx);
            const double top = grid(y0, x0) + (grid(y0, x1) - grid(y0, x0)) * fx;
            const double bottom = grid(y1, x0) + (grid(y1, x1) - grid(y1, x0)) * fx;
            out.grid(y, x) = top + (bottom - top) * fy;
        }
    }
    return out;
}

}  // namespace cdam
