#include "cdam/verify.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "cdam/csv_io.hpp"
#include "cdam/error.hpp"
#include "cdam/estimators.hpp"
#include "cdam/head_grad.hpp"
#include "cdam/kernels.hpp"
#include "cdam/rng.hpp"
#include "cdam/vtw.hpp"

namespace cdam {

namespace {

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

Tensor random_image(const ViTConfig& c, std::uint64_t seed) {
    SeededRng rng(seed);
    return normal_sample(rng, {c.image_size, c.image_size, 3}, 1.0);
}

void check(std::vector<CheckResult>& out, std::string name, bool passed, std::string detail) {
    out.push_back({std::move(name), passed, std::move(detail)});
}

// Runs `fn`; an exception becomes a failed check carrying its message.
template <class Fn>
void guarded(std::vector<CheckResult>& out, const std::string& name, Fn&& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        check(out, name, false, e.what());
    }
}

double completeness_error(const ViTModel& m, const ForwardTrace& tr, ActivationSite site, std::size_t n) {
    const GradTarget t = ClassLogit{0};
    const auto ig = integrated_cdam(m, tr, t, n, site);
    double sum = 0.0;
    for (double v : ig.token_scores.values()) sum += v;
    const Tensor zero(tr.at(site).shape());
    const double delta = target_value(m, tail_forward(m, tr, site, tr.at(site)), t) -
                         target_value(m, tail_forward(m, tr, site, zero), t);
    return std::abs(sum - delta) / std::abs(delta);
}

void tiny_model_checks(std::vector<CheckResult>& out, bool full) {
    const ViTConfig c = tiny_config();
    const ViTModel m = random_model(c, 0);
    const ForwardTrace tr = forward(m, random_image(c, 1));
    SeededRng rng(2);
    const Tensor lc = normal_sample(rng, {c.d_model}, 1.0);
    const ActivationSite sites[] = {ActivationSite::block_input, ActivationSite::post_ln1};

    guarded(out, "gradcheck", [&] {
        double worst = 0.0;
        for (auto site : sites) {
            worst = std::max(worst, fd_check(m, tr, site, ClassLogit{0}, 1e-5));
            for (auto metric : {Metric::dot, Metric::cosine, Metric::l2}) {
                worst = std::max(worst, fd_check(m, tr, site, ConceptSim{lc, metric}, 1e-5));
            }
        }
        check(out, "gradcheck", worst <= 1e-5, "max rel err " + sci(worst) + " (both sites, class + 3 metrics)");
    });

    guarded(out, "tail reproduces forward", [&] {
        bool ok = true;
        for (auto site : sites) ok = ok && tail_forward(m, tr, site, tr.at(site)).logits == tr.logits;
        check(out, "tail reproduces forward", ok, "bitwise at both sites");
    });

    guarded(out, "smooth sigma=0 == vanilla", [&] {
        double worst = 0.0;
        for (auto site : sites) {
            SmoothOptions opt;
            opt.sigma = 0.0;
            opt.n = 4;
            opt.site = site;
            const auto s = smooth_cdam(m, tr, ClassLogit{0}, opt);
            worst = std::max(worst, max_abs_diff(s.token_scores, cdam(m, tr, ClassLogit{0}, site).token_scores));
        }
        check(out, "smooth sigma=0 == vanilla", worst <= 1e-12, "max abs diff " + sci(worst));
    });

    guarded(out, "integrated n=1 == vanilla", [&] {
        double worst = 0.0;
        for (auto site : sites) {
            const auto ig = integrated_cdam(m, tr, ClassLogit{0}, 1, site);
            worst = std::max(worst, max_abs_diff(ig.token_scores, cdam(m, tr, ClassLogit{0}, site).token_scores));
        }
        check(out, "integrated n=1 == vanilla", worst <= 1e-12, "max abs diff " + sci(worst));
    });

    guarded(out, "zero activations -> zero map", [&] {
        bool ok = true;
        for (auto site : sites) {
            ForwardTrace zeroed = tr;
            const Tensor zero(tr.at(site).shape());
            (site == ActivationSite::block_input ? zeroed.tokens_pre : zeroed.tokens_ln) = zero;
            ok = ok && max_abs(cdam(m, zeroed, ClassLogit{0}, site).token_scores.values()) == 0.0;
            ok = ok && max_abs(integrated_cdam(m, zeroed, ClassLogit{0}, 8, site).token_scores.values()) == 0.0;
        }
        check(out, "zero activations -> zero map", ok, "vanilla and integrated, exact");
    });

    guarded(out, "weight file round trip", [&] {
        const auto bytes = encode_weights(m);
        const auto back = decode_weights(bytes);
        check(out, "weight file round trip", named_tensors(back) == named_tensors(m) && encode_weights(back) == bytes,
              "bitwise");
    });

    guarded(out, "score CSV round trip", [&] {
        const auto map = cdam(m, tr, ClassLogit{0}, ActivationSite::post_ln1);
        const auto back = parse_scoremap(format_scoremap(map), c.grid_size(), c.grid_size(), "round-trip");
        check(out, "score CSV round trip", back.grid == map.grid, "bitwise");
    });

    if (full) {
        guarded(out, "IG completeness n=256", [&] {
            double worst = 0.0;
            std::string detail;
            for (auto site : sites) {
                const double e = completeness_error(m, tr, site, 256);
                worst = std::max(worst, e);
                detail += std::string(detail.empty() ? "" : ", ") + site_name(site) + " rel err " + sci(e);
            }
            check(out, "IG completeness n=256", worst <= 1e-3, detail + " (tolerance 1e-3)");
        });
    }
}

void supplied_model_checks(std::vector<CheckResult>& out, const ViTModel& m) {
    const ForwardTrace tr = forward(m, random_image(m.config, 1));
    const ActivationSite sites[] = {ActivationSite::block_input, ActivationSite::post_ln1};
    check(out, "model: forward finite", all_finite(tr.cls_latent.values()) && all_finite(tr.logits.values()),
          std::to_string(m.config.n_tokens()) + " tokens");
    guarded(out, "model: tail reproduces forward", [&] {
        bool ok = true;
        for (auto site : sites) {
            const auto t = tail_forward(m, tr, site, tr.at(site));
            ok = ok && t.logits == tr.logits && t.cls_latent == tr.cls_latent;
        }
        check(out, "model: tail reproduces forward", ok, "bitwise at both sites");
    });
    guarded(out, "model: gradcheck", [&] {
        const GradTarget target = m.has_head() ? GradTarget{ClassLogit{0}} : GradTarget{ConceptSim{tr.cls_latent, Metric::dot}};
        const std::size_t sample = m.config.d_model <= 32 ? kFdSampleSize : 32;
        double worst = 0.0;
        for (auto site : sites) worst = std::max(worst, fd_check(m, tr, site, target, 1e-5, sample));
        check(out, "model: gradcheck", worst <= 1e-5,
              std::string(m.has_head() ? "class 0" : "concept (own latent, dot)") + ", max rel err " + sci(worst));
    });
}

}  // namespace

ViTConfig tiny_config() {
    ViTConfig c;
    c.image_size = 16;
    c.patch_size = 4;
    c.d_model = 16;
    c.n_heads = 2;
    c.n_blocks = 3;
    c.d_mlp = 32;
    c.n_classes = 5;
    return c;
}

std::vector<CheckResult> run_verify(const VerifyOptions& options) {
    PrecisionScope scope(Precision::F64);
    std::vector<CheckResult> out;
    tiny_model_checks(out, options.full);
    if (options.model != nullptr) supplied_model_checks(out, *options.model);
    return out;
}

}  // namespace cdam
