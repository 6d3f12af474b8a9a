#include "cdam/eval.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <string>
#include <thread>

#include "cdam/error.hpp"
#include "cdam/kernels.hpp"
#include "cdam/rng.hpp"

namespace cdam {

namespace {

template <class Fn>
void run_indexed(std::size_t count, unsigned jobs, Fn&& fn) {
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

void check_inputs(const Tensor& image, const Tensor& blurred, const PixelMap& map) {
    if (image.rank() != 3) fail(Errc::shape_mismatch, "evaluation image must be [H x W x C]");
    require_shape(blurred, image.shape(), "blurred reference");
    require_shape(map.grid, {image.dim(0), image.dim(1)}, "pixel map");
    require_finite(map.grid, "pixel map");
}

double target_logit(const Classifier& classifier, const Tensor& image, std::size_t target) {
    const Tensor logits = classifier(image);
    if (target >= logits.size()) {
        fail(Errc::invalid_argument, "target class " + std::to_string(target) + " out of range (" +
                                         std::to_string(logits.size()) + " logits)");
    }
    const double v = logits[target];
    if (!std::isfinite(v)) fail(Errc::numeric, "non-finite logit during evaluation");
    return v;
}

}  // namespace

Classifier vit_classifier(const ViTModel& model) {
    if (!model.has_head()) fail(Errc::no_head, "evaluation needs a model with a classifier head");
    return [&model](const Tensor& image) { return forward(model, image).logits; };
}

const char* rank_order_name(RankOrder order) noexcept { return order == RankOrder::mif ? "MIF" : "LIF"; }

std::vector<std::size_t> rank_pixels(const PixelMap& map, RankOrder order) {
    require_finite(map.grid, "pixel map");
    const auto values = map.grid.values();
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (order == RankOrder::mif) {
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    } else {
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    }
    return idx;
}

std::vector<double> default_fraction_grid() {
    std::vector<double> g;
    for (int p = 0; p <= 100; p += 2) g.push_back(p);
    return g;
}

std::vector<std::size_t> default_box_sizes(std::size_t image_size) {
    std::vector<std::size_t> sizes;
    for (int k = 1; k <= 7; ++k) {
        const auto s = static_cast<std::size_t>(std::lround(k * static_cast<double>(image_size) / 14.0));
        if (s == 0 || s > image_size) continue;
        if (sizes.empty() || sizes.back() != s) sizes.push_back(s);
    }
    return sizes;
}

PerturbationCurve perturbation_curve(const Classifier& classifier, const Tensor& image, const Tensor& blurred,
                                     const PixelMap& map, RankOrder order, std::size_t target_class,
                                     std::span<const double> fractions, unsigned jobs) {
    check_inputs(image, blurred, map);
    if (fractions.size() < 2 || fractions.front() != 0.0 || fractions.back() != 100.0) {
        fail(Errc::invalid_argument, "perturbation grid must start at 0 and end at 100");
    }
    for (std::size_t i = 1; i < fractions.size(); ++i) {
        if (!(fractions[i] > fractions[i - 1])) fail(Errc::invalid_argument, "perturbation grid must be strictly increasing");
    }
    const auto ranking = rank_pixels(map, order);
    const std::size_t n_pixels = ranking.size();
    const std::size_t channels = image.dim(2);

    PerturbationCurve curve;
    curve.order = order;
    curve.fractions.assign(fractions.begin(), fractions.end());
    curve.logits.resize(fractions.size());
    run_indexed(fractions.size(), jobs, [&](std::size_t k) {
        const auto count = static_cast<std::size_t>(std::floor(fractions[k] * static_cast<double>(n_pixels) / 100.0));
        Tensor perturbed = image;
        for (std::size_t r = 0; r < std::min(count, n_pixels); ++r) {
            const std::size_t px = ranking[r];
            for (std::size_t ch = 0; ch < channels; ++ch) perturbed[px * channels + ch] = blurred[px * channels + ch];
        }
        curve.logits[k] = target_logit(classifier, perturbed, target_class);
    });
    return curve;
}

double trapezoid(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) fail(Errc::shape_mismatch, "trapezoid: abscissa and ordinate lengths differ");
    double area = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) area += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
    return area;
}

FidelityResult fidelity(const PerturbationCurve& mif, const PerturbationCurve& lif) {
    if (mif.fractions != lif.fractions) fail(Errc::shape_mismatch, "MIF and LIF curves use different grids");
    if (mif.logits.size() != mif.fractions.size() || lif.logits.size() != lif.fractions.size()) {
        fail(Errc::shape_mismatch, "perturbation curve has mismatched lengths");
    }
    std::vector<double> diff(mif.logits.size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = lif.logits[i] - mif.logits[i];
    FidelityResult r;
    r.a_mif = trapezoid(mif.fractions, mif.logits);
    r.a_lif = trapezoid(lif.fractions, lif.logits);
    r.a_lif_mif = trapezoid(mif.fractions, diff);
    return r;
}

BoxCurve box_sensitivity(const Classifier& classifier, const Tensor& image, const Tensor& blurred,
                         const PixelMap& map, std::size_t target_class, std::span<const std::size_t> sizes,
                         std::size_t trials, std::uint64_t seed, unsigned jobs) {
    check_inputs(image, blurred, map);
    if (trials < 2) fail(Errc::invalid_argument, "box sensitivity needs at least two trials");
    const std::size_t h = image.dim(0), w = image.dim(1), channels = image.dim(2);
    for (std::size_t s : sizes) {
        if (s == 0 || s > h || s > w) {
            fail(Errc::invalid_argument, "box size " + std::to_string(s) + " does not fit a " + std::to_string(h) +
                                             "x" + std::to_string(w) + " image");
        }
    }
    const double base = target_logit(classifier, image, target_class);

    BoxCurve curve;
    curve.sizes.assign(sizes.begin(), sizes.end());
    curve.correlations.resize(sizes.size());
    curve.degenerate_counts.resize(sizes.size());
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        const std::size_t s = sizes[k];
        SeededRng rng(derive_seed(seed, s));
        std::vector<std::size_t> ys(trials), xs(trials);
        for (std::size_t t = 0; t < trials; ++t) {
            ys[t] = static_cast<std::size_t>(rng.uniform_below(h - s + 1));
            xs[t] = static_cast<std::size_t>(rng.uniform_below(w - s + 1));
        }
        std::vector<double> score_sums(trials), drops(trials);
        run_indexed(trials, jobs, [&](std::size_t t) {
            Tensor perturbed = image;
            double sum = 0.0;
            for (std::size_t y = ys[t]; y < ys[t] + s; ++y) {
                for (std::size_t x = xs[t]; x < xs[t] + s; ++x) {
                    sum += map.grid(y, x);
                    for (std::size_t ch = 0; ch < channels; ++ch) {
                        const std::size_t i = (y * w + x) * channels + ch;
                        perturbed[i] = blurred[i];
                    }
                }
            }
            score_sums[t] = sum;
            drops[t] = base - target_logit(classifier, perturbed, target_class);
        });
        const auto r = pearson(score_sums, drops);
        curve.correlations[k] = r.value;
        curve.degenerate_counts[k] = r.degenerate ? 1 : 0;
    }
    return curve;
}

double box_area(std::span<const std::size_t> sizes, std::span<const double> values) {
    if (sizes.size() < 2) fail(Errc::invalid_argument, "box area needs at least two box sizes");
    if (sizes.size() != values.size()) fail(Errc::shape_mismatch, "box area: sizes and values differ in length");
    std::vector<double> x(sizes.begin(), sizes.end());
    const double range = x.back() - x.front();
    if (!(range > 0.0)) fail(Errc::invalid_argument, "box sizes must be increasing");
    return kBoxAreaScale * trapezoid(x, values) / range;
}

double box_area(const BoxCurve& curve) { return box_area(curve.sizes, curve.correlations); }

ClassDiscriminationResult class_discrimination(const Classifier& classifier, const Tensor& image,
                                               const Tensor& blurred, const PixelMap& map_correct,
                                               const PixelMap& map_wrong, std::size_t target_class,
                                               const ClassDiscriminationOptions& options) {
    ClassDiscriminationResult r;
    const auto& f = options.fractions;
    r.mif = perturbation_curve(classifier, image, blurred, map_correct, RankOrder::mif, target_class, f, options.jobs);
    r.lif = perturbation_curve(classifier, image, blurred, map_correct, RankOrder::lif, target_class, f, options.jobs);
    r.mif_wrong = perturbation_curve(classifier, image, blurred, map_wrong, RankOrder::mif, target_class, f, options.jobs);
    r.lif_wrong = perturbation_curve(classifier, image, blurred, map_wrong, RankOrder::lif, target_class, f, options.jobs);
    r.fidelity_correct = fidelity(r.mif, r.lif);
    r.fidelity_wrong = fidelity(r.mif_wrong, r.lif_wrong);
    r.delta_fidelity_curve.resize(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        r.delta_fidelity_curve[i] =
            (r.lif.logits[i] - r.mif.logits[i]) - (r.lif_wrong.logits[i] - r.mif_wrong.logits[i]);
    }
    r.delta_fidelity = trapezoid(f, r.delta_fidelity_curve);

    const auto sizes = options.sizes.empty() ? default_box_sizes(image.dim(0)) : options.sizes;
    r.box_correct = box_sensitivity(classifier, image, blurred, map_correct, target_class, sizes, options.trials,
                                    options.seed, options.jobs);
    r.box_wrong = box_sensitivity(classifier, image, blurred, map_wrong, target_class, sizes, options.trials,
                                  options.seed, options.jobs);
    r.delta_box_curve.resize(sizes.size());
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        r.delta_box_curve[i] = r.box_correct.correlations[i] - r.box_wrong.correlations[i];
    }
    r.delta_box = box_area(sizes, r.delta_box_curve);
    return r;
}

CompactnessResult compactness(const PixelMap& map, double t) {
    require_finite(map.grid, "pixel map");
    if (map.grid.empty()) fail(Errc::invalid_argument, "compactness of an empty map");
    const double peak = max_abs(map.grid.values());
    if (peak == 0.0) return {1.0, true};
    const double threshold = t * peak;
    std::size_t small = 0;
    for (double v : map.grid.values()) {
        if (std::abs(v) <= threshold) ++small;
    }
    return {static_cast<double>(small) / static_cast<double>(map.grid.size()), false};
}

double low_attention_leak(const ScoreMap& attention, const ScoreMap& scores) {
    require_shape(scores.grid, attention.grid.shape(), "score map");
    const auto a = attention.grid.values();
    const auto s = scores.grid.values();
    std::vector<double> sorted(a.begin(), a.end());
    std::sort(sorted.begin(), sorted.end());
    const double cutoff = sorted[static_cast<std::size_t>(std::floor(0.01 * static_cast<double>(sorted.size() - 1)))];
    const double peak = max_abs(s);
    std::size_t low = 0, leaking = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] > cutoff) continue;
        ++low;
        if (peak > 0.0 && std::abs(s[i]) / peak > 0.05) ++leaking;
    }
    return low == 0 ? 0.0 : static_cast<double>(leaking) / static_cast<double>(low);
}

}  // namespace cdam
