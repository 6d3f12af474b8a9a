// Acceptance report: one PASS/FAIL line per top-level criterion. Exit status
// is nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cdam/cli.hpp"
#include "cdam/csv_io.hpp"
#include "cdam/eval.hpp"
#include "cdam/kernels.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace cdam;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool passed;
    std::string detail;
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

double sum(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

double tail_value(const ViTModel& m, const ForwardTrace& tr, ActivationSite site, const Tensor& x,
                  const GradTarget& t) {
    return target_value(m, tail_forward(m, tr, site, x), t);
}

constexpr ActivationSite kSites[] = {ActivationSite::block_input, ActivationSite::post_ln1};

// Head-path gradients against central differences, eps 1e-5, tolerance 1e-5.
Outcome gradient_exactness() {
    PrecisionScope p(Precision::F64);
    const auto start = std::chrono::steady_clock::now();
    const auto c = testing::tiny();
    const ViTModel m = random_model(c, 0);
    const ForwardTrace tr = forward(m, testing::random_image(c, 1));
    const Tensor lc = testing::random_vector(c.d_model, 2);
    std::vector<GradTarget> targets;
    for (std::size_t k = 0; k < c.n_classes; ++k) targets.push_back(ClassLogit{k});
    for (auto metric : {Metric::dot, Metric::cosine, Metric::l2}) targets.push_back(ConceptSim{lc, metric});
    double worst = 0.0;
    for (auto site : kSites)
        for (const auto& t : targets) worst = std::max(worst, fd_check(m, tr, site, t, 1e-5));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {worst <= 1e-5 && secs < 10.0,
            "max rel err " + fmt(worst) + " (tol 1e-5), " + fmt(secs) + " s (limit 10 s)"};
}

// Sum of integrated scores against f(T) - f(0), n = 256, ten seeds, both sites.
Outcome ig_completeness() {
    PrecisionScope p(Precision::F64);
    const auto c = testing::tiny();
    double worst[2] = {0.0, 0.0};
    std::size_t passing = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const ViTModel m = random_model(c, seed);
        const ForwardTrace tr = forward(m, testing::random_image(c, 100 + seed));
        for (std::size_t k = 0; k < 2; ++k) {
            const ActivationSite site = kSites[k];
            const GradTarget t = ClassLogit{seed % c.n_classes};
            const double gap = tail_value(m, tr, site, tr.at(site), t) - tail_value(m, tr, site, Tensor(tr.at(site).shape()), t);
            const double total_score = sum(integrated_cdam(m, tr, t, 256, site).token_scores.values());
            const double rel = std::abs(total_score - gap) / std::abs(gap);
            worst[k] = std::max(worst[k], rel);
            passing += rel <= 1e-3 ? 1 : 0;
            ++total;
        }
    }
    return {passing == total, std::to_string(passing) + "/" + std::to_string(total) +
                                  " seed-site pairs within 1e-3; worst rel gap block_input " +
                                  fmt(worst[0]) + ", post_ln1 " + fmt(worst[1])};
}

Outcome degeneracies() {
    PrecisionScope p(Precision::F64);
    const auto c = testing::tiny();
    double smooth_gap = 0.0;
    bool ig_equal = true, zero_exact = true;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const ViTModel m = random_model(c, seed);
        const ForwardTrace tr = forward(m, testing::random_image(c, 200 + seed));
        for (auto site : kSites) {
            const ScoreMap vanilla = cdam_class(m, tr, 1, site);
            SmoothOptions o;
            o.sigma = 0.0;
            o.n = 10;
            o.site = site;
            smooth_gap = std::max(smooth_gap, max_abs_diff(smooth_cdam(m, tr, ClassLogit{1}, o).token_scores,
                                                           vanilla.token_scores));
            ig_equal = ig_equal && integrated_cdam(m, tr, ClassLogit{1}, 1, site).token_scores == vanilla.token_scores;
        }
        ForwardTrace zero = tr;
        zero.tokens_pre = Tensor(tr.tokens_pre.shape());
        zero.tokens_ln = Tensor(tr.tokens_ln.shape());
        for (auto site : kSites) {
            zero_exact = zero_exact && max_abs(cdam_class(m, zero, 0, site).token_scores.values()) == 0.0;
            SmoothOptions o;
            o.sigma = 0.0;
            o.n = 3;
            o.site = site;
            zero_exact = zero_exact && max_abs(smooth_cdam(m, zero, ClassLogit{0}, o).token_scores.values()) == 0.0;
            zero_exact = zero_exact && max_abs(integrated_cdam(m, zero, ClassLogit{0}, 5, site).token_scores.values()) == 0.0;
        }
    }
    return {smooth_gap <= 1e-12 && ig_equal && zero_exact,
            "smooth(sigma=0) vs vanilla " + fmt(smooth_gap) + " (tol 1e-12); integrated(n=1) == vanilla: " +
                (ig_equal ? "yes" : "no") + "; zero activations -> zero map: " + (zero_exact ? "yes" : "no")};
}

Outcome linear_tail() {
    PrecisionScope p(Precision::F64);
    auto c = testing::tiny();
    c.tail_mode = TailMode::linear_pool;
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const ViTModel m = random_model(c, seed);
        const ForwardTrace tr = forward(m, testing::random_image(c, 300 + seed));
        for (auto site : kSites)
            for (std::size_t cls = 0; cls < c.n_classes; ++cls) {
                const ScoreMap s = cdam_class(m, tr, cls, site);
                const Tensor& t = tr.at(site);
                for (std::size_t i = 0; i < c.n_tokens(); ++i) {
                    double contribution = 0.0;
                    for (std::size_t j = 0; j < c.d_model; ++j) contribution += m.head->weight(j, cls) * t(i, j);
                    contribution /= static_cast<double>(c.n_tokens());
                    worst = std::max(worst, std::abs(s.token_scores[i] - contribution));
                }
            }
    }
    return {worst <= 1e-9, "max |S_i - W_c.T_i/(N+1)| " + fmt(worst) + " (tol 1e-9)"};
}

// sum_h A_i^h (V_i^h . [W_o u]^h) for the detached-attention identity tail.
double detached_gap(std::size_t heads, bool identity_wo, std::uint64_t seed) {
    auto c = testing::tiny();
    c.n_heads = heads;
    c.tail_mode = TailMode::detached_identity;
    ViTModel m = random_model(c, seed);
    auto& b = m.blocks.back();
    b.wv.bias = Tensor(b.wv.bias.shape(), 0.0);
    if (identity_wo) {
        b.wo.weight = Tensor(b.wo.weight.shape(), 0.0);
        for (std::size_t j = 0; j < c.d_model; ++j) b.wo.weight(j, j) = 1.0;
    }
    const ForwardTrace tr = forward(m, testing::random_image(c, seed + 1));
    const Tensor lc = testing::random_vector(c.d_model, seed + 2);
    const ScoreMap s = cdam_concept(m, tr, lc, Metric::dot, ActivationSite::post_ln1);
    const std::size_t d = c.d_model, dh = c.d_head();
    std::vector<double> u(d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) u[i] += b.wo.weight(i, j) * lc[j];
    const auto v = testing::affine(testing::to_mat(tr.tokens_pre), b.wv);
    double worst = 0.0;
    for (std::size_t i = 0; i < c.n_tokens(); ++i) {
        double want = 0.0;
        for (std::size_t h = 0; h < heads; ++h) {
            double dot = 0.0;
            for (std::size_t e = 0; e < dh; ++e) dot += v[i][h * dh + e] * u[h * dh + e];
            want += tr.attn(h, i) * dot;
        }
        worst = std::max(worst, std::abs(s.token_scores[i] - want));
    }
    return worst;
}

Outcome closed_forms() {
    PrecisionScope p(Precision::F64);
    const double single = std::max(detached_gap(1, true, 10), detached_gap(1, true, 20));
    const double multi = std::max(detached_gap(2, false, 30), detached_gap(4, false, 40));
    return {single <= 1e-9 && multi <= 1e-9,
            "single head S_i = A_i(V_i.l_c) gap " + fmt(single) + ", multi-head Concat(Y')W_o gap " + fmt(multi) +
                " (tol 1e-9)"};
}

Outcome harness_identities() {
    const auto c = testing::tiny();
    const ViTModel m = random_model(c, 5);
    const Classifier clf = vit_classifier(m);
    const Tensor img = testing::random_image(c, 6);
    const Tensor blurred = gaussian_blur(img, kPerturbationBlurSigma);
    SeededRng rng(7);
    const PixelMap map{normal_sample(rng, {16, 16}, 1.0)};
    const auto grid = default_fraction_grid();

    const auto mif = perturbation_curve(clf, img, blurred, map, RankOrder::mif, 0, grid);
    const auto lif = perturbation_curve(clf, img, blurred, map, RankOrder::lif, 0, grid);
    const bool endpoints = mif.logits.back() == lif.logits.back();

    ClassDiscriminationOptions o;
    o.trials = 20;
    const auto same = class_discrimination(clf, img, blurred, map, map, 0, o);
    const bool deltas = same.delta_fidelity == 0.0 && same.delta_box == 0.0;

    std::vector<double> v(256, 0.0);
    v[17] = 2.0;
    v[90] = -0.09;  // below 5% of the peak
    v[91] = 0.11;   // above it
    const bool compact = compactness({Tensor({16, 16}, v)}).fraction == 254.0 / 256.0 &&
                         compactness({Tensor({16, 16}, 3.0)}).fraction == 0.0 &&
                         compactness({Tensor({16, 16}, 0.0)}).fraction == 1.0;

    double trap = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> x{0.0}, y{rng.normal()};
        for (int i = 0; i < 40; ++i) {
            x.push_back(x.back() + rng.uniform() + 0.01);
            y.push_back(rng.normal());
        }
        double oracle = 0.0;
        for (std::size_t i = 1; i < x.size(); ++i) oracle += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
        trap = std::max(trap, std::abs(trapezoid(x, y) - oracle));
    }
    return {endpoints && deltas && compact && trap <= 1e-9,
            std::string("f_MIF(100)==f_LIF(100): ") + (endpoints ? "yes" : "no") +
                "; identical maps -> delta 0: " + (deltas ? "yes" : "no") + "; compactness analytic: " +
                (compact ? "yes" : "no") + "; trapezoid gap " + fmt(trap) + " (tol 1e-9)"};
}

Outcome class_discrimination_sign() {
    const ViTModel m = testing::two_group_model();
    const Tensor img = testing::two_group_image();
    const ForwardTrace tr = forward(m, img);
    const PixelMap correct = upsample(cdam_class(m, tr, 0).grid, 16, 16, UpsampleMode::nearest);
    const PixelMap wrong = upsample(cdam_class(m, tr, 1).grid, 16, 16, UpsampleMode::nearest);
    ClassDiscriminationOptions o;
    o.sizes = default_box_sizes(16);
    const auto r = class_discrimination(vit_classifier(m), img, gaussian_blur(img, kPerturbationBlurSigma), correct,
                                        wrong, 0, o);
    const auto& wc = r.box_wrong.correlations;
    const double mean_wrong = sum(wc) / static_cast<double>(wc.size());
    const double max_wrong = *std::max_element(wc.begin(), wc.end());
    return {r.delta_fidelity > 0.0 && max_wrong < 0.0,
            "delta fidelity area " + fmt(r.delta_fidelity) + " (> 0); wrong-class box correlation mean " +
                fmt(mean_wrong) + ", max " + fmt(max_wrong) + " (< 0)"};
}

int cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    return run_cli(args, out, err);
}

Outcome determinism() {
    const fs::path dir = testing::temp_dir("acceptance_cli");
    auto path = [&](const std::string& n) { return (dir / n).string(); };
    bool ok = cli({"synth-model", "--out", path("m.vtw"), "--seed", "3"}) == kExitOk &&
              cli({"synth-image", "--out", path("i.png"), "--size", "16", "--seed", "4"}) == kExitOk &&
              cli({"explain", "--model", path("m.vtw"), "--image", path("i.png"), "--class", "1", "--method", "smooth",
                   "--steps", "8", "--seed", "9", "--out-csv", path("s.csv"), "--out-png", path("s.png"),
                   "--jobs", "2"}) == kExitOk &&
              cli({"explain", "--model", path("m.vtw"), "--image", path("i.png"), "--class", "2", "--method",
                   "integrated", "--steps", "8", "--out-csv", path("w.csv")}) == kExitOk &&
              cli({"eval", "classdisc", "--model", path("m.vtw"), "--image", path("i.png"), "--target-class", "1",
                   "--map", path("s.csv"), "--map-wrong", path("w.csv"), "--trials", "10", "--out", path("cd")}) ==
                  kExitOk;
    if (!ok) return {false, "pipeline invocation failed"};

    const std::vector<std::string> manifests{"s.csv.manifest.json", "w.csv.manifest.json", "cd.fidelity.csv.manifest.json"};
    std::size_t compared = 0, identical = 0;
    for (const auto& name : manifests) {
        const auto j = nlohmann::json::parse(read_text_file(path(name)));
        std::vector<std::pair<std::string, std::string>> before;
        for (const auto& o : j["outputs"]) before.emplace_back(o.get<std::string>(), read_text_file(o.get<std::string>()));
        for (const auto& [p, _] : before) fs::remove(p);
        if (cli({"replay", path(name)}) != kExitOk) return {false, "replay of " + name + " failed"};
        for (const auto& [p, bytes] : before) {
            ++compared;
            identical += read_text_file(p) == bytes ? 1 : 0;
        }
    }
    return {identical == compared,
            std::to_string(identical) + "/" + std::to_string(compared) + " replayed outputs byte-identical"};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient exactness", gradient_exactness},
        {"integrated completeness", ig_completeness},
        {"degeneracies", degeneracies},
        {"linear-tail exactness", linear_tail},
        {"detached-attention closed forms", closed_forms},
        {"harness identities", harness_identities},
        {"constructed class discrimination", class_discrimination_sign},
        {"CLI determinism", determinism},
    };
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        Outcome r;
        try {
            r = check();
        } catch (const std::exception& e) {
            r = {false, std::string("error: ") + e.what()};
        }
        std::printf("%s  %-34s %s\n", r.passed ? "PASS" : "FAIL", name.c_str(), r.detail.c_str());
        failures += r.passed ? 0 : 1;
    }
    std::fflush(stdout);
    return failures == 0 ? 0 : 1;
}
