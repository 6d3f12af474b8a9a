#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cdam/estimators.hpp"
#include "cdam/tensor.hpp"
#include "cdam/vit.hpp"

namespace cdam {

// Maps a normalised [H x W x 3] image to logits. The harness only needs this,
// so constructed test models can stand in for a ViT.
using Classifier = std::function<Tensor(const Tensor& image)>;

// Full forward pass of `model`; the model must outlive the classifier.
Classifier vit_classifier(const ViTModel& model);

inline constexpr double kPerturbationBlurSigma = 14.0;
inline constexpr double kCompactnessThreshold = 0.05;
inline constexpr std::size_t kBoxTrials = 100;
// Box-curve areas are normalised by the size range and multiplied by this.
inline constexpr double kBoxAreaScale = 14.0;

enum class RankOrder { mif, lif };

const char* rank_order_name(RankOrder order) noexcept;

// MIF: descending signed score; LIF: ascending. Ties in row-major index order.
std::vector<std::size_t> rank_pixels(const PixelMap& map, RankOrder order);

// {0, 2, 4, ..., 100}.
std::vector<double> default_fraction_grid();

// Seven sizes spanning patch to object scale: round(k * image_size / 14), k = 1..7
// (16, 32, ..., 112 at 224 px), duplicates and zeros dropped.
std::vector<std::size_t> default_box_sizes(std::size_t image_size);

struct PerturbationCurve {
    std::vector<double> fractions;  // percent, strictly increasing from 0 to 100
    std::vector<double> logits;
    RankOrder order = RankOrder::mif;
};

// At each p the first floor(p * H * W / 100) ranked pixels (all channels) are
// copied from `blurred`, the classifier is run and the target logit recorded.
PerturbationCurve perturbation_curve(const Classifier& classifier, const Tensor& image, const Tensor& blurred,
                                     const PixelMap& map, RankOrder order, std::size_t target_class,
                                     std::span<const double> fractions, unsigned jobs = 1);

double trapezoid(std::span<const double> x, std::span<const double> y);

struct FidelityResult {
    double a_mif = 0.0;
    double a_lif = 0.0;
    double a_lif_mif = 0.0;  // area under f_LIF - f_MIF
};

FidelityResult fidelity(const PerturbationCurve& mif, const PerturbationCurve& lif);

struct BoxCurve {
    std::vector<std::size_t> sizes;
    std::vector<double> correlations;
    std::vector<std::size_t> degenerate_counts;
};

// For each size s, `trials` top-left corners are drawn from
// SeededRng(derive_seed(seed, s)), uniform over all positions where the box fits.
// Each box is blurred; the output drop f(original) - f(perturbed) is correlated
// (Pearson) with the summed map scores inside the box.
BoxCurve box_sensitivity(const Classifier& classifier, const Tensor& image, const Tensor& blurred,
                         const PixelMap& map, std::size_t target_class, std::span<const std::size_t> sizes,
                         std::size_t trials = kBoxTrials, std::uint64_t seed = 0, unsigned jobs = 1);

// kBoxAreaScale * trapezoid(sizes, correlations) / (s_max - s_min).
double box_area(std::span<const std::size_t> sizes, std::span<const double> values);
double box_area(const BoxCurve& curve);

struct ClassDiscriminationOptions {
    std::vector<double> fractions = default_fraction_grid();
    std::vector<std::size_t> sizes;
    std::size_t trials = kBoxTrials;
    std::uint64_t seed = 0;
    unsigned jobs = 1;
};

struct ClassDiscriminationResult {
    PerturbationCurve mif, lif, mif_wrong, lif_wrong;
    FidelityResult fidelity_correct, fidelity_wrong;
    std::vector<double> delta_fidelity_curve;  // (f_LIF - f_MIF) - (f_LIF' - f_MIF')
    double delta_fidelity = 0.0;
    BoxCurve box_correct, box_wrong;
    std::vector<double> delta_box_curve;  // f_box - f_box'
    double delta_box = 0.0;
};

// Both maps rank pixels of the same image; the target class logit is always
// the one recorded. Box positions are shared between the two maps.
ClassDiscriminationResult class_discrimination(const Classifier& classifier, const Tensor& image,
                                               const Tensor& blurred, const PixelMap& map_correct,
                                               const PixelMap& map_wrong, std::size_t target_class,
                                               const ClassDiscriminationOptions& options);

struct CompactnessResult {
    double fraction = 1.0;
    bool degenerate = false;  // all-zero map
};

// Fraction of pixels with |score| <= t * max|score|.
CompactnessResult compactness(const PixelMap& map, double t = kCompactnessThreshold);

// Among tokens whose attention is at or below the 1st percentile, the fraction
// whose |S_i| / max|S| exceeds 0.05. Documentation statistic for the
// zero-attention / zero-score relation; not a pass/fail criterion.
double low_attention_leak(const ScoreMap& attention, const ScoreMap& scores);

}  // namespace cdam
