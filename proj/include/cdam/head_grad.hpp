#pragma once

#include <cstddef>
#include <variant>

#include "cdam/tensor.hpp"
#include "cdam/vit.hpp"

namespace cdam {

struct ClassLogit {
    std::size_t index = 0;
};

struct ConceptSim {
    Tensor concept_vector;  // l_c, [d_model]
    Metric metric = Metric::dot;
};

using GradTarget = std::variant<ClassLogit, ConceptSim>;

// Throws Errc::no_head / invalid_argument / shape_mismatch for unusable targets.
void validate_target(const ViTModel& model, const GradTarget& target);

// Scalar target evaluated on a tail output.
double target_value(const ViTModel& model, const TailOutput& out, const GradTarget& target);

struct SiteGradient {
    Tensor grad;          // [n_tokens x d_model], d target / d site activations
    double value = 0.0;   // target evaluated at the same activations
};

// Gradient of the target at arbitrary activations placed at `site` (the
// Smooth/Integrated estimators call this on perturbed tokens). For post_ln1
// the first residual uses trace.tokens_pre as a constant.
SiteGradient site_gradient(const ViTModel& model, const ForwardTrace& trace, ActivationSite site,
                           const Tensor& activations, const GradTarget& target);

// Reverse-mode gradient at the captured activations, trace.at(site).
SiteGradient head_vjp(const ViTModel& model, const ForwardTrace& trace, ActivationSite site,
                      const GradTarget& target);

inline constexpr std::size_t kFdSampleSize = 512;

// Central differences (f(x + eps e) - f(x - eps e)) / 2 eps against head_vjp.
// Coordinates: all of them when d_model <= 32, otherwise `sample_size` (512 by
// default) drawn with a SeededRng(0x5eed) over the flattened site tensor.
// Error per coordinate: |analytic - numeric| / max(|analytic|, |numeric|, floor),
// floor = 1e-3 * max|numeric| over the sampled coordinates. Components far below
// the gradient scale sit at the roundoff level of the difference quotient
// (~1e-11 at eps = 1e-5), where an elementwise ratio measures only noise.
// Requires Precision::F64; eps must be positive. Rejects detached_identity,
// whose gradient holds attention constant and so is not the forward's derivative.
double fd_check(const ViTModel& model, const ForwardTrace& trace, ActivationSite site, const GradTarget& target,
                double eps, std::size_t sample_size = kFdSampleSize);

}  // namespace cdam
