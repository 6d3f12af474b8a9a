#pragma once

// Internal: final-block evaluation shared by forward(), tail_forward() and the
// reverse pass. Only the CLS row is carried past the attention mixing, since
// nothing downstream of the final block reads the other tokens.

#include <span>
#include <vector>

#include "cdam/vit.hpp"

namespace cdam::detail {

struct LnCache {
    std::vector<double> xhat;
    double inv_std = 0.0;
};

// Normalises `in` into `out` (gamma * xhat + beta) and records the cache.
void ln_row(std::span<const double> in, const Tensor& gamma, const Tensor& beta, double eps,
            std::span<double> out, LnCache* cache);

// Input gradient of a layer norm given its cache and upstream gradient.
std::vector<double> ln_row_backward(const LnCache& cache, const Tensor& gamma, std::span<const double> grad_out);

struct TailState {
    ActivationSite site = ActivationSite::post_ln1;
    Tensor tokens;                 // [M x d] tokens entering the attention (LN1 output or identity)
    std::vector<LnCache> ln1;      // per row; only for standard mode at block_input
    std::vector<double> q_cls;     // [d] CLS query, all heads concatenated
    Tensor keys;                   // [M x d]
    Tensor values;                 // [M x d]
    Tensor probs;                  // [heads x M]
    std::vector<double> mixed;     // [d] concatenated head outputs for CLS
    std::vector<double> residual1; // [d] CLS row after the first residual
    LnCache ln2;
    std::vector<double> mlp_pre;   // [d_mlp]
    std::vector<double> mlp_hidden;
    std::vector<double> block_out; // [d] CLS row after the MLP residual
    LnCache final_ln;
    std::vector<double> latent;    // [d]
    std::vector<double> logits;    // [n_classes]
};

// `cls_residual` is the CLS row added by the first residual when site == post_ln1.
TailState run_tail(const ViTModel& model, ActivationSite site, const Tensor& activations,
                   std::span<const double> cls_residual);

}  // namespace cdam::detail
