#pragma once

#include <string>
#include <vector>

#include "cdam/vit.hpp"

namespace cdam {

// 16x16 image, patch 4, d_model 16, 2 heads, 3 blocks, d_mlp 32, 5 classes.
ViTConfig tiny_config();

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct VerifyOptions {
    const ViTModel* model = nullptr;  // optional supplied model: head path checks
    bool full = false;                // adds the n = 256 completeness check
};

// Built-in property suite on a generated tiny model (seed 0), plus forward and
// gradient checks on the supplied model. Runs in 64-bit mode.
std::vector<CheckResult> run_verify(const VerifyOptions& options);

}  // namespace cdam
