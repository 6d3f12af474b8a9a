#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cdam/rng.hpp"
#include "cdam/tensor.hpp"

namespace cdam {

// a[m x k] * b[k x n].
Tensor matmul(const Tensor& a, const Tensor& b);

// x[m x k] * w[k x n] + bias[n] (bias broadcast over rows).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor transpose(const Tensor& a);

// Numerically stable softmax along `axis` (max subtraction).
Tensor softmax(const Tensor& x, std::size_t axis);

// In-place softmax of a single vector. Exposed for the attention kernels.
void softmax_inplace(std::span<double> v);

// Vector-Jacobian product of softmax at output p: p * (u - <p, u>). The
// Jacobian diag(p) - p p^T is symmetric, so this is also the JVP.
std::vector<double> softmax_vjp(std::span<const double> p, std::span<const double> upstream);

// Per-row normalisation of x[n x d]: gamma * (x - mean) / sqrt(var + eps) + beta,
// with the biased (population) variance.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// Exact GELU, x * Phi(x).
double gelu(double x) noexcept;
// d/dx [x * Phi(x)] = Phi(x) + x * phi(x).
double gelu_derivative(double x) noexcept;
Tensor gelu(const Tensor& x);

// Normalised 1-D Gaussian taps, radius ceil(3 sigma), index 0 = offset -radius.
std::vector<double> gaussian_kernel(double sigma);

// Half-sample symmetric reflection (... c b a | a b c ... | c b a ...) of an
// arbitrary integer coordinate into [0, n). Handles offsets longer than n.
std::size_t reflect_index(long long i, std::size_t n) noexcept;

// Separable Gaussian blur of image[H x W x C] (rows first, then columns).
Tensor gaussian_blur(const Tensor& image, double sigma);

struct PearsonResult {
    double value = 0.0;
    bool degenerate = false;  // either input had zero variance; value forced to 0
};

PearsonResult pearson(std::span<const double> x, std::span<const double> y);

// i.i.d. N(0, sigma^2) samples drawn from `rng` in row-major order.
Tensor normal_sample(SeededRng& rng, const Shape& shape, double sigma);

// Sample standard deviation helper (population form) over all elements.
double population_std(std::span<const double> values) noexcept;

}  // namespace cdam
