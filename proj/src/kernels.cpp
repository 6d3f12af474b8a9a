#include "cdam/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cdam/error.hpp"

namespace cdam {

namespace {

void round_all(Tensor& t) {
    if (precision() == Precision::F64) return;
    for (double& v : t.values()) v = round_to_precision(v);
}

void finish(Tensor& t, const char* what) {
    round_all(t);
    require_finite(t, what);
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank) {
        fail(Errc::shape_mismatch, std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                                       shape_string(t.shape()));
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul lhs");
    require_rank(b, 2, "matmul rhs");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        fail(Errc::shape_mismatch, "matmul: inner extents differ " + shape_string(a.shape()) + " * " +
                                       shape_string(b.shape()));
    }
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a(i, p);
            const double* brow = &b.data()[p * n];
            double* orow = &out(i, 0);
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    finish(out, "matmul");
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require_rank(x, 2, "linear input");
    require_rank(w, 2, "linear weight");
    if (bias.size() != w.cols()) {
        fail(Errc::shape_mismatch, "linear: bias has " + std::to_string(bias.size()) + " values, weight " +
                                       shape_string(w.shape()));
    }
    Tensor out = matmul(x, w);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bias[j];
    }
    finish(out, "linear");
    return out;
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    Tensor out({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    }
    return out;
}

void softmax_inplace(std::span<double> v) {
    if (v.empty()) fail(Errc::invalid_argument, "softmax over an empty axis");
    const double mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (double& e : v) {
        e = std::exp(e - mx);
        sum += e;
    }
    for (double& e : v) e /= sum;
}

std::vector<double> softmax_vjp(std::span<const double> p, std::span<const double> upstream) {
    if (p.size() != upstream.size()) fail(Errc::shape_mismatch, "softmax_vjp: probability and upstream lengths differ");
    double weighted = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) weighted += p[i] * upstream[i];
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = round_to_precision(p[i] * (upstream[i] - weighted));
    return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank()) {
        fail(Errc::invalid_argument, "softmax: axis " + std::to_string(axis) + " invalid for shape " +
                                         shape_string(x.shape()));
    }
    const auto& shape = x.shape();
    const std::size_t extent = shape[axis];
    if (extent == 0) fail(Errc::invalid_argument, "softmax over an empty axis");
    std::size_t inner = 1;
    for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
    const std::size_t outer = x.size() / (extent * inner);

    Tensor out = x;
    std::vector<double> buf(extent);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * extent * inner + in;
            for (std::size_t e = 0; e < extent; ++e) buf[e] = x[base + e * inner];
            softmax_inplace(buf);
            for (std::size_t e = 0; e < extent; ++e) out[base + e * inner] = buf[e];
        }
    }
    finish(out, "softmax");
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank(x, 2, "layer_norm input");
    const std::size_t n = x.rows(), d = x.cols();
    if (gamma.size() != d || beta.size() != d) {
        fail(Errc::shape_mismatch, "layer_norm: gamma/beta length " + std::to_string(gamma.size()) + "/" +
                                       std::to_string(beta.size()) + " does not match width " + std::to_string(d));
    }
    Tensor out({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        auto r = x.row(i);
        double mean = 0.0;
        for (double v : r) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) out(i, j) = gamma[j] * ((r[j] - mean) * inv) + beta[j];
    }
    finish(out, "layer_norm");
    return out;
}

double gelu(double x) noexcept { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

double gelu_derivative(double x) noexcept {
    const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

Tensor gelu(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.values()) v = gelu(v);
    finish(out, "gelu");
    return out;
}

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        fail(Errc::invalid_argument, "gaussian blur sigma must be positive, got " + std::to_string(sigma));
    }
    const auto radius = static_cast<long long>(std::ceil(3.0 * sigma));
    std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (long long k = -radius; k <= radius; ++k) {
        const double w = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
        taps[static_cast<std::size_t>(k + radius)] = w;
        sum += w;
    }
    for (double& w : taps) w /= sum;
    return taps;
}

std::size_t reflect_index(long long i, std::size_t n) noexcept {
    const auto period = static_cast<long long>(2 * n);
    long long m = i % period;
    if (m < 0) m += period;
    if (m >= static_cast<long long>(n)) m = period - 1 - m;
    return static_cast<std::size_t>(m);
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
    require_rank(image, 3, "gaussian_blur");
    const auto taps = gaussian_kernel(sigma);
    const auto radius = static_cast<long long>(taps.size() / 2);
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);

    Tensor tmp(image.shape());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (long long k = -radius; k <= radius; ++k) {
                    const std::size_t xx = reflect_index(static_cast<long long>(x) + k, w);
                    acc += taps[static_cast<std::size_t>(k + radius)] * image.at3(y, xx, ch);
                }
                tmp.at3(y, x, ch) = acc;
            }
        }
    }
    Tensor out(image.shape());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (long long k = -radius; k <= radius; ++k) {
                    const std::size_t yy = reflect_index(static_cast<long long>(y) + k, h);
                    acc += taps[static_cast<std::size_t>(k + radius)] * tmp.at3(yy, x, ch);
                }
                out.at3(y, x, ch) = acc;
            }
        }
    }
    finish(out, "gaussian_blur");
    return out;
}

PearsonResult pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        fail(Errc::shape_mismatch, "pearson: lengths " + std::to_string(x.size()) + " and " +
                                       std::to_string(y.size()) + " differ");
    }
    if (x.size() < 2) fail(Errc::invalid_argument, "pearson needs at least two samples");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return {0.0, true};
    const double r = sxy / std::sqrt(sxx * syy);
    return {std::clamp(r, -1.0, 1.0), false};
}

Tensor normal_sample(SeededRng& rng, const Shape& shape, double sigma) {
    if (!(sigma >= 0.0)) fail(Errc::invalid_argument, "noise sigma must be non-negative");
    Tensor out(shape);
    if (sigma == 0.0) return out;
    for (double& v : out.values()) v = sigma * rng.normal();
    round_all(out);
    return out;
}

double population_std(std::span<const double> values) noexcept {
    if (values.empty()) return 0.0;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    return std::sqrt(var / static_cast<double>(values.size()));
}

}  // namespace cdam
