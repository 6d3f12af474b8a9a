#include "cdam/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "cdam/error.hpp"

namespace cdam {

namespace {
std::atomic<Precision> g_precision{Precision::F32};
}

const char* errc_name(Errc code) noexcept {
    switch (code) {
        case Errc::usage: return "usage";
        case Errc::invalid_argument: return "invalid-argument";
        case Errc::io: return "io";
        case Errc::parse: return "parse";
        case Errc::validation: return "validation";
        case Errc::bad_magic: return "bad-magic";
        case Errc::bad_header: return "bad-header";
        case Errc::truncated: return "truncated";
        case Errc::missing_tensor: return "missing-tensor";
        case Errc::shape_mismatch: return "shape-mismatch";
        case Errc::invalid_config: return "invalid-config";
        case Errc::no_head: return "no-head";
        case Errc::numeric: return "numeric";
    }
    return "unknown";
}

int exit_code(Errc code) noexcept {
    switch (code) {
        case Errc::usage:
        case Errc::invalid_argument: return 2;
        case Errc::io:
        case Errc::parse:
        case Errc::validation: return 3;
        case Errc::bad_magic:
        case Errc::bad_header:
        case Errc::truncated:
        case Errc::missing_tensor:
        case Errc::shape_mismatch:
        case Errc::invalid_config:
        case Errc::no_head: return 4;
        case Errc::numeric: return 5;
    }
    return 1;
}

Precision precision() noexcept { return g_precision.load(std::memory_order_relaxed); }

void set_precision(Precision p) noexcept { g_precision.store(p, std::memory_order_relaxed); }

Precision precision_from_env(Precision fallback) {
    const char* env = std::getenv("CDAM_PRECISION");
    if (env == nullptr || *env == '\0') return fallback;
    std::string v(env);
    if (v == "f32" || v == "32") return Precision::F32;
    if (v == "f64" || v == "64") return Precision::F64;
    fail(Errc::usage, "CDAM_PRECISION must be f32 or f64, got '" + v + "'");
}

double round_to_precision(double v) noexcept {
    if (precision() == Precision::F32) return static_cast<double>(static_cast<float>(v));
    return v;
}

std::size_t shape_numel(const Shape& shape) noexcept {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
        fail(Errc::shape_mismatch, "tensor shape " + shape_string(shape_) + " does not match " +
                                       std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        fail(Errc::shape_mismatch, "axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
    }
    return shape_[axis];
}

std::span<double> Tensor::row(std::size_t r) {
    const std::size_t c = cols();
    return std::span<double>(data_).subspan(r * c, c);
}

std::span<const double> Tensor::row(std::size_t r) const {
    const std::size_t c = cols();
    return std::span<const double>(data_).subspan(r * c, c);
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
        fail(Errc::shape_mismatch, "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

bool all_finite(std::span<const double> values) noexcept {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Tensor& t, std::string_view what) {
    if (!all_finite(t.values())) fail(Errc::numeric, "non-finite value in " + std::string(what));
}

void require_shape(const Tensor& t, const Shape& expected, std::string_view what) {
    if (t.shape() != expected) {
        fail(Errc::shape_mismatch, std::string(what) + ": expected shape " + shape_string(expected) + ", got " +
                                       shape_string(t.shape()));
    }
}

double max_abs(std::span<const double> values) noexcept {
    double m = 0.0;
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_shape(b, a.shape(), "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace cdam
