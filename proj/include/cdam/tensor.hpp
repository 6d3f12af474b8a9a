#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cdam {

// Compute precision. Values are always carried as double; in F32 mode every
// kernel rounds its outputs to the nearest float, which reproduces 32-bit
// storage of intermediate activations. F64 is required for gradient checks.
enum class Precision { F32, F64 };

Precision precision() noexcept;
void set_precision(Precision p) noexcept;

// Reads CDAM_PRECISION ("f32" / "f64"); falls back to `fallback` when unset.
Precision precision_from_env(Precision fallback);

double round_to_precision(double v) noexcept;

// RAII helper for tests and the verify command.
class PrecisionScope {
public:
    explicit PrecisionScope(Precision p) : saved_(precision()) { set_precision(p); }
    ~PrecisionScope() { set_precision(saved_); }
    PrecisionScope(const PrecisionScope&) = delete;
    PrecisionScope& operator=(const PrecisionScope&) = delete;

private:
    Precision saved_;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

// Dense row-major array. product(shape) == size() always holds.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // Rank-2 accessors.
    std::size_t rows() const { return dim(0); }
    std::size_t cols() const { return dim(1); }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }
    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }
    double& at3(std::size_t a, std::size_t b, std::size_t c) noexcept {
        return data_[(a * shape_[1] + b) * shape_[2] + c];
    }
    double at3(std::size_t a, std::size_t b, std::size_t c) const noexcept {
        return data_[(a * shape_[1] + b) * shape_[2] + c];
    }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    std::span<double> row(std::size_t r);
    std::span<const double> row(std::size_t r) const;

    const std::vector<double>& data() const noexcept { return data_; }

    Tensor reshaped(Shape shape) const;

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

bool all_finite(std::span<const double> values) noexcept;

// Throws Errc::numeric naming `what` when any element is NaN or Inf.
void require_finite(const Tensor& t, std::string_view what);

void require_shape(const Tensor& t, const Shape& expected, std::string_view what);

double max_abs(std::span<const double> values) noexcept;
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace cdam
