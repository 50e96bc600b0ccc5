#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <vector>

namespace oodkit {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);

/// Dense row-major array of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor vector(std::initializer_list<double> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor identity(std::size_t n);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // rank-2 accessors
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    /// Number of values per leading-axis slice (e.g. per example in a batch).
    std::size_t row_size() const;
    std::span<const double> row(std::size_t i) const;
    std::span<double> row(std::size_t i);

    Tensor reshaped(Shape shape) const;
    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);
/// Concatenates along the leading axis; trailing extents must agree.
Tensor concat_rows(const Tensor& a, const Tensor& b);
/// Gathers leading-axis slices by index.
Tensor take_rows(const Tensor& t, std::span<const std::size_t> indices);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
double dot(std::span<const double> a, std::span<const double> b);

/// Lower-triangular Cholesky factor of (m + ridge*I).
struct SpdFactor {
    std::size_t dim = 0;
    Tensor lower;
};

SpdFactor spd_factor(const Tensor& m, double ridge = 0.0);
Tensor spd_solve(const SpdFactor& f, const Tensor& v);
void spd_solve_into(const SpdFactor& f, std::span<const double> v, std::span<double> out);
/// L * L^T.
Tensor spd_reconstruct(const SpdFactor& f);

/// Ridge used by detectors: 1e-6 * trace(cov) / d, or 1e-6 when the trace is zero.
double default_ridge(const Tensor& cov);

struct ClassStats {
    std::vector<Tensor> means;
    Tensor tied_cov;
};

/// Per-class means and a single covariance pooled over class-centred residuals,
/// normalised by the total sample count.
ClassStats class_stats(std::span<const Tensor> features, std::span<const std::size_t> labels,
                       std::size_t num_classes);

// Binary tensor files: "OODT", u32 version, u32 rank, u64 extents, f64 values, all little-endian.
inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace oodkit
