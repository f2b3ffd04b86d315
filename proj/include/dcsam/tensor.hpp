#pragma once

#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace dcsam {

using Shape = std::vector<std::size_t>;

/// The only non-finite value any operation accepts, and only as an attention bias.
inline constexpr double kMaskedBias = -std::numeric_limits<double>::infinity();

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Plain value type: copies are deep.
class Tensor {
   public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    /// Builds a rank-2 tensor from nested rows; all rows must share a length.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor vector(std::initializer_list<double> values);
    static Tensor scalar(double value);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t ch, std::size_t y, std::size_t x) const
    {
        return data_[(ch * shape_[1] + y) * shape_[2] + x];
    }
    double& at(std::size_t ch, std::size_t y, std::size_t x)
    {
        return data_[(ch * shape_[1] + y) * shape_[2] + x];
    }

    /// Scalar value of a one-element tensor.
    double item() const;

    Tensor reshaped(Shape shape) const;

    friend bool operator==(const Tensor& a, const Tensor& b)
    {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

   private:
    Shape shape_;
    std::vector<double> data_;
};

// Validation helpers shared by every operation.
void require_rank(const Tensor& t, std::size_t rank, const char* op);
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);
void require_finite(const Tensor& t, const char* op);
bool is_finite(const Tensor& t);

// Untracked kernels. Every one rejects non-finite input except where noted.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Row-wise softmax of x + bias. bias is r×c or broadcast c; entries may be kMaskedBias.
/// Masked positions come out exactly 0. Throws AllMasked if a row has no finite logit.
Tensor masked_softmax_rows(const Tensor& x, const Tensor& bias);

/// Per-pixel affine map: out[o,p] = sum_i w[o,i] x[i,p] + b[o].
Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// a[N×d] + v[d] on every row.
Tensor add_row(const Tensor& a, const Tensor& v);
double sum(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Index of the largest entry in [first, last); ties resolve to the smallest index.
std::size_t argmax(std::span<const double> values);

}  // namespace dcsam
