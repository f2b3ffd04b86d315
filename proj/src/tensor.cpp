#include "dcsam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dcsam/errors.hpp"

namespace dcsam {

std::size_t shape_size(const Shape& shape)
{
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape))
{
    for (std::size_t d : shape_)
        if (d == 0) throw ShapeMismatch("zero-sized dimension in " + shape_string(shape_));
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data))
{
    for (std::size_t d : shape_)
        if (d == 0) throw ShapeMismatch("zero-sized dimension in " + shape_string(shape_));
    if (data_.size() != shape_size(shape_))
        throw ShapeMismatch("data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_string(shape_));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows)
{
    if (rows.size() == 0) throw ShapeMismatch("empty matrix literal");
    const std::size_t cols = rows.begin()->size();
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (const auto& row : rows) {
        if (row.size() != cols) throw ShapeMismatch("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({rows.size(), cols}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values)
{
    return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

std::size_t Tensor::dim(std::size_t axis) const
{
    if (axis >= shape_.size())
        throw ShapeMismatch("axis " + std::to_string(axis) + " out of range for " +
                            shape_string(shape_));
    return shape_[axis];
}

double Tensor::item() const
{
    if (data_.size() != 1) throw ShapeMismatch("item() on " + shape_string(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const
{
    if (shape_size(shape) != data_.size())
        throw ShapeMismatch("cannot reshape " + shape_string(shape_) + " to " +
                            shape_string(shape));
    return Tensor(std::move(shape), data_);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op)
{
    if (t.rank() != rank)
        throw ShapeMismatch(std::string(op) + ": expected rank " + std::to_string(rank) +
                            ", got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op)
{
    if (a.shape() != b.shape())
        throw ShapeMismatch(std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                            shape_string(b.shape()));
}

bool is_finite(const Tensor& t)
{
    return std::all_of(t.data().begin(), t.data().end(),
                       [](double v) { return std::isfinite(v); });
}

void require_finite(const Tensor& t, const char* op)
{
    if (!is_finite(t)) throw NonFiniteInput(std::string(op) + ": input contains NaN or inf");
}

Tensor matmul(const Tensor& a, const Tensor& b)
{
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeMismatch("matmul: inner dimensions " + shape_string(a.shape()) + " x " +
                            shape_string(b.shape()));
    require_finite(a, "matmul");
    require_finite(b, "matmul");
    Tensor out({m, n});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* row = po + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            const double* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
    }
    return out;
}

Tensor transpose(const Tensor& a)
{
    require_rank(a, 2, "transpose");
    const std::size_t r = a.dim(0), c = a.dim(1);
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Tensor masked_softmax_rows(const Tensor& x, const Tensor& bias)
{
    require_rank(x, 2, "masked_softmax_rows");
    require_finite(x, "masked_softmax_rows");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    const bool per_row = bias.rank() == 2;
    if (per_row ? bias.shape() != x.shape() : (bias.rank() != 1 || bias.dim(0) != cols))
        throw ShapeMismatch("masked_softmax_rows: bias " + shape_string(bias.shape()) +
                            " for logits " + shape_string(x.shape()));
    for (double v : bias.data())
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
            throw NonFiniteInput("masked_softmax_rows: bias must be finite or -inf");

    Tensor out({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
        const double* b = bias.data().data() + (per_row ? r * cols : 0);
        double peak = kMaskedBias;
        for (std::size_t c = 0; c < cols; ++c)
            if (b[c] != kMaskedBias) peak = std::max(peak, x.at(r, c) + b[c]);
        if (peak == kMaskedBias)
            throw AllMasked("row " + std::to_string(r) + " has no finite logit");
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double e = b[c] == kMaskedBias ? 0.0 : std::exp(x.at(r, c) + b[c] - peak);
            out.at(r, c) = e;
            total += e;
        }
        for (std::size_t c = 0; c < cols; ++c) out.at(r, c) /= total;
    }
    return out;
}

Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& b)
{
    require_rank(x, 3, "conv1x1");
    require_rank(w, 2, "conv1x1");
    require_rank(b, 1, "conv1x1");
    const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(0);
    if (w.dim(1) != cin || b.dim(0) != cout)
        throw ShapeMismatch("conv1x1: x " + shape_string(x.shape()) + ", w " +
                            shape_string(w.shape()) + ", b " + shape_string(b.shape()));
    require_finite(b, "conv1x1");
    Tensor flat = matmul(w, x.reshaped({cin, h * wd}));
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t p = 0; p < h * wd; ++p) flat.at(o, p) += b[o];
    return flat.reshaped({cout, h, wd});
}

namespace {

template <typename Fn>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, Fn fn)
{
    require_same_shape(a, b, op);
    require_finite(a, op);
    require_finite(b, op);
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i], b[i]);
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b)
{
    return zip(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b)
{
    return zip(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor hadamard(const Tensor& a, const Tensor& b)
{
    return zip(a, b, "hadamard", [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double s)
{
    require_finite(a, "scale");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
    return out;
}

Tensor add_row(const Tensor& a, const Tensor& v)
{
    require_rank(a, 2, "add_row");
    require_rank(v, 1, "add_row");
    if (v.dim(0) != a.dim(1))
        throw ShapeMismatch("add_row: " + shape_string(a.shape()) + " + " +
                            shape_string(v.shape()));
    require_finite(a, "add_row");
    require_finite(v, "add_row");
    Tensor out = a;
    for (std::size_t r = 0; r < a.dim(0); ++r)
        for (std::size_t c = 0; c < a.dim(1); ++c) out.at(r, c) += v[c];
    return out;
}

double sum(const Tensor& a)
{
    require_finite(a, "sum");
    return std::accumulate(a.data().begin(), a.data().end(), 0.0);
}

double max_abs_diff(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "max_abs_diff");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

std::size_t argmax(std::span<const double> values)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

}  // namespace dcsam
