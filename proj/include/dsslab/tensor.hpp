#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dsslab/error.hpp"

namespace dsslab {

/// Dense row-major tensor of doubles. Value semantics throughout: copies are
/// deep, there are no views, and every constructor that accepts data rejects
/// non-finite entries.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape)
        : shape_(std::move(shape)), data_(checked_size(shape_), 0.0) {}

    Tensor(std::vector<int> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_size(shape_) != data_.size())
            throw std::invalid_argument("Tensor: shape/data size mismatch");
        for (double v : data_)
            if (!std::isfinite(v))
                throw std::invalid_argument("Tensor: non-finite entry on construction");
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, double value) {
        Tensor t(std::move(shape));
        for (double& v : t.data_) v = value;
        if (!std::isfinite(value))
            throw std::invalid_argument("Tensor: non-finite fill value");
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    int extent(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    // 2-D/4-D index helpers for the handful of shapes the layers use.
    double& at2(int r, int c) {
        return data_[static_cast<std::size_t>(r) * shape_[1] + c];
    }
    double at2(int r, int c) const {
        return data_[static_cast<std::size_t>(r) * shape_[1] + c];
    }
    double& at4(int n, int c, int h, int w) {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    double at4(int n, int c, int h, int w) const {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    /// Reinterprets the buffer under a new shape with equal element count.
    Tensor reshaped(std::vector<int> new_shape) const {
        if (checked_size(new_shape) != data_.size())
            throw std::invalid_argument("Tensor::reshaped: element count mismatch");
        Tensor t;
        t.shape_ = std::move(new_shape);
        t.data_ = data_;
        return t;
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Tensor& operator+=(const Tensor& rhs) {
        require_same_shape(rhs, "operator+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += rhs.data_[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& rhs) {
        require_same_shape(rhs, "operator-=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= rhs.data_[i];
        return *this;
    }
    Tensor& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    friend Tensor operator+(Tensor lhs, const Tensor& rhs) { lhs += rhs; return lhs; }
    friend Tensor operator-(Tensor lhs, const Tensor& rhs) { lhs -= rhs; return lhs; }
    friend Tensor operator*(Tensor lhs, double s) { lhs *= s; return lhs; }
    friend Tensor operator*(double s, Tensor rhs) { rhs *= s; return rhs; }

    /// this += scale * rhs
    void axpy(double scale, const Tensor& rhs) {
        require_same_shape(rhs, "axpy");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * rhs.data_[i];
    }

    void fill(double value) {
        for (double& v : data_) v = value;
    }

    bool operator==(const Tensor& rhs) const {
        return shape_ == rhs.shape_ && data_ == rhs.data_;
    }

private:
    static std::size_t checked_size(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int e : shape) {
            if (e <= 0) throw std::invalid_argument("Tensor: non-positive extent");
            n *= static_cast<std::size_t>(e);
        }
        return shape.empty() ? 0 : n;
    }

    void require_same_shape(const Tensor& other, const char* op) const {
        if (!same_shape(other))
            throw std::invalid_argument(std::string("Tensor::") + op + ": shape mismatch");
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

/// sqrt of the sum of squared entries.
inline double frobenius_norm(const Tensor& w) {
    if (w.empty()) throw std::invalid_argument("frobenius_norm: empty tensor");
    double acc = 0.0;
    for (double v : w.data()) acc += v * v;
    return std::sqrt(acc);
}

/// Flattened inner product <a, b>.
inline double inner_product(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("inner_product: shape mismatch");
    double acc = 0.0;
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::size_t i = 0; i < ad.size(); ++i) acc += ad[i] * bd[i];
    return acc;
}

/// Row-wise concatenation along axis 0; trailing extents must agree.
inline Tensor concat_axis0(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank() || a.rank() < 1)
        throw std::invalid_argument("concat_axis0: rank mismatch");
    for (int i = 1; i < a.rank(); ++i)
        if (a.extent(i) != b.extent(i))
            throw std::invalid_argument("concat_axis0: trailing extent mismatch");
    std::vector<int> shape = a.shape();
    shape[0] += b.extent(0);
    Tensor out(shape);
    auto& od = out.data();
    std::copy(a.data().begin(), a.data().end(), od.begin());
    std::copy(b.data().begin(), b.data().end(), od.begin() + static_cast<std::ptrdiff_t>(a.size()));
    return out;
}

/// Copies rows [begin, end) along axis 0.
inline Tensor slice_axis0(const Tensor& t, int begin, int end) {
    if (t.rank() < 1 || begin < 0 || end > t.extent(0) || begin >= end)
        throw std::invalid_argument("slice_axis0: bad row range");
    std::vector<int> shape = t.shape();
    shape[0] = end - begin;
    std::size_t row = t.size() / static_cast<std::size_t>(t.extent(0));
    Tensor out(shape);
    std::copy(t.data().begin() + static_cast<std::ptrdiff_t>(row * begin),
              t.data().begin() + static_cast<std::ptrdiff_t>(row * end),
              out.data().begin());
    return out;
}

}  // namespace dsslab
