#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "ircnn/error.hpp"

namespace ircnn {

/// NCHW extents.
struct Shape {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    constexpr std::size_t size() const noexcept { return n * c * h * w; }
    constexpr std::size_t plane() const noexcept { return h * w; }
    constexpr std::size_t sample() const noexcept { return c * h * w; }

    friend constexpr bool operator==(const Shape&, const Shape&) = default;

    std::string str() const;
};

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

template <typename T>
inline constexpr DType dtype_of = std::is_same_v<T, float> ? DType::f32 : DType::f64;

std::string_view dtype_name(DType d);

/// Dense rank-4 tensor, row-major NCHW. The buffer length always equals
/// `shape().size()`.
template <typename T>
class Tensor {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                  "Tensor element type must be float or double");

public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{0})
        : shape_(shape), data_(shape.size(), fill) {}

    Tensor(Shape shape, std::vector<T> data)
        : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.size()) {
            throw ConfigError("tensor buffer of length " + std::to_string(data_.size()) +
                              " does not match shape " + shape_.str());
        }
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
        return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
        return data_[offset(n, c, h, w)];
    }
    const T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
        return data_[offset(n, c, h, w)];
    }

    /// Pointer to the (n, c) feature map.
    T* plane(std::size_t n, std::size_t c) noexcept { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
    const T* plane(std::size_t n, std::size_t c) const noexcept {
        return data_.data() + (n * shape_.c + c) * shape_.plane();
    }

    T* sample(std::size_t n) noexcept { return data_.data() + n * shape_.sample(); }
    const T* sample(std::size_t n) const noexcept { return data_.data() + n * shape_.sample(); }

    void fill(T v) noexcept { std::fill(data_.begin(), data_.end(), v); }

    /// Same buffer, new extents of equal element count.
    Tensor reshaped(Shape s) const {
        if (s.size() != shape_.size()) {
            throw ConfigError("cannot reshape " + shape_.str() + " to " + s.str());
        }
        Tensor out;
        out.shape_ = s;
        out.data_ = data_;
        return out;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_{};
    std::vector<T> data_;
};

/// Throws NumericError naming `where` if any element is NaN or Inf.
template <typename T>
void check_finite(const Tensor<T>& t, std::string_view where) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(t[i])) {
            throw NumericError("non-finite value " + std::to_string(t[i]) + " at element " +
                               std::to_string(i) + " of " + std::string(where) + " output " +
                               t.shape().str());
        }
    }
}

/// In-place `a += b`; shapes must match.
template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ConfigError("elementwise add of " + a.shape().str() + " and " + b.shape().str());
    }
    T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

} // namespace ircnn
