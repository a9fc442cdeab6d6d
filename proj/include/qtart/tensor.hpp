#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace qtart {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ')';
    return os.str();
}

/// Dense row-major array with an optional gradient buffer of the same length.
template <typename T>
struct BasicTensor {
    Shape shape;
    std::vector<T> data;
    std::optional<std::vector<T>> grad;

    BasicTensor() = default;

    explicit BasicTensor(Shape s, T fill = T{0}) : shape(std::move(s)), data(element_count(shape), fill) {}

    BasicTensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (element_count(shape) != data.size()) {
            throw std::invalid_argument("tensor: shape " + to_string(shape) + " does not match " +
                                        std::to_string(data.size()) + " values");
        }
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    std::span<T> values() { return data; }
    std::span<const T> values() const { return data; }

    void enable_grad() { grad.emplace(data.size(), T{0}); }

    /// Number of values in one leading-axis slice (one sample of a batch).
    std::size_t stride0() const { return shape.empty() || shape[0] == 0 ? 0 : data.size() / shape[0]; }

    template <typename U>
    BasicTensor<U> cast() const {
        BasicTensor<U> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i) {
            out.data[i] = static_cast<U>(data[i]);
        }
        return out;
    }
};

using Tensor = BasicTensor<float>;

/// Gathers the leading-axis slices listed in `rows` into a new tensor.
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& src, std::span<const std::size_t> rows) {
    Shape shape = src.shape;
    shape.at(0) = rows.size();
    BasicTensor<T> out(shape);
    const std::size_t stride = src.stride0();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto first = src.data.begin() + static_cast<std::ptrdiff_t>(rows[r] * stride);
        std::copy(first, first + static_cast<std::ptrdiff_t>(stride),
                  out.data.begin() + static_cast<std::ptrdiff_t>(r * stride));
    }
    return out;
}

}  // namespace qtart
