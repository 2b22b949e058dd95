#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace atnlab {

/// Extents of a dense row-major tensor. Rank is limited to 1..4; scalars are
/// represented as shape [1].
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<std::int64_t> dims);
    explicit Shape(std::vector<std::int64_t> dims);

    std::size_t rank() const noexcept { return dims_.size(); }
    std::int64_t operator[](std::size_t axis) const { return dims_.at(axis); }
    const std::vector<std::int64_t>& dims() const noexcept { return dims_; }
    std::size_t numel() const noexcept;

    /// Shape with a leading extent prepended.
    Shape prepend(std::int64_t extent) const;
    /// Shape with the leading axis removed.
    Shape drop_front() const;

    std::string to_string() const;

    friend bool operator==(const Shape&, const Shape&) = default;

private:
    std::vector<std::int64_t> dims_;
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor scalar(float value) { return Tensor(Shape{1}, std::vector<float>{value}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    const std::vector<float>& values() const noexcept { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    /// Same data under a new shape with equal element count.
    Tensor reshaped(Shape shape) const&;
    Tensor reshaped(Shape shape) &&;

    /// Copy of rows [begin, end) along the leading axis.
    Tensor slice_rows(std::size_t begin, std::size_t end) const;
    /// Row `index` along the leading axis with that axis dropped.
    Tensor row(std::size_t index) const;
    /// Joins tensors along the existing leading axis.
    static Tensor concat_rows(std::span<const Tensor> parts);
    /// Joins equally shaped tensors along a new leading axis.
    static Tensor stack(std::span<const Tensor> parts);

    Tensor& operator+=(const Tensor& other);
    Tensor& operator*=(float factor);

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<float> data_;
};

float max_abs(const Tensor& t);
float max_abs_diff(const Tensor& a, const Tensor& b);
std::size_t argmax(std::span<const float> values);

}  // namespace atnlab
