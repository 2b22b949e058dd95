#include "atnlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "atnlab/error.hpp"

namespace atnlab {

namespace {

void validate_dims(const std::vector<std::int64_t>& dims) {
    require(!dims.empty() && dims.size() <= 4, ErrorCode::InvalidArgument,
            "tensor rank must be between 1 and 4, got " + std::to_string(dims.size()));
    for (auto d : dims) {
        require(d > 0, ErrorCode::InvalidArgument, "tensor extents must be positive");
    }
}

}  // namespace

Shape::Shape(std::initializer_list<std::int64_t> dims) : dims_(dims) { validate_dims(dims_); }

Shape::Shape(std::vector<std::int64_t> dims) : dims_(std::move(dims)) { validate_dims(dims_); }

std::size_t Shape::numel() const noexcept {
    if (dims_.empty()) {
        return 0;
    }
    return static_cast<std::size_t>(
        std::accumulate(dims_.begin(), dims_.end(), std::int64_t{1}, std::multiplies<>()));
}

Shape Shape::prepend(std::int64_t extent) const {
    std::vector<std::int64_t> dims;
    dims.reserve(dims_.size() + 1);
    dims.push_back(extent);
    dims.insert(dims.end(), dims_.begin(), dims_.end());
    return Shape(std::move(dims));
}

Shape Shape::drop_front() const {
    require(dims_.size() >= 2, ErrorCode::InvalidArgument, "cannot drop the only axis of " + to_string());
    return Shape(std::vector<std::int64_t>(dims_.begin() + 1, dims_.end()));
}

std::string Shape::to_string() const {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        out << (i ? "," : "") << dims_[i];
    }
    out << ']';
    return out.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == shape_.numel(), ErrorCode::ShapeMismatch,
            "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                shape_.to_string());
}

Tensor Tensor::reshaped(Shape shape) const& {
    require(shape.numel() == numel(), ErrorCode::ShapeMismatch,
            "cannot reshape " + shape_.to_string() + " to " + shape.to_string());
    return Tensor(std::move(shape), data_);
}

Tensor Tensor::reshaped(Shape shape) && {
    require(shape.numel() == numel(), ErrorCode::ShapeMismatch,
            "cannot reshape " + shape_.to_string() + " to " + shape.to_string());
    return Tensor(std::move(shape), std::move(data_));
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
    const auto rows = static_cast<std::size_t>(shape_[0]);
    require(begin < end && end <= rows, ErrorCode::InvalidArgument, "row slice out of range");
    const std::size_t stride = numel() / rows;
    auto dims = shape_.dims();
    dims[0] = static_cast<std::int64_t>(end - begin);
    return Tensor(Shape(std::move(dims)),
                  std::vector<float>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                     data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
}

Tensor Tensor::row(std::size_t index) const {
    Tensor one = slice_rows(index, index + 1);
    if (shape_.rank() == 1) {
        return one;
    }
    return std::move(one).reshaped(shape_.drop_front());
}

Tensor Tensor::concat_rows(std::span<const Tensor> parts) {
    require(!parts.empty(), ErrorCode::InvalidArgument, "concat of zero tensors");
    std::int64_t rows = 0;
    std::vector<float> data;
    for (const auto& part : parts) {
        require(part.shape().rank() == parts[0].shape().rank(), ErrorCode::ShapeMismatch,
                "concat rank mismatch");
        for (std::size_t axis = 1; axis < part.shape().rank(); ++axis) {
            require(part.shape()[axis] == parts[0].shape()[axis], ErrorCode::ShapeMismatch,
                    "concat extent mismatch: " + part.shape().to_string() + " vs " +
                        parts[0].shape().to_string());
        }
        rows += part.shape()[0];
        data.insert(data.end(), part.data_.begin(), part.data_.end());
    }
    auto dims = parts[0].shape().dims();
    dims[0] = rows;
    return Tensor(Shape(std::move(dims)), std::move(data));
}

Tensor Tensor::stack(std::span<const Tensor> parts) {
    require(!parts.empty(), ErrorCode::InvalidArgument, "stack of zero tensors");
    std::vector<float> data;
    data.reserve(parts.size() * parts[0].numel());
    for (const auto& part : parts) {
        require(part.shape() == parts[0].shape(), ErrorCode::ShapeMismatch,
                "stack shape mismatch: " + part.shape().to_string() + " vs " +
                    parts[0].shape().to_string());
        data.insert(data.end(), part.data_.begin(), part.data_.end());
    }
    return Tensor(parts[0].shape().prepend(static_cast<std::int64_t>(parts.size())), std::move(data));
}

Tensor& Tensor::operator+=(const Tensor& other) {
    require(shape_ == other.shape_, ErrorCode::ShapeMismatch,
            "add: " + shape_.to_string() + " vs " + other.shape_.to_string());
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += other.data_[i];
    }
    return *this;
}

Tensor& Tensor::operator*=(float factor) {
    for (auto& v : data_) {
        v *= factor;
    }
    return *this;
}

float max_abs(const Tensor& t) {
    float m = 0.0f;
    for (float v : t.data()) {
        m = std::max(m, std::fabs(v));
    }
    return m;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
            "max_abs_diff: " + a.shape().to_string() + " vs " + b.shape().to_string());
    float m = 0.0f;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::fabs(a[i] - b[i]));
    }
    return m;
}

std::size_t argmax(std::span<const float> values) {
    require(!values.empty(), ErrorCode::InvalidArgument, "argmax of empty range");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) {
            best = i;
        }
    }
    return best;
}

}  // namespace atnlab
