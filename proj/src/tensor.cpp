#include "bevsplat/tensor.hpp"

#include <cstring>
#include <sstream>
#include <stdexcept>

namespace bevsplat {

namespace {

std::size_t checked_size(const std::vector<std::size_t>& dims) {
    if (dims.empty()) throw std::invalid_argument("Tensor: rank must be >= 1");
    std::size_t n = 1;
    for (std::size_t d : dims) {
        if (d == 0) throw std::invalid_argument("Tensor: every dim must be >= 1");
        n *= d;
    }
    return n;
}

}  // namespace

Tensor Tensor::zeros(std::vector<std::size_t> dims, Dtype dtype) {
    Tensor t;
    t.size_ = checked_size(dims);
    t.dims_ = std::move(dims);
    t.dtype_ = dtype;
    if (dtype == Dtype::f32)
        t.f32_.assign(t.size_, 0.0f);
    else
        t.f64_.assign(t.size_, 0.0);
    return t;
}

Tensor Tensor::from_data(std::vector<std::size_t> dims, const std::vector<double>& values,
                         Dtype dtype) {
    Tensor t = zeros(std::move(dims), dtype);
    if (values.size() != t.size_)
        throw std::invalid_argument("Tensor: data length " + std::to_string(values.size()) +
                                    " does not match shape " + t.shape_string());
    for (std::size_t i = 0; i < values.size(); ++i) t.set(i, values[i]);
    return t;
}

std::size_t Tensor::index(std::initializer_list<std::size_t> coords) const {
    if (coords.size() != dims_.size())
        throw std::invalid_argument("Tensor::index: coordinate rank mismatch");
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t c : coords) {
        if (c >= dims_[axis]) throw std::out_of_range("Tensor::index: coordinate out of range");
        flat = flat * dims_[axis] + c;
        ++axis;
    }
    return flat;
}

std::span<const float> Tensor::data_f32() const {
    if (dtype_ != Dtype::f32) throw std::logic_error("Tensor::data_f32 on f64 tensor");
    return f32_;
}

std::span<const double> Tensor::data_f64() const {
    if (dtype_ != Dtype::f64) throw std::logic_error("Tensor::data_f64 on f32 tensor");
    return f64_;
}

std::span<float> Tensor::data_f32() {
    if (dtype_ != Dtype::f32) throw std::logic_error("Tensor::data_f32 on f64 tensor");
    return f32_;
}

std::span<double> Tensor::data_f64() {
    if (dtype_ != Dtype::f64) throw std::logic_error("Tensor::data_f64 on f32 tensor");
    return f64_;
}

Tensor Tensor::cast(Dtype target) const {
    if (target == dtype_) return *this;
    Tensor t = zeros(dims_, target);
    for (std::size_t i = 0; i < size_; ++i) t.set(i, at(i));
    return t;
}

bool Tensor::bit_equal(const Tensor& other) const {
    if (dims_ != other.dims_ || dtype_ != other.dtype_) return false;
    if (dtype_ == Dtype::f32)
        return std::memcmp(f32_.data(), other.f32_.data(), size_ * sizeof(float)) == 0;
    return std::memcmp(f64_.data(), other.f64_.data(), size_ * sizeof(double)) == 0;
}

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (i) os << 'x';
        os << dims_[i];
    }
    os << ']';
    return os.str();
}

}  // namespace bevsplat
