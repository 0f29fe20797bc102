#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace bevsplat {

enum class Dtype : std::uint8_t { f32 = 1, f64 = 2 };

inline std::size_t dtype_width(Dtype d) { return d == Dtype::f32 ? 4 : 8; }
inline const char* dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

/// Dense row-major multi-dimensional container. Values are stored either as
/// f32 (production path) or f64 (oracle path); element access always goes
/// through double, rounding on store when the dtype is f32.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> dims, Dtype dtype = Dtype::f32);
    static Tensor from_data(std::vector<std::size_t> dims, const std::vector<double>& values,
                            Dtype dtype = Dtype::f32);

    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t size() const { return size_; }
    Dtype dtype() const { return dtype_; }

    double at(std::size_t flat) const {
        return dtype_ == Dtype::f32 ? static_cast<double>(f32_[flat]) : f64_[flat];
    }
    void set(std::size_t flat, double v) {
        if (dtype_ == Dtype::f32)
            f32_[flat] = static_cast<float>(v);
        else
            f64_[flat] = v;
    }
    void add(std::size_t flat, double v) { set(flat, at(flat) + v); }

    /// Flat index of a multi-dimensional coordinate (row-major).
    std::size_t index(std::initializer_list<std::size_t> coords) const;

    double at(std::initializer_list<std::size_t> coords) const { return at(index(coords)); }
    void set(std::initializer_list<std::size_t> coords, double v) { set(index(coords), v); }

    std::span<const float> data_f32() const;
    std::span<const double> data_f64() const;
    std::span<float> data_f32();
    std::span<double> data_f64();

    Tensor cast(Dtype target) const;

    /// Bitwise equality: same dims, dtype, and payload bits.
    bool bit_equal(const Tensor& other) const;

    std::string shape_string() const;

private:
    std::vector<std::size_t> dims_;
    std::size_t size_ = 0;
    Dtype dtype_ = Dtype::f32;
    std::vector<float> f32_;
    std::vector<double> f64_;
};

}  // namespace bevsplat
