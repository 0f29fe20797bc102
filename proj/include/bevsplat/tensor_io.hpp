#pragma once

#include <stdexcept>
#include <string>

#include "bevsplat/tensor.hpp"

namespace bevsplat {

/// On-disk tensor format ("BEVT"), fixed little-endian layout:
///   offset 0   magic "BEVT"
///   offset 4   version byte (0x01)
///   offset 5   dtype byte (0x01 = f32, 0x02 = f64)
///   offset 6   rank byte
///   offset 7+  zero padding up to offset 12
///   offset 12  rank x u64 dims
///   then       row-major payload
/// Header is 12 + 8*rank bytes; payload offset is computable from the header alone.
enum class IoErrorKind {
    open_failed,
    write_failed,
    bad_magic,
    bad_version,
    bad_dtype,
    bad_header,
    truncated,
};

class IoError : public std::runtime_error {
public:
    IoError(IoErrorKind kind, const std::string& path, const std::string& detail);
    IoErrorKind kind() const { return kind_; }
    const std::string& path() const { return path_; }

private:
    IoErrorKind kind_;
    std::string path_;
};

void write_tensor(const Tensor& t, const std::string& path);
Tensor read_tensor(const std::string& path);

}  // namespace bevsplat
