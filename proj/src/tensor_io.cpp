#include "bevsplat/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace bevsplat {

namespace {

constexpr char kMagic[4] = {'B', 'E', 'V', 'T'};
constexpr std::uint8_t kVersion = 0x01;
constexpr std::size_t kFixedHeader = 12;

const char* kind_name(IoErrorKind k) {
    switch (k) {
        case IoErrorKind::open_failed: return "open failed";
        case IoErrorKind::write_failed: return "write failed";
        case IoErrorKind::bad_magic: return "bad magic";
        case IoErrorKind::bad_version: return "unsupported version";
        case IoErrorKind::bad_dtype: return "unsupported dtype";
        case IoErrorKind::bad_header: return "malformed header";
        case IoErrorKind::truncated: return "truncated payload";
    }
    return "unknown";
}

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

static_assert(std::endian::native == std::endian::little,
              "payload serialization assumes a little-endian host");

}  // namespace

IoError::IoError(IoErrorKind kind, const std::string& path, const std::string& detail)
    : std::runtime_error(std::string(kind_name(kind)) + ": " + path +
                         (detail.empty() ? "" : " (" + detail + ")")),
      kind_(kind),
      path_(path) {}

void write_tensor(const Tensor& t, const std::string& path) {
    std::vector<std::uint8_t> header;
    header.reserve(kFixedHeader + 8 * t.rank());
    header.insert(header.end(), kMagic, kMagic + 4);
    header.push_back(kVersion);
    header.push_back(static_cast<std::uint8_t>(t.dtype()));
    if (t.rank() > 255) throw IoError(IoErrorKind::write_failed, path, "rank exceeds 255");
    header.push_back(static_cast<std::uint8_t>(t.rank()));
    while (header.size() < kFixedHeader) header.push_back(0x00);
    for (std::size_t d : t.dims()) put_u64_le(header, d);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(IoErrorKind::open_failed, path, "");
    out.write(reinterpret_cast<const char*>(header.data()),
              static_cast<std::streamsize>(header.size()));
    if (t.dtype() == Dtype::f32) {
        auto s = t.data_f32();
        out.write(reinterpret_cast<const char*>(s.data()),
                  static_cast<std::streamsize>(s.size() * sizeof(float)));
    } else {
        auto s = t.data_f64();
        out.write(reinterpret_cast<const char*>(s.data()),
                  static_cast<std::streamsize>(s.size() * sizeof(double)));
    }
    if (!out) throw IoError(IoErrorKind::write_failed, path, "");
}

Tensor read_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoErrorKind::open_failed, path, "");

    std::uint8_t fixed[kFixedHeader];
    in.read(reinterpret_cast<char*>(fixed), kFixedHeader);
    if (in.gcount() != static_cast<std::streamsize>(kFixedHeader))
        throw IoError(IoErrorKind::truncated, path, "header shorter than 12 bytes");
    if (std::memcmp(fixed, kMagic, 4) != 0) throw IoError(IoErrorKind::bad_magic, path, "");
    if (fixed[4] != kVersion)
        throw IoError(IoErrorKind::bad_version, path, "version " + std::to_string(fixed[4]));
    if (fixed[5] != 0x01 && fixed[5] != 0x02)
        throw IoError(IoErrorKind::bad_dtype, path, "dtype byte " + std::to_string(fixed[5]));
    const Dtype dtype = static_cast<Dtype>(fixed[5]);
    const std::size_t rank = fixed[6];
    if (rank == 0) throw IoError(IoErrorKind::bad_header, path, "rank 0");
    for (std::size_t i = 7; i < kFixedHeader; ++i)
        if (fixed[i] != 0) throw IoError(IoErrorKind::bad_header, path, "nonzero padding");

    std::vector<std::uint8_t> dim_bytes(8 * rank);
    in.read(reinterpret_cast<char*>(dim_bytes.data()),
            static_cast<std::streamsize>(dim_bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(dim_bytes.size()))
        throw IoError(IoErrorKind::truncated, path, "dims");

    std::vector<std::size_t> dims(rank);
    std::size_t count = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        const std::uint64_t d = get_u64_le(dim_bytes.data() + 8 * i);
        if (d == 0) throw IoError(IoErrorKind::bad_header, path, "zero dim");
        dims[i] = static_cast<std::size_t>(d);
        count *= dims[i];
    }

    Tensor t = Tensor::zeros(dims, dtype);
    const std::size_t bytes = count * dtype_width(dtype);
    char* dst = dtype == Dtype::f32 ? reinterpret_cast<char*>(t.data_f32().data())
                                    : reinterpret_cast<char*>(t.data_f64().data());
    in.read(dst, static_cast<std::streamsize>(bytes));
    if (in.gcount() != static_cast<std::streamsize>(bytes))
        throw IoError(IoErrorKind::truncated, path,
                      "expected " + std::to_string(bytes) + " payload bytes");
    return t;
}

}  // namespace bevsplat
