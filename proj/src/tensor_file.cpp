#include "atq/tensor_file.hpp"

#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

#include "atq/fp16.hpp"

namespace atq {

namespace {

constexpr char kMagic[4] = {'A', 'T', 'Q', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderSize = 4 + 4 + 1 + 3 + 8 + 8;

std::size_t element_size(Precision p) {
    switch (p) {
        case Precision::Fp64: return 8;
        case Precision::Fp32: return 4;
        case Precision::Fp16: return 2;
    }
    throw FormatError("unknown dtype");
}

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
}

template <typename T>
T read_le(const std::uint8_t* p) {
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        value |= static_cast<T>(p[i]) << (8 * i);
    }
    return value;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(size));
    if (size > 0) {
        in.read(reinterpret_cast<char*>(buf.data()), size);
    }
    if (!in) {
        throw IoError("read failed for " + path);
    }
    return buf;
}

struct ParsedHeader {
    Precision precision;
    std::uint64_t rows;
    std::uint64_t cols;
};

ParsedHeader parse_header(const std::vector<std::uint8_t>& buf, const std::string& path) {
    if (buf.size() < kHeaderSize) {
        throw FormatError("truncated header in " + path);
    }
    if (std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw FormatError("bad magic in " + path);
    }
    const auto version = read_le<std::uint32_t>(buf.data() + 4);
    if (version != kVersion) {
        throw FormatError("unsupported version " + std::to_string(version) + " in " + path);
    }
    const std::uint8_t dtype = buf[8];
    if (dtype > 2) {
        throw FormatError("unknown dtype " + std::to_string(dtype) + " in " + path);
    }
    ParsedHeader h;
    h.precision = static_cast<Precision>(dtype);
    h.rows = read_le<std::uint64_t>(buf.data() + 12);
    h.cols = read_le<std::uint64_t>(buf.data() + 20);
    return h;
}

Matrix decode_payload(const std::vector<std::uint8_t>& buf, const ParsedHeader& h,
                      const std::string& path) {
    const std::uint64_t count = h.rows * h.cols;
    if (h.cols != 0 && count / h.cols != h.rows) {
        throw FormatError("dimension overflow in " + path);
    }
    const std::size_t esize = element_size(h.precision);
    const std::uint64_t expected = count * esize;
    if (buf.size() - kHeaderSize != expected) {
        throw CorruptionError("payload of " + path + " has " +
                              std::to_string(buf.size() - kHeaderSize) + " bytes, header implies " +
                              std::to_string(expected));
    }
    Matrix m(static_cast<Index>(h.rows), static_cast<Index>(h.cols));
    const std::uint8_t* p = buf.data() + kHeaderSize;
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            double v = 0.0;
            switch (h.precision) {
                case Precision::Fp64: {
                    std::uint64_t bits = read_le<std::uint64_t>(p);
                    double d;
                    std::memcpy(&d, &bits, 8);
                    v = d;
                    break;
                }
                case Precision::Fp32: {
                    std::uint32_t bits = read_le<std::uint32_t>(p);
                    float f;
                    std::memcpy(&f, &bits, 4);
                    v = static_cast<double>(f);
                    break;
                }
                case Precision::Fp16:
                    v = fp16::double_from_bits(read_le<std::uint16_t>(p));
                    break;
            }
            if (!std::isfinite(v)) {
                throw ValidationError("non-finite value at (" + std::to_string(i) + "," +
                                      std::to_string(j) + ") in " + path);
            }
            m(i, j) = v;
            p += esize;
        }
    }
    return m;
}

} // namespace

Matrix load_matrix(const std::string& path) {
    const auto buf = read_file(path);
    const auto h = parse_header(buf, path);
    if (h.rows == 0 || h.cols == 0) {
        throw FormatError("zero dimension in " + path);
    }
    return decode_payload(buf, h, path);
}

void store_matrix(const Matrix& m, const std::string& path, Precision precision) {
    if (m.rows() < 1 || m.cols() < 1) {
        throw ValidationError("matrix must be at least 1x1");
    }
    if (!m.allFinite()) {
        throw ValidationError("matrix contains non-finite values");
    }
    std::vector<std::uint8_t> buf;
    buf.reserve(kHeaderSize + static_cast<std::size_t>(m.size()) * element_size(precision));
    buf.insert(buf.end(), kMagic, kMagic + 4);
    append_le<std::uint32_t>(buf, kVersion);
    buf.push_back(static_cast<std::uint8_t>(precision));
    buf.insert(buf.end(), {0, 0, 0});
    append_le<std::uint64_t>(buf, static_cast<std::uint64_t>(m.rows()));
    append_le<std::uint64_t>(buf, static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            switch (precision) {
                case Precision::Fp64: {
                    std::uint64_t bits;
                    std::memcpy(&bits, &v, 8);
                    append_le<std::uint64_t>(buf, bits);
                    break;
                }
                case Precision::Fp32: {
                    const float f = static_cast<float>(v);
                    if (!std::isfinite(f)) {
                        throw ValidationError("value " + std::to_string(v) +
                                              " exceeds fp32 range");
                    }
                    std::uint32_t bits;
                    std::memcpy(&bits, &f, 4);
                    append_le<std::uint32_t>(buf, bits);
                    break;
                }
                case Precision::Fp16:
                    append_le<std::uint16_t>(buf, fp16::bits_from_double(v));
                    break;
            }
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path + " for writing");
    }
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    out.flush();
    if (!out) {
        throw IoError("write failed for " + path);
    }
}

CalibrationBatch ingest_calibration(const std::string& path, std::optional<Index> expected_dim) {
    const auto buf = read_file(path);
    const auto h = parse_header(buf, path);
    if (h.rows == 0) {
        throw ValidationError("calibration file " + path +
                              " is empty; at least one sample is required");
    }
    if (h.cols == 0) {
        throw FormatError("zero dimension in " + path);
    }
    CalibrationBatch batch{decode_payload(buf, h, path)};
    if (expected_dim && batch.dim() != *expected_dim) {
        throw ValidationError("calibration dimension " + std::to_string(batch.dim()) +
                              " does not match weight columns " + std::to_string(*expected_dim));
    }
    return batch;
}

} // namespace atq
