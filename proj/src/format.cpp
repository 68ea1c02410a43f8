#include "atq/format.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "atq/fp16.hpp"

namespace atq {

namespace {

constexpr char kMagic[4] = {'A', 'T', 'Q', 'Z'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kFlagInt8 = 0x01;
constexpr std::uint8_t kFlagLowrank = 0x02;
constexpr std::size_t kSectionCount = 4;
// magic + version + N + M + d + n + k + flags + r
constexpr std::uint64_t kHeaderBytes = 4 + 4 + 8 + 8 + 2 + 4 + 4 + 1 + 4;
constexpr std::uint64_t kTableBytes = 4 + kSectionCount * 16;

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
}

template <typename T>
void patch_le(std::vector<std::uint8_t>& out, std::size_t pos, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out[pos + i] = static_cast<std::uint8_t>(value >> (8 * i));
    }
}

struct Cursor {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;

    void require(std::size_t count) const {
        if (pos + count > buf.size()) {
            throw CorruptionError("container truncated at byte " + std::to_string(pos));
        }
    }

    template <typename T>
    T read() {
        require(sizeof(T));
        T value = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            value |= static_cast<T>(buf[pos + i]) << (8 * i);
        }
        pos += sizeof(T);
        return value;
    }
};

// LSB-first bit packing within bytes.
class BitWriter {
public:
    explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

    void put(std::uint32_t value, int bits) {
        for (int i = 0; i < bits; ++i) {
            if (fill_ == 0) {
                out_.push_back(0);
            }
            if ((value >> i) & 1u) {
                out_.back() |= static_cast<std::uint8_t>(1u << fill_);
            }
            fill_ = (fill_ + 1) % 8;
        }
    }

    void pad_to_byte() { fill_ = 0; }

private:
    std::vector<std::uint8_t>& out_;
    int fill_ = 0;
};

class BitReader {
public:
    BitReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    std::uint32_t get(int bits) {
        std::uint32_t value = 0;
        for (int i = 0; i < bits; ++i) {
            const std::size_t byte = bit_ / 8;
            if (byte >= size_) {
                throw CorruptionError("index section truncated");
            }
            value |= static_cast<std::uint32_t>((data_[byte] >> (bit_ % 8)) & 1u) << i;
            ++bit_;
        }
        return value;
    }

    // Consumes padding up to the next byte boundary, requiring zero bits.
    void align_checked() {
        while (bit_ % 8 != 0) {
            const std::size_t byte = bit_ / 8;
            if (byte >= size_) {
                throw CorruptionError("index section truncated");
            }
            if ((data_[byte] >> (bit_ % 8)) & 1u) {
                throw CorruptionError("nonzero padding bits in index section");
            }
            ++bit_;
        }
    }

    std::size_t bytes_consumed() const { return (bit_ + 7) / 8; }

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t bit_ = 0;
};

struct Layout {
    std::uint64_t index_bytes = 0;
    std::uint64_t codebook_bytes = 0;
    std::uint64_t lowrank_a_bytes = 0;
    std::uint64_t lowrank_b_bytes = 0;

    std::uint64_t total() const {
        return kHeaderBytes + kTableBytes + index_bytes + codebook_bytes + lowrank_a_bytes +
               lowrank_b_bytes;
    }
};

Layout compute_layout(const QuantConfig& cfg, Index rows, Index cols) {
    Layout lay;
    const std::uint64_t groups = static_cast<std::uint64_t>((cols + cfg.d - 1) / cfg.d);
    const std::uint64_t blocks = static_cast<std::uint64_t>((rows + cfg.k - 1) / cfg.k);
    const int w = index_bits_per_entry(cfg.n);
    for (std::uint64_t b = 0; b < blocks; ++b) {
        const std::uint64_t nb = std::min<std::uint64_t>(
            static_cast<std::uint64_t>(cfg.k), static_cast<std::uint64_t>(rows) - b * cfg.k);
        lay.index_bytes += (nb * groups * static_cast<std::uint64_t>(w) + 7) / 8;
    }
    // column widths sum to cols per block
    if (cfg.codebook_int8) {
        lay.codebook_bytes =
            blocks * (4 * static_cast<std::uint64_t>(cols) +
                      static_cast<std::uint64_t>(cfg.n) * static_cast<std::uint64_t>(cols));
    } else {
        lay.codebook_bytes =
            blocks * 2 * static_cast<std::uint64_t>(cfg.n) * static_cast<std::uint64_t>(cols);
    }
    if (cfg.lowrank_r > 0) {
        lay.lowrank_a_bytes = 2 * static_cast<std::uint64_t>(rows) *
                              static_cast<std::uint64_t>(cfg.lowrank_r);
        lay.lowrank_b_bytes = 2 * static_cast<std::uint64_t>(cfg.lowrank_r) *
                              static_cast<std::uint64_t>(cols);
    }
    return lay;
}

void append_fp16_matrix(std::vector<std::uint8_t>& out, const Matrix& m) {
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            append_le<std::uint16_t>(out, fp16::bits_from_double(m(i, j)));
        }
    }
}

Matrix read_fp16_matrix(Cursor& cur, Index rows, Index cols, const char* what) {
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
            const double v = fp16::double_from_bits(cur.read<std::uint16_t>());
            if (!std::isfinite(v)) {
                throw CorruptionError(std::string("non-finite value in ") + what);
            }
            m(i, j) = v;
        }
    }
    return m;
}

} // namespace

int index_bits_per_entry(Index n) {
    if (n < 1) {
        throw ValidationError("codebook size must be at least 1");
    }
    int bits = 0;
    while ((Index{1} << bits) < n) {
        ++bits;
    }
    return bits;
}

std::uint64_t serialized_size(const QuantConfig& cfg, Index rows, Index cols) {
    return compute_layout(cfg, rows, cols).total();
}

BitReport bits_per_weight(const QuantConfig& cfg, Index rows, Index cols) {
    BitReport report;
    report.b_c = (cfg.codebook_int8 ? 8.0 : 16.0) * static_cast<double>(cfg.n) /
                 static_cast<double>(cfg.k);
    report.b_i = static_cast<double>(index_bits_per_entry(cfg.n)) / static_cast<double>(cfg.d);
    if (rows == 0 && cols == 0) {
        if (cfg.lowrank_r != 0) {
            throw ValidationError("low-rank bit accounting needs the matrix shape");
        }
        report.b_lr = 0.0;
        report.b_total = report.b_c + report.b_i;
        report.file_overhead_bytes = std::numeric_limits<double>::quiet_NaN();
        return report;
    }
    const double nm = static_cast<double>(rows) * static_cast<double>(cols);
    report.b_lr = cfg.lowrank_r > 0
                      ? 16.0 * static_cast<double>(cfg.lowrank_r) *
                            (static_cast<double>(rows) + static_cast<double>(cols)) / nm
                      : 0.0;
    report.b_total = report.b_c + report.b_i + report.b_lr;
    report.file_overhead_bytes =
        static_cast<double>(serialized_size(cfg, rows, cols)) - report.b_total * nm / 8.0;
    return report;
}

std::vector<std::uint8_t> serialize(const QuantizedLayer& layer) {
    const QuantConfig& cfg = layer.config;
    const Index num_groups = layer.num_groups();
    const Index num_blocks = layer.num_blocks();
    const int w = index_bits_per_entry(cfg.n);
    const Layout lay = compute_layout(cfg, layer.rows, layer.cols);

    std::vector<std::uint8_t> out;
    out.reserve(static_cast<std::size_t>(lay.total()));
    out.insert(out.end(), kMagic, kMagic + 4);
    append_le<std::uint32_t>(out, kVersion);
    append_le<std::uint64_t>(out, static_cast<std::uint64_t>(layer.rows));
    append_le<std::uint64_t>(out, static_cast<std::uint64_t>(layer.cols));
    append_le<std::uint16_t>(out, static_cast<std::uint16_t>(cfg.d));
    append_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.n));
    append_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.k));
    std::uint8_t flags = 0;
    if (cfg.codebook_int8) {
        flags |= kFlagInt8;
    }
    if (cfg.lowrank_r > 0) {
        flags |= kFlagLowrank;
    }
    out.push_back(flags);
    append_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.lowrank_r));
    append_le<std::uint32_t>(out, static_cast<std::uint32_t>(kSectionCount));
    const std::size_t table_pos = out.size();
    for (std::size_t i = 0; i < kSectionCount * 16; ++i) {
        out.push_back(0);
    }

    std::uint64_t offsets[kSectionCount] = {0, 0, 0, 0};
    std::uint64_t lengths[kSectionCount] = {0, 0, 0, 0};

    // INDEX
    offsets[0] = out.size();
    {
        BitWriter bw(out);
        for (Index b = 0; b < num_blocks; ++b) {
            const Index r0 = b * cfg.k;
            for (Index i = 0; i < layer.block_rows(b); ++i) {
                for (Index g = 0; g < num_groups; ++g) {
                    const std::uint32_t entry = layer.index(r0 + i, g);
                    if (entry >= static_cast<std::uint32_t>(cfg.n)) {
                        throw ValidationError("index entry out of range");
                    }
                    bw.put(entry, w);
                }
            }
            bw.pad_to_byte();
        }
    }
    lengths[0] = out.size() - offsets[0];

    // CODEBOOK
    offsets[1] = out.size();
    for (Index b = 0; b < num_blocks; ++b) {
        for (Index g = 0; g < num_groups; ++g) {
            const CellCodebook& cell = layer.cell(b, g);
            const Index width = layer.group_width(g);
            if (cfg.codebook_int8) {
                for (Index l = 0; l < width; ++l) {
                    append_le<std::uint16_t>(out, fp16::bits_from_double(cell.mins(l)));
                    append_le<std::uint16_t>(out, fp16::bits_from_double(cell.maxs(l)));
                }
                out.insert(out.end(), cell.bytes.begin(), cell.bytes.end());
            } else {
                append_fp16_matrix(out, cell.values);
            }
        }
    }
    lengths[1] = out.size() - offsets[1];

    if (cfg.lowrank_r > 0) {
        offsets[2] = out.size();
        append_fp16_matrix(out, layer.lowrank_a);
        lengths[2] = out.size() - offsets[2];
        offsets[3] = out.size();
        append_fp16_matrix(out, layer.lowrank_b);
        lengths[3] = out.size() - offsets[3];
    }

    for (std::size_t s = 0; s < kSectionCount; ++s) {
        if (lengths[s] == 0) {
            offsets[s] = 0;
        }
        patch_le<std::uint64_t>(out, table_pos + s * 16, offsets[s]);
        patch_le<std::uint64_t>(out, table_pos + s * 16 + 8, lengths[s]);
    }
    if (out.size() != lay.total()) {
        throw NumericalError("internal serialization size mismatch");
    }
    return out;
}

namespace {

LayerHeader parse_header(Cursor& cur) {
    cur.require(4);
    if (std::memcmp(cur.buf.data(), kMagic, 4) != 0) {
        throw FormatError("bad magic");
    }
    cur.pos = 4;
    const auto version = cur.read<std::uint32_t>();
    if (version != kVersion) {
        throw FormatError("unsupported version " + std::to_string(version));
    }
    const auto rows = cur.read<std::uint64_t>();
    const auto cols = cur.read<std::uint64_t>();
    const auto d = cur.read<std::uint16_t>();
    const auto n = cur.read<std::uint32_t>();
    const auto k = cur.read<std::uint32_t>();
    const auto flags = cur.read<std::uint8_t>();
    const auto r = cur.read<std::uint32_t>();
    if (rows == 0 || cols == 0 || d == 0 || n == 0 || k == 0) {
        throw FormatError("zero field in header");
    }
    if (rows > static_cast<std::uint64_t>(std::numeric_limits<Index>::max() / 8) ||
        cols > static_cast<std::uint64_t>(std::numeric_limits<Index>::max() / 8)) {
        throw FormatError("dimension overflow");
    }
    if ((flags & ~(kFlagInt8 | kFlagLowrank)) != 0) {
        throw FormatError("unknown flag bits");
    }
    const bool lowrank = (flags & kFlagLowrank) != 0;
    if (lowrank != (r > 0)) {
        throw FormatError("low-rank flag inconsistent with r");
    }
    if (r > std::min(rows, cols)) {
        throw FormatError("rank exceeds matrix dimensions");
    }
    if (n > k) {
        throw FormatError("header requires n <= k");
    }
    if (d > cols) {
        throw FormatError("entry dimension exceeds columns");
    }
    LayerHeader header;
    header.rows = static_cast<Index>(rows);
    header.cols = static_cast<Index>(cols);
    header.config.d = d;
    header.config.n = n;
    header.config.k = k;
    header.config.codebook_int8 = (flags & kFlagInt8) != 0;
    header.config.lowrank_r = r;
    return header;
}

} // namespace

QuantizedLayer deserialize(const std::vector<std::uint8_t>& bytes) {
    Cursor cur{bytes};
    const LayerHeader header = parse_header(cur);
    const bool int8_mode = header.config.codebook_int8;
    const bool lowrank = header.config.lowrank_r > 0;
    const auto n = static_cast<std::uint32_t>(header.config.n);
    const auto r = header.config.lowrank_r;
    const auto section_count = cur.read<std::uint32_t>();
    if (section_count != kSectionCount) {
        throw FormatError("unexpected section count " + std::to_string(section_count));
    }

    QuantizedLayer layer;
    layer.rows = header.rows;
    layer.cols = header.cols;
    layer.config = header.config;

    const Layout lay = compute_layout(layer.config, layer.rows, layer.cols);
    std::uint64_t offsets[kSectionCount];
    std::uint64_t lengths[kSectionCount];
    for (std::size_t s = 0; s < kSectionCount; ++s) {
        offsets[s] = cur.read<std::uint64_t>();
        lengths[s] = cur.read<std::uint64_t>();
    }
    const std::uint64_t expected_lengths[kSectionCount] = {
        lay.index_bytes, lay.codebook_bytes, lay.lowrank_a_bytes, lay.lowrank_b_bytes};
    std::uint64_t running = kHeaderBytes + kTableBytes;
    for (std::size_t s = 0; s < kSectionCount; ++s) {
        if (lengths[s] != expected_lengths[s]) {
            throw CorruptionError("section " + std::to_string(s) + " has " +
                                  std::to_string(lengths[s]) + " bytes, expected " +
                                  std::to_string(expected_lengths[s]));
        }
        const std::uint64_t expect_offset = lengths[s] == 0 ? 0 : running;
        if (offsets[s] != expect_offset) {
            throw CorruptionError("section " + std::to_string(s) + " offset mismatch");
        }
        running += lengths[s];
    }
    if (bytes.size() != lay.total()) {
        throw CorruptionError("file has " + std::to_string(bytes.size()) +
                              " bytes, layout implies " + std::to_string(lay.total()));
    }

    const Index num_groups = layer.num_groups();
    const Index num_blocks = layer.num_blocks();
    const int w = index_bits_per_entry(layer.config.n);

    layer.index.setZero(layer.rows, num_groups);
    {
        BitReader br(bytes.data() + offsets[0], static_cast<std::size_t>(lengths[0]));
        for (Index b = 0; b < num_blocks; ++b) {
            const Index r0 = b * layer.config.k;
            for (Index i = 0; i < layer.block_rows(b); ++i) {
                for (Index g = 0; g < num_groups; ++g) {
                    const std::uint32_t entry = br.get(w);
                    if (entry >= n) {
                        throw CorruptionError("index entry " + std::to_string(entry) +
                                              " out of range for n=" + std::to_string(n));
                    }
                    layer.index(r0 + i, g) = entry;
                }
            }
            br.align_checked();
        }
    }

    cur.pos = static_cast<std::size_t>(offsets[1]);
    layer.codebooks.resize(static_cast<std::size_t>(num_blocks * num_groups));
    for (Index b = 0; b < num_blocks; ++b) {
        for (Index g = 0; g < num_groups; ++g) {
            const Index width = layer.group_width(g);
            CellCodebook cell;
            if (int8_mode) {
                cell.mins.resize(width);
                cell.maxs.resize(width);
                for (Index l = 0; l < width; ++l) {
                    cell.mins(l) = fp16::double_from_bits(cur.read<std::uint16_t>());
                    cell.maxs(l) = fp16::double_from_bits(cur.read<std::uint16_t>());
                    if (!std::isfinite(cell.mins(l)) || !std::isfinite(cell.maxs(l)) ||
                        cell.mins(l) > cell.maxs(l)) {
                        throw CorruptionError("invalid int8 range in codebook");
                    }
                }
                cur.require(static_cast<std::size_t>(layer.config.n * width));
                cell.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(cur.pos),
                                  bytes.begin() + static_cast<std::ptrdiff_t>(
                                                      cur.pos + layer.config.n * width));
                cur.pos += static_cast<std::size_t>(layer.config.n * width);
            } else {
                cell.values = read_fp16_matrix(cur, layer.config.n, width, "codebook");
            }
            layer.codebooks[static_cast<std::size_t>(b * num_groups + g)] = std::move(cell);
        }
    }

    if (lowrank) {
        cur.pos = static_cast<std::size_t>(offsets[2]);
        layer.lowrank_a =
            read_fp16_matrix(cur, layer.rows, static_cast<Index>(r), "low-rank A");
        cur.pos = static_cast<std::size_t>(offsets[3]);
        layer.lowrank_b =
            read_fp16_matrix(cur, static_cast<Index>(r), layer.cols, "low-rank B");
    } else {
        layer.lowrank_a = Matrix(layer.rows, 0);
        layer.lowrank_b = Matrix(0, layer.cols);
    }
    return layer;
}

void save_layer(const QuantizedLayer& layer, const std::string& path) {
    const auto bytes = serialize(layer);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
        throw IoError("write failed for " + path);
    }
}

QuantizedLayer load_layer(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    if (size > 0) {
        in.read(reinterpret_cast<char*>(bytes.data()), size);
    }
    if (!in) {
        throw IoError("read failed for " + path);
    }
    return deserialize(bytes);
}

LayerHeader load_layer_header(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(kHeaderBytes));
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(kHeaderBytes)) {
        throw CorruptionError("truncated header in " + path);
    }
    Cursor cur{bytes};
    return parse_header(cur);
}

Matrix dequantize(const QuantizedLayer& layer) {
    Matrix out = reconstruct_codebooks(layer);
    if (layer.config.lowrank_r > 0) {
        out.noalias() += layer.lowrank_a * layer.lowrank_b;
    }
    return out;
}

} // namespace atq
