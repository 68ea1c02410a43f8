#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "atq/quantizer.hpp"

namespace atq {

// ATQZ container (little-endian):
//   magic "ATQZ" | version u32 = 1 | N u64 | M u64 | d u16 | n u32 | k u32 |
//   flags u8 (bit0 int8 codebook, bit1 low-rank present) | r u32 |
//   section count u32 = 4 | 4 x (offset u64, length u64) |
//   sections in order: INDEX, CODEBOOK, LOWRANK_A, LOWRANK_B.
//
// INDEX: entries bit-packed row-major at ceil(log2 n) bits each, LSB-first
// within bytes, zero-padded to a byte boundary per row block.
// CODEBOOK: block-major, then column group, then entry, then dimension;
// fp16 values, or (per dimension: fp16 min, fp16 max) followed by the n x w
// byte grid in int8 mode.
// LOWRANK_A / LOWRANK_B: fp16, row-major. Absent sections have offset and
// length zero. Sections are contiguous and the file ends at the last one.

struct BitReport {
    double b_c = 0.0;  // codebook bits per weight
    double b_i = 0.0;  // index bits per weight
    double b_lr = 0.0; // low-rank bits per weight
    double b_total = 0.0;
    double file_overhead_bytes = 0.0; // actual file size minus b_total*N*M/8
};

// Index entry width; n = 1 needs zero bits.
int index_bits_per_entry(Index n);

// Exact serialized byte count for a layer of this shape and config.
std::uint64_t serialized_size(const QuantConfig& cfg, Index rows, Index cols);

// Bit accounting. rows = cols = 0 gives the shape-free formulas only (valid
// when lowrank_r = 0); file_overhead_bytes is NaN in that mode.
BitReport bits_per_weight(const QuantConfig& cfg, Index rows, Index cols);

std::vector<std::uint8_t> serialize(const QuantizedLayer& layer);

QuantizedLayer deserialize(const std::vector<std::uint8_t>& bytes);

void save_layer(const QuantizedLayer& layer, const std::string& path);

QuantizedLayer load_layer(const std::string& path);

// Shape and config from the fixed header, no payload decoding.
struct LayerHeader {
    Index rows = 0;
    Index cols = 0;
    QuantConfig config;
};

LayerHeader load_layer_header(const std::string& path);

// What(i, d*j + l) = centroid lookup through the index matrix, plus A*B when
// low-rank factors are present.
Matrix dequantize(const QuantizedLayer& layer);

} // namespace atq
