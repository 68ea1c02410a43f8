#pragma once

// Random-layer construction and independent oracles shared by the format
// tests and the acceptance suite. The oracles deliberately re-derive the
// documented layout and lookup equation with plain loops.

#include <random>

#include "atq/fp16.hpp"
#include "atq/quantizer.hpp"

namespace test_util {

using atq::Index;
using atq::Matrix;

inline Matrix random_fp16_grid(Index rows, Index cols, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-4.0, 4.0);
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
            m(i, j) = atq::fp16::canonical(dist(rng));
        }
    }
    return m;
}

// Valid random layer built directly (no quantization run), ragged shapes
// included.
inline atq::QuantizedLayer random_layer(std::uint64_t seed, bool int8_mode, Index lowrank_r) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Index> dim(1, 24);
    atq::QuantizedLayer layer;
    layer.rows = dim(rng);
    layer.cols = dim(rng);
    layer.config.d = std::uniform_int_distribution<Index>(1, layer.cols)(rng);
    layer.config.k = std::uniform_int_distribution<Index>(1, layer.rows + 4)(rng);
    layer.config.n = std::uniform_int_distribution<Index>(1, layer.config.k)(rng);
    layer.config.codebook_int8 = int8_mode;
    layer.config.lowrank_r = std::min(lowrank_r, std::min(layer.rows, layer.cols));

    const Index groups = layer.num_groups();
    const Index blocks = layer.num_blocks();
    layer.index.resize(layer.rows, groups);
    std::uniform_int_distribution<std::uint32_t> entry(
        0, static_cast<std::uint32_t>(layer.config.n - 1));
    for (Index i = 0; i < layer.rows; ++i) {
        for (Index g = 0; g < groups; ++g) {
            layer.index(i, g) = entry(rng);
        }
    }
    layer.codebooks.resize(static_cast<std::size_t>(groups * blocks));
    for (Index b = 0; b < blocks; ++b) {
        for (Index g = 0; g < groups; ++g) {
            const Index w = layer.group_width(g);
            atq::CellCodebook cell;
            if (int8_mode) {
                cell.mins.resize(w);
                cell.maxs.resize(w);
                std::uniform_real_distribution<double> dist(-4.0, 4.0);
                for (Index l = 0; l < w; ++l) {
                    const double a = atq::fp16::canonical(dist(rng));
                    const double b2 = atq::fp16::canonical(dist(rng));
                    cell.mins(l) = std::min(a, b2);
                    cell.maxs(l) = std::max(a, b2);
                }
                cell.bytes.resize(static_cast<std::size_t>(layer.config.n * w));
                for (auto& byte : cell.bytes) {
                    byte = static_cast<std::uint8_t>(rng() & 0xFF);
                }
            } else {
                cell.values = random_fp16_grid(layer.config.n, w, rng);
            }
            layer.codebooks[static_cast<std::size_t>(b * groups + g)] = std::move(cell);
        }
    }
    if (layer.config.lowrank_r > 0) {
        layer.lowrank_a = random_fp16_grid(layer.rows, layer.config.lowrank_r, rng);
        layer.lowrank_b = random_fp16_grid(layer.config.lowrank_r, layer.cols, rng);
    } else {
        layer.lowrank_a = Matrix(layer.rows, 0);
        layer.lowrank_b = Matrix(0, layer.cols);
    }
    return layer;
}

// Scalar-loop oracle for the dequantization lookup equation.
inline Matrix dequantize_oracle(const atq::QuantizedLayer& layer) {
    const Index d = layer.config.d;
    Matrix out(layer.rows, layer.cols);
    for (Index i = 0; i < layer.rows; ++i) {
        const Index block = i / layer.config.k;
        for (Index j = 0; j < layer.num_groups(); ++j) {
            const Index width = std::min(d, layer.cols - j * d);
            const atq::CellCodebook& cell =
                layer.codebooks[static_cast<std::size_t>(block * layer.num_groups() + j)];
            const Index e = static_cast<Index>(layer.index(i, j));
            for (Index l = 0; l < width; ++l) {
                double v;
                if (layer.config.codebook_int8) {
                    const double range = cell.maxs(l) - cell.mins(l);
                    v = cell.mins(l) +
                        static_cast<double>(
                            cell.bytes[static_cast<std::size_t>(e * width + l)]) /
                            255.0 * range;
                } else {
                    v = cell.values(e, l);
                }
                out(i, d * j + l) = v;
            }
        }
    }
    if (layer.config.lowrank_r > 0) {
        for (Index i = 0; i < layer.rows; ++i) {
            for (Index j = 0; j < layer.cols; ++j) {
                double acc = 0.0;
                for (Index t = 0; t < layer.config.lowrank_r; ++t) {
                    acc += layer.lowrank_a(i, t) * layer.lowrank_b(t, j);
                }
                out(i, j) += acc;
            }
        }
    }
    return out;
}

// Independent arithmetic for the documented file layout.
inline std::uint64_t size_oracle(const atq::QuantizedLayer& layer) {
    const Index n = layer.config.n;
    int bits = 0;
    while ((Index{1} << bits) < n) {
        ++bits;
    }
    std::uint64_t total = 39 + 4 + 64;
    for (Index b = 0; b < layer.num_blocks(); ++b) {
        total += (static_cast<std::uint64_t>(layer.block_rows(b)) * layer.num_groups() * bits +
                  7) /
                 8;
    }
    for (Index b = 0; b < layer.num_blocks(); ++b) {
        for (Index g = 0; g < layer.num_groups(); ++g) {
            const std::uint64_t w = static_cast<std::uint64_t>(layer.group_width(g));
            total += layer.config.codebook_int8 ? 4 * w + static_cast<std::uint64_t>(n) * w
                                                : 2 * static_cast<std::uint64_t>(n) * w;
        }
    }
    if (layer.config.lowrank_r > 0) {
        total += 2 * static_cast<std::uint64_t>(layer.rows) * layer.config.lowrank_r;
        total += 2 * static_cast<std::uint64_t>(layer.config.lowrank_r) * layer.cols;
    }
    return total;
}

} // namespace test_util
