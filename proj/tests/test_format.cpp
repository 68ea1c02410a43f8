#include "doctest.h"

#include <cmath>
#include <random>

#include "atq/format.hpp"
#include "atq/fp16.hpp"
#include "helpers.hpp"
#include "layer_gen.hpp"

using namespace atq;
using test_util::TempDir;
using test_util::dequantize_oracle;
using test_util::random_layer;
using test_util::size_oracle;

namespace {

Matrix random_fp16_matrix(Index rows, Index cols, std::mt19937_64& rng) {
    return test_util::random_fp16_grid(rows, cols, rng);
}

} // namespace

TEST_CASE("bit accounting matches the worked examples") {
    QuantConfig cfg;
    cfg.d = 2;
    cfg.n = 64;
    cfg.k = 1024;
    BitReport r = bits_per_weight(cfg, 0, 0);
    CHECK(r.b_c == 1.0);
    CHECK(r.b_i == 3.0);
    CHECK(r.b_total == 4.0);

    cfg.d = 3;
    r = bits_per_weight(cfg, 0, 0);
    CHECK(r.b_i == 2.0);
    CHECK(r.b_c == 1.0);
    CHECK(r.b_total == 3.0);

    cfg.d = 2;
    cfg.k = 2048;
    r = bits_per_weight(cfg, 0, 0);
    CHECK(r.b_c == 0.5);
    CHECK(r.b_total == 3.5);

    cfg.k = 1024;
    cfg.codebook_int8 = true;
    r = bits_per_weight(cfg, 0, 0);
    CHECK(r.b_c == 0.5);
    CHECK(r.b_total == 3.5);

    // int8 saves exactly 8n/k
    cfg.codebook_int8 = false;
    const double fp = bits_per_weight(cfg, 0, 0).b_total;
    cfg.codebook_int8 = true;
    CHECK(fp - bits_per_weight(cfg, 0, 0).b_total ==
          8.0 * static_cast<double>(cfg.n) / static_cast<double>(cfg.k));
}

TEST_CASE("low-rank bits and the exact size identity") {
    QuantConfig cfg;
    cfg.d = 2;
    cfg.n = 8;
    cfg.k = 16;
    cfg.lowrank_r = 2;
    const Index rows = 32, cols = 20;
    const BitReport r = bits_per_weight(cfg, rows, cols);
    CHECK(r.b_lr ==
          doctest::Approx(16.0 * 2 * (32 + 20) / (32.0 * 20.0)).epsilon(1e-15));
    CHECK(r.b_total == doctest::Approx(r.b_c + r.b_i + r.b_lr).epsilon(1e-15));
    const double predicted = r.b_total * 32.0 * 20.0 / 8.0 + r.file_overhead_bytes;
    CHECK(std::llround(predicted) ==
          static_cast<long long>(serialized_size(cfg, rows, cols)));
    CHECK(r.file_overhead_bytes >= 0.0);
}

TEST_CASE("tiny index payload packs to one padded byte") {
    std::mt19937_64 rng(7);
    QuantizedLayer layer;
    layer.rows = 2;
    layer.cols = 2;
    layer.config.d = 2;
    layer.config.n = 2;
    layer.config.k = 2;
    layer.index.resize(2, 1);
    layer.index(0, 0) = 1;
    layer.index(1, 0) = 0;
    CellCodebook cell;
    cell.values = random_fp16_matrix(2, 2, rng);
    layer.codebooks = {cell};
    layer.lowrank_a = Matrix(2, 0);
    layer.lowrank_b = Matrix(0, 2);

    const auto bytes = serialize(layer);
    // 2 entries x 1 bit, padded per (single) row block
    const std::uint64_t index_bytes = 1;
    CHECK(bytes.size() == 39 + 4 + 64 + index_bytes + 2 * 2 * 2);
    const QuantizedLayer back = deserialize(bytes);
    CHECK(test_util::layers_equal(layer, back));
}

TEST_CASE("serialization round-trips randomized layers exactly") {
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        const bool int8_mode = seed % 3 == 1;
        const Index r = seed % 4 == 2 ? static_cast<Index>(1 + seed % 3) : 0;
        const QuantizedLayer layer = random_layer(seed, int8_mode, r);
        const auto bytes = serialize(layer);
        CHECK(bytes.size() == size_oracle(layer));
        CHECK(bytes.size() == serialized_size(layer.config, layer.rows, layer.cols));

        const QuantizedLayer back = deserialize(bytes);
        CHECK(test_util::layers_equal(layer, back));
        CHECK(serialize(back) == bytes); // byte-stable

        // exact size identity from the bit report
        const BitReport report = bits_per_weight(layer.config, layer.rows, layer.cols);
        const double predicted = report.b_total * static_cast<double>(layer.rows) *
                                     static_cast<double>(layer.cols) / 8.0 +
                                 report.file_overhead_bytes;
        CHECK(std::llround(predicted) == static_cast<long long>(bytes.size()));
        CHECK(std::abs(predicted - static_cast<double>(bytes.size())) <= 1e-6);
    }
}

TEST_CASE("dequantization matches the scalar-loop oracle") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const QuantizedLayer layer =
            random_layer(700 + seed, seed % 2 == 0, seed % 5 == 0 ? 2 : 0);
        const Matrix a = dequantize(layer);
        const Matrix b = dequantize_oracle(layer);
        CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
        // purity: same input, same bits
        CHECK(test_util::mat_equal(dequantize(layer), a));
    }
}

TEST_CASE("single-entry codebooks reconstruct constant blocks") {
    std::mt19937_64 rng(11);
    QuantizedLayer layer;
    layer.rows = 4;
    layer.cols = 4;
    layer.config.d = 2;
    layer.config.n = 1;
    layer.config.k = 4;
    layer.index = Eigen::Matrix<std::uint32_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(4, 2);
    layer.codebooks.resize(2);
    for (auto& cell : layer.codebooks) {
        cell.values = random_fp16_matrix(1, 2, rng);
    }
    layer.lowrank_a = Matrix(4, 0);
    layer.lowrank_b = Matrix(0, 4);

    const Matrix out = dequantize(layer);
    for (Index i = 0; i < 4; ++i) {
        CHECK(out(i, 0) == layer.codebooks[0].values(0, 0));
        CHECK(out(i, 3) == layer.codebooks[1].values(0, 1));
    }
    // n = 1 means a zero-bit index section
    const auto bytes = serialize(layer);
    const QuantizedLayer back = deserialize(bytes);
    CHECK(test_util::layers_equal(layer, back));
}

TEST_CASE("header validation failures are format errors") {
    const QuantizedLayer layer = random_layer(42, false, 0);
    auto bytes = serialize(layer);

    auto mutate = [&](std::size_t pos, std::uint8_t value) {
        auto copy = bytes;
        copy[pos] = value;
        return copy;
    };

    CHECK_THROWS_AS(deserialize(mutate(0, 'X')), FormatError);        // magic
    CHECK_THROWS_AS(deserialize(mutate(4, 9)), FormatError);          // version
    // n = 0 (bytes 26..29)
    {
        auto copy = bytes;
        copy[26] = copy[27] = copy[28] = copy[29] = 0;
        CHECK_THROWS_AS(deserialize(copy), FormatError);
    }
    CHECK_THROWS_AS(deserialize(mutate(34, 0xFF)), FormatError);      // unknown flags
    {
        auto truncated = bytes;
        truncated.resize(truncated.size() - 1);
        CHECK_THROWS_AS(deserialize(truncated), CorruptionError);
    }
    {
        auto extended = bytes;
        extended.push_back(0);
        CHECK_THROWS_AS(deserialize(extended), CorruptionError);
    }
}

TEST_CASE("index-section bit flips give a valid layer or a corruption error") {
    std::mt19937_64 rng(400);
    int valid = 0, corrupt = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const QuantizedLayer layer = random_layer(800 + trial % 20, trial % 2 == 0, 0);
        auto bytes = serialize(layer);
        // section table entry 0 holds the index offset/length
        std::uint64_t offset = 0, length = 0;
        for (int i = 0; i < 8; ++i) {
            offset |= static_cast<std::uint64_t>(bytes[43 + i]) << (8 * i);
            length |= static_cast<std::uint64_t>(bytes[51 + i]) << (8 * i);
        }
        if (length == 0) {
            continue;
        }
        const std::uint64_t bit = rng() % (length * 8);
        bytes[offset + bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
        try {
            const QuantizedLayer back = deserialize(bytes);
            CHECK(dequantize(back).rows() == layer.rows);
            ++valid;
        } catch (const CorruptionError&) {
            ++corrupt;
        }
    }
    CHECK(valid + corrupt > 0);
}

TEST_CASE("layer files save and load") {
    TempDir tmp;
    const QuantizedLayer layer = random_layer(500, true, 2);
    save_layer(layer, tmp.file("l.atqz"));
    const QuantizedLayer back = load_layer(tmp.file("l.atqz"));
    CHECK(test_util::layers_equal(layer, back));
    CHECK_THROWS_AS(load_layer(tmp.file("missing.atqz")), IoError);
}
