#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include <Eigen/Dense>

#include "atq/quantizer.hpp"

namespace test_util {

using atq::Index;
using atq::Matrix;

inline Matrix random_matrix(Index rows, Index cols, std::uint64_t seed,
                            double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
            m(i, j) = dist(rng);
        }
    }
    return m;
}

inline Matrix gaussian_matrix(Index rows, Index cols, std::uint64_t seed, double sigma = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, sigma);
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
            m(i, j) = dist(rng);
        }
    }
    return m;
}

// Random SPD matrix Q diag(ev) Q^T with eigenvalues log-spaced in
// [1/spread, spread].
inline Matrix random_spd(Index dim, std::uint64_t seed, double spread = 10.0) {
    const Matrix g = gaussian_matrix(dim, dim, seed);
    const Eigen::HouseholderQR<Matrix> qr(g);
    const Matrix q = qr.householderQ();
    Eigen::VectorXd ev(dim);
    std::mt19937_64 rng(seed ^ 0x5DEECE66DULL);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (Index i = 0; i < dim; ++i) {
        ev(i) = std::pow(spread, dist(rng));
    }
    return q * ev.asDiagonal() * q.transpose();
}

template <typename A, typename B>
bool mat_equal(const A& a, const B& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        return false;
    }
    return (a.array() == b.array()).all();
}

struct TempDir {
    std::filesystem::path path;

    TempDir() {
        static std::atomic<int> counter{0};
        path = std::filesystem::temp_directory_path() /
               ("atq_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter.fetch_add(1)));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

inline bool cells_equal(const atq::CellCodebook& a, const atq::CellCodebook& b) {
    return mat_equal(a.values, b.values) && a.bytes == b.bytes && mat_equal(a.mins, b.mins) &&
           mat_equal(a.maxs, b.maxs);
}

inline bool layers_equal(const atq::QuantizedLayer& a, const atq::QuantizedLayer& b) {
    if (a.rows != b.rows || a.cols != b.cols) {
        return false;
    }
    if (a.config.d != b.config.d || a.config.n != b.config.n || a.config.k != b.config.k ||
        a.config.codebook_int8 != b.config.codebook_int8 ||
        a.config.lowrank_r != b.config.lowrank_r) {
        return false;
    }
    if (!mat_equal(a.index, b.index)) {
        return false;
    }
    if (a.codebooks.size() != b.codebooks.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.codebooks.size(); ++i) {
        if (!cells_equal(a.codebooks[i], b.codebooks[i])) {
            return false;
        }
    }
    return mat_equal(a.lowrank_a, b.lowrank_a) && mat_equal(a.lowrank_b, b.lowrank_b);
}

} // namespace test_util
