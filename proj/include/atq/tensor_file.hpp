#pragma once

#include <optional>
#include <string>

#include <Eigen/Core>

#include "atq/errors.hpp"

namespace atq {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// ATQT tensor container (little-endian):
//   magic "ATQT" (4 bytes) | version u32 = 1 | dtype u8 (0 fp64, 1 fp32,
//   2 fp16) | reserved u8*3 | rows u64 | cols u64 | payload rows*cols
//   elements, row-major, no padding.
// The payload byte length must equal rows*cols*sizeof(dtype) exactly.

enum class Precision : std::uint8_t {
    Fp64 = 0,
    Fp32 = 1,
    Fp16 = 2,
};

// Activation rows used to accumulate the layer Hessian; one sample per row.
struct CalibrationBatch {
    Matrix samples; // S x M

    Index count() const { return samples.rows(); }
    Index dim() const { return samples.cols(); }
};

Matrix load_matrix(const std::string& path);

void store_matrix(const Matrix& m, const std::string& path, Precision precision);

// Loads an S x M activation matrix. S = 0 is rejected here (a Hessian needs
// at least one sample); a dimension mismatch against expected_dim is a
// validation error that names both dims.
CalibrationBatch ingest_calibration(const std::string& path,
                                    std::optional<Index> expected_dim = std::nullopt);

} // namespace atq
