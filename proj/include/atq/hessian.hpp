#pragma once

#include <vector>

#include <Eigen/Core>

#include "atq/tensor_file.hpp"

namespace atq {

// Ordered set of not-yet-quantized column indices forming one width-d group.
struct GroupSelector {
    std::vector<Index> indices; // strictly increasing, all in [0, dim)

    Index size() const { return static_cast<Index>(indices.size()); }

    static GroupSelector contiguous(Index first, Index width);
};

// Damped layer Hessian H = (2/S) sum x x^T + lambda I together with its
// inverse and lower Cholesky factor U (H = U U^T). H and U are fixed at
// finalize; eliminate() downdates Hinv and zeroes the removed rows/columns.
class HessianState {
public:
    Index dim() const { return dim_; }
    const Matrix& hessian() const { return H_; }
    const Matrix& inverse() const { return Hinv_; }
    const Matrix& cholesky_factor() const { return U_; }
    bool is_eliminated(Index i) const { return eliminated_[static_cast<std::size_t>(i)] != 0; }
    Index eliminated_count() const { return eliminated_count_; }

    // Rank-|Q| downdate: Hinv <- Hinv - Hinv[:,Q] ([Hinv]_QQ)^-1 Hinv[Q,:],
    // then rows/cols Q are zeroed exactly. The surviving principal block
    // equals the inverse of H restricted to the surviving indices.
    void eliminate(const GroupSelector& q);

    // ([Hinv]_QQ)^-1, symmetric positive definite.
    Matrix metric(const GroupSelector& q) const;

    friend HessianState finalize_hessian(const Matrix& h_raw, double damping_rel);

private:
    Index dim_ = 0;
    Matrix H_;
    Matrix Hinv_;
    Matrix U_;
    std::vector<std::uint8_t> eliminated_;
    Index eliminated_count_ = 0;
};

// H_raw = (2/S) sum_s x_s x_s^T over the batch rows.
Matrix accumulate_hessian(const CalibrationBatch& batch);

// H = H_raw + damping_rel * mean(diag(H_raw)) * I; if the mean diagonal is
// zero the damping falls back to damping_rel * I.
HessianState finalize_hessian(const Matrix& h_raw, double damping_rel);

HessianState eliminate_group(HessianState state, const GroupSelector& q);

Matrix group_metric(const HessianState& state, const GroupSelector& q);

} // namespace atq
