#include "atq/hessian.hpp"

#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "atq/errors.hpp"

namespace atq {

namespace {

constexpr double kConditionLimit = 1e12;

void validate_selector(const GroupSelector& q, const HessianState& state) {
    if (q.indices.empty()) {
        throw ValidationError("group selector is empty");
    }
    Index prev = -1;
    for (Index i : q.indices) {
        if (i <= prev) {
            throw ValidationError("group indices must be strictly increasing");
        }
        if (i < 0 || i >= state.dim()) {
            throw ValidationError("group index " + std::to_string(i) + " out of range");
        }
        if (state.is_eliminated(i)) {
            throw ValidationError("group index " + std::to_string(i) + " already eliminated");
        }
        prev = i;
    }
}

Matrix submatrix(const Matrix& m, const std::vector<Index>& rows,
                 const std::vector<Index>& cols) {
    Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
    for (Index i = 0; i < out.rows(); ++i) {
        for (Index j = 0; j < out.cols(); ++j) {
            out(i, j) = m(rows[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(j)]);
        }
    }
    return out;
}

// SPD inverse of [Hinv]_QQ with a condition estimate guard.
Matrix invert_spd_block(const Matrix& sub) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sub);
    const auto& ev = eig.eigenvalues();
    const double lo = ev.minCoeff();
    const double hi = ev.maxCoeff();
    if (lo <= 0.0 || hi / lo > kConditionLimit) {
        throw NumericalError("group submatrix is numerically singular (eigenvalues in [" +
                             std::to_string(lo) + ", " + std::to_string(hi) + "])");
    }
    Matrix inv = eig.eigenvectors() * ev.cwiseInverse().asDiagonal() *
                 eig.eigenvectors().transpose();
    return ((inv + inv.transpose()) * 0.5).eval();
}

} // namespace

GroupSelector GroupSelector::contiguous(Index first, Index width) {
    GroupSelector q;
    q.indices.reserve(static_cast<std::size_t>(width));
    for (Index i = 0; i < width; ++i) {
        q.indices.push_back(first + i);
    }
    return q;
}

Matrix accumulate_hessian(const CalibrationBatch& batch) {
    if (batch.count() < 1) {
        throw ValidationError("calibration batch is empty");
    }
    if (!batch.samples.allFinite()) {
        throw ValidationError("calibration batch contains non-finite values");
    }
    Matrix h = (2.0 / static_cast<double>(batch.count())) *
               (batch.samples.transpose() * batch.samples);
    return ((h + h.transpose()) * 0.5).eval();
}

HessianState finalize_hessian(const Matrix& h_raw, double damping_rel) {
    if (h_raw.rows() != h_raw.cols() || h_raw.rows() < 1) {
        throw ValidationError("Hessian must be square and nonempty");
    }
    if (!(damping_rel > 0.0)) {
        throw ValidationError("damping must be positive");
    }
    const double scale = h_raw.cwiseAbs().maxCoeff();
    const double asym = (h_raw - h_raw.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12 * (1.0 + scale)) {
        throw ValidationError("Hessian is not symmetric");
    }

    HessianState state;
    state.dim_ = h_raw.rows();
    const double mean_diag = h_raw.diagonal().mean();
    const double lambda = mean_diag == 0.0 ? damping_rel : damping_rel * mean_diag;
    state.H_ = ((h_raw + h_raw.transpose()) * 0.5).eval();
    state.H_.diagonal().array() += lambda;

    Eigen::LLT<Matrix> llt(state.H_);
    if (llt.info() != Eigen::Success) {
        Eigen::SelfAdjointEigenSolver<Matrix> eig(state.H_);
        throw NumericalError("Cholesky failed after damping; smallest eigenvalue approx " +
                             std::to_string(eig.eigenvalues().minCoeff()));
    }
    state.U_ = llt.matrixL();
    Matrix inv = llt.solve(Matrix::Identity(state.dim_, state.dim_));
    state.Hinv_ = ((inv + inv.transpose()) * 0.5).eval();
    state.eliminated_.assign(static_cast<std::size_t>(state.dim_), 0);
    state.eliminated_count_ = 0;
    return state;
}

void HessianState::eliminate(const GroupSelector& q) {
    validate_selector(q, *this);
    std::vector<Index> all(static_cast<std::size_t>(dim_));
    for (Index i = 0; i < dim_; ++i) {
        all[static_cast<std::size_t>(i)] = i;
    }
    const Matrix cols = submatrix(Hinv_, all, q.indices);      // M x |Q|
    const Matrix sub = submatrix(Hinv_, q.indices, q.indices); // |Q| x |Q|
    const Matrix sub_inv = invert_spd_block(sub);
    Hinv_.noalias() -= cols * sub_inv * cols.transpose();
    for (Index i : q.indices) {
        Hinv_.row(i).setZero();
        Hinv_.col(i).setZero();
        eliminated_[static_cast<std::size_t>(i)] = 1;
    }
    eliminated_count_ += q.size();
}

Matrix HessianState::metric(const GroupSelector& q) const {
    validate_selector(q, *this);
    return invert_spd_block(submatrix(Hinv_, q.indices, q.indices));
}

HessianState eliminate_group(HessianState state, const GroupSelector& q) {
    state.eliminate(q);
    return state;
}

Matrix group_metric(const HessianState& state, const GroupSelector& q) {
    return state.metric(q);
}

} // namespace atq
