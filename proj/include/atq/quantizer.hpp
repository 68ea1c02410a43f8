#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "atq/hessian.hpp"
#include "atq/vq.hpp"

namespace atq {

struct QuantConfig {
    Index d = 2;  // codebook entry dimension (columns per group)
    Index n = 16; // codebook entries
    Index k = 64; // rows covered by one codebook block
    double damping_rel = 0.01;
    bool codebook_int8 = false;
    Index lowrank_r = 0; // 0 = off
    std::uint64_t seed = 0;
    int kmeans_max_iters = 100;
    int flip_passes = 4;
};

// Validates ranges against the target shape; warns (stderr) when n is not a
// power of two.
void validate_config(const QuantConfig& cfg, Index rows, Index cols);

// One (row-block, column-group) cell. In fp16 mode `values` holds the
// centroids rounded onto the fp16 grid. In int8 mode the byte grid plus the
// per-dimension min/max pairs are the stored truth and `values` is empty.
struct CellCodebook {
    Matrix values;                   // n x w, fp16-representable (fp16 mode)
    std::vector<std::uint8_t> bytes; // n*w row-major (int8 mode)
    Eigen::VectorXd mins;            // per-dimension, fp16-representable
    Eigen::VectorXd maxs;

    // Centroids used for reconstruction: `values`, or the dequantized byte
    // grid min + b/255 * (max - min).
    Matrix effective(Index n, Index w, bool int8_mode) const;
};

struct QuantizedLayer {
    Index rows = 0;
    Index cols = 0;
    QuantConfig config; // d, n, k, codebook_int8, lowrank_r are at-rest fields
    Eigen::Matrix<std::uint32_t, Eigen::Dynamic, Eigen::Dynamic> index; // N x ceil(M/d)
    std::vector<CellCodebook> codebooks; // [block * num_groups + group]
    Matrix lowrank_a; // N x r, fp16-representable (empty when r = 0)
    Matrix lowrank_b; // r x M, fp16-representable

    Index num_groups() const;
    Index num_blocks() const;
    Index group_width(Index g) const;
    Index block_rows(Index b) const;
    const CellCodebook& cell(Index block, Index group) const;
};

// Column partition into width-d groups (last one possibly narrower).
struct GroupPlan {
    std::vector<GroupSelector> groups;
    std::vector<char> remaining;

    static GroupPlan build(Index cols, Index d);
    Index remaining_count() const;
};

// Eq-style group loss: sum over rows of 1/2 delta^T G delta with
// delta = row of (W_Q - What_Q).
double group_loss(const Matrix& w_q, const Matrix& what_q, const Matrix& metric);

// Closed-form weight update: W + dW with
// dW = -(W[:,Q] - What_Q) G Hinv[Q,:], G = ([Hinv]_QQ)^-1, applied row-wise.
// Columns Q of the result equal What_Q (the equality constraint is applied
// exactly); already-eliminated columns never change. When formula_residual
// is given it receives the max-abs gap between the raw formula output on
// columns Q and What_Q.
Matrix compensate(const Matrix& w, const GroupSelector& q, const Matrix& what_q,
                  const HessianState& hess, double* formula_residual = nullptr);

// Standalone int8 codebook mapping: per-dimension min/max over the entries,
// bytes = round(255 (c - min)/(max - min)) clamped to [0, 255]; a constant
// dimension maps to all-zero bytes. Round-trip error is at most
// (max - min)/510 per entry.
struct Int8Codebook {
    std::vector<std::uint8_t> bytes; // n*w row-major
    Eigen::VectorXd mins;
    Eigen::VectorXd maxs;
};

Int8Codebook quantize_codebook_int8(const Matrix& centroids);

Matrix dequantize_int8(const Int8Codebook& q, Index n, Index w);

// Rank-r factors minimizing || (R - A B) U ||_F^2 for R = W - What via SVD
// of R U: A = u_r D_r, B = v_r^T U^-1. The achieved weighted residual equals
// the sum of the discarded squared singular values.
std::pair<Matrix, Matrix> residual_lowrank(const Matrix& w, const Matrix& what,
                                           const HessianState& hess, Index r);

// tr(R H R^T) against the original (pre-elimination) Hessian.
double proxy_loss(const Matrix& w, const Matrix& what_full, const HessianState& hess);

// Candidate quantization of one group at the current weights: per row block,
// weighted k-means + flip refinement under the group metric.
struct GroupCandidate {
    Index group = -1;
    double loss = 0.0;
    std::vector<vq::KmeansResult> blocks;
};

struct QuantizeOptions {
    bool fast_order = false;              // left-to-right instead of greedy
    const QuantizedLayer* warm_start = nullptr; // nested codebook initialization
};

// Candidate for a single group at the current weights.
GroupCandidate build_group_candidate(const Matrix& w_cur, const GroupPlan& plan, Index g,
                                     const HessianState& hess, const QuantConfig& cfg,
                                     const QuantizedLayer* warm = nullptr);

// Builds candidates for every remaining group and returns the one with the
// smallest group loss (ties toward the lowest group id) together with its
// codebooks and assignments.
GroupCandidate select_group(const Matrix& w_cur, const GroupPlan& plan,
                            const HessianState& hess, const QuantConfig& cfg,
                            const QuantizeOptions& opts = {});

// Codebook-only reconstruction (no low-rank term); every entry (i, d*j + l)
// comes from the indexed centroid of its cell.
Matrix reconstruct_codebooks(const QuantizedLayer& layer);

struct QuantizeStats {
    std::vector<Index> order;                 // groups in processing order
    std::vector<double> selection_loss;       // candidate loss at selection
    std::vector<double> constraint_residual;  // per step, raw Eq-form residual
};

struct QuantizeResult {
    QuantizedLayer layer;
    QuantizeStats stats;
};

// Full pipeline: greedy group selection, per-block codebooks, optional int8
// codebook sub-quantization (before compensation, so the update targets the
// dequantized values), compensation of the remaining weights, Hessian
// elimination; finally the optional residual low-rank correction against the
// original weights.
QuantizeResult quantize_matrix(const Matrix& w, HessianState hess, const QuantConfig& cfg,
                               const QuantizeOptions& opts = {});

// Control arm: same (d, n, k) budget and per-cell seeds, Euclidean metric,
// fixed order, no compensation, no elimination.
QuantizedLayer quantize_rtn(const Matrix& w, const QuantConfig& cfg);

} // namespace atq
