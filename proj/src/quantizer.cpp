#include "atq/quantizer.hpp"

#include <cmath>
#include <iostream>
#include <string>

#include <Eigen/SVD>

#include "atq/errors.hpp"
#include "atq/fp16.hpp"
#include "atq/rng.hpp"

namespace atq {

namespace {

Matrix canonical_fp16(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            out(i, j) = fp16::canonical(m(i, j));
        }
    }
    return out;
}

Matrix reconstruct_rows(const Matrix& effective, const vq::Assignment& asg) {
    Matrix out(static_cast<Index>(asg.size()), effective.cols());
    for (Index i = 0; i < out.rows(); ++i) {
        out.row(i) = effective.row(static_cast<Index>(asg[static_cast<std::size_t>(i)]));
    }
    return out;
}

CellCodebook make_cell(const Matrix& centroids, bool int8_mode) {
    CellCodebook cell;
    const Matrix canon = canonical_fp16(centroids);
    if (int8_mode) {
        Int8Codebook q = quantize_codebook_int8(canon);
        cell.bytes = std::move(q.bytes);
        cell.mins = std::move(q.mins);
        cell.maxs = std::move(q.maxs);
    } else {
        cell.values = canon;
    }
    return cell;
}

void validate_warm_start(const QuantizedLayer& warm, const QuantConfig& cfg, Index rows,
                         Index cols) {
    if (warm.rows != rows || warm.cols != cols) {
        throw ValidationError("warm-start layer shape mismatch");
    }
    if (warm.config.d != cfg.d || warm.config.k != cfg.k) {
        throw ValidationError("warm start requires identical d and k");
    }
    if (warm.config.n > cfg.n) {
        throw ValidationError("warm-start codebook is larger than the requested one");
    }
}

} // namespace

void validate_config(const QuantConfig& cfg, Index rows, Index cols) {
    if (rows < 1 || cols < 1) {
        throw ValidationError("matrix must be at least 1x1");
    }
    if (cfg.d < 1 || cfg.d > cols) {
        throw ValidationError("entry dimension d=" + std::to_string(cfg.d) +
                              " must be in [1, cols=" + std::to_string(cols) + "]");
    }
    if (cfg.n < 1 || cfg.k < 1 || cfg.n > cfg.k) {
        throw ValidationError("codebook size must satisfy 1 <= n <= k (n=" +
                              std::to_string(cfg.n) + ", k=" + std::to_string(cfg.k) + ")");
    }
    if (cfg.d > 0xFFFF || cfg.n > 0xFFFFFFFFLL || cfg.k > 0xFFFFFFFFLL) {
        throw ValidationError("hyperparameter exceeds serializable range");
    }
    if (cfg.lowrank_r < 0 || cfg.lowrank_r > std::min(rows, cols)) {
        throw ValidationError("low-rank r must be in [0, min(rows, cols)]");
    }
    if (!(cfg.damping_rel > 0.0)) {
        throw ValidationError("damping must be positive");
    }
    if (cfg.kmeans_max_iters < 1 || cfg.flip_passes < 0) {
        throw ValidationError("iteration limits out of range");
    }
    if ((cfg.n & (cfg.n - 1)) != 0) {
        std::cerr << "warning: codebook size n=" << cfg.n << " is not a power of two\n";
    }
}

Matrix CellCodebook::effective(Index n, Index w, bool int8_mode) const {
    if (!int8_mode) {
        return values;
    }
    Int8Codebook q{bytes, mins, maxs};
    return dequantize_int8(q, n, w);
}

Index QuantizedLayer::num_groups() const {
    return (cols + config.d - 1) / config.d;
}

Index QuantizedLayer::num_blocks() const {
    return (rows + config.k - 1) / config.k;
}

Index QuantizedLayer::group_width(Index g) const {
    return std::min(config.d, cols - g * config.d);
}

Index QuantizedLayer::block_rows(Index b) const {
    return std::min(config.k, rows - b * config.k);
}

const CellCodebook& QuantizedLayer::cell(Index block, Index group) const {
    return codebooks[static_cast<std::size_t>(block * num_groups() + group)];
}

GroupPlan GroupPlan::build(Index cols, Index d) {
    GroupPlan plan;
    const Index count = (cols + d - 1) / d;
    plan.groups.reserve(static_cast<std::size_t>(count));
    for (Index g = 0; g < count; ++g) {
        const Index first = g * d;
        plan.groups.push_back(GroupSelector::contiguous(first, std::min(d, cols - first)));
    }
    plan.remaining.assign(static_cast<std::size_t>(count), 1);
    return plan;
}

Index GroupPlan::remaining_count() const {
    Index c = 0;
    for (char r : remaining) {
        c += r != 0;
    }
    return c;
}

double group_loss(const Matrix& w_q, const Matrix& what_q, const Matrix& metric) {
    if (w_q.rows() != what_q.rows() || w_q.cols() != what_q.cols() ||
        metric.rows() != w_q.cols() || metric.cols() != w_q.cols()) {
        throw ValidationError("group loss shape mismatch");
    }
    const Matrix delta = w_q - what_q;
    return 0.5 * (delta * metric).cwiseProduct(delta).sum();
}

Matrix compensate(const Matrix& w, const GroupSelector& q, const Matrix& what_q,
                  const HessianState& hess, double* formula_residual) {
    if (hess.dim() != w.cols()) {
        throw ValidationError("Hessian dimension does not match weight columns");
    }
    const Index width = q.size();
    if (what_q.rows() != w.rows() || what_q.cols() != width) {
        throw ValidationError("quantized group shape mismatch");
    }
    const Matrix metric = hess.metric(q); // validates the selector
    Matrix w_cols(w.rows(), width);
    Matrix hinv_rows(width, w.cols());
    for (Index j = 0; j < width; ++j) {
        const Index col = q.indices[static_cast<std::size_t>(j)];
        w_cols.col(j) = w.col(col);
        hinv_rows.row(j) = hess.inverse().row(col);
    }
    const Matrix delta = w_cols - what_q;
    Matrix out = w;
    out.noalias() -= delta * metric * hinv_rows;

    double resid = 0.0;
    for (Index j = 0; j < width; ++j) {
        const Index col = q.indices[static_cast<std::size_t>(j)];
        resid = std::max(resid, (out.col(col) - what_q.col(j)).cwiseAbs().maxCoeff());
        out.col(col) = what_q.col(j); // the equality constraint, applied exactly
    }
    if (formula_residual != nullptr) {
        *formula_residual = resid;
    }
    return out;
}

Int8Codebook quantize_codebook_int8(const Matrix& centroids) {
    const Index n = centroids.rows();
    const Index w = centroids.cols();
    Int8Codebook q;
    q.mins = centroids.colwise().minCoeff();
    q.maxs = centroids.colwise().maxCoeff();
    q.bytes.resize(static_cast<std::size_t>(n * w));
    for (Index i = 0; i < n; ++i) {
        for (Index l = 0; l < w; ++l) {
            const double range = q.maxs(l) - q.mins(l);
            long byte = 0;
            if (range > 0.0) {
                byte = std::lround(255.0 * (centroids(i, l) - q.mins(l)) / range);
                byte = std::clamp(byte, 0L, 255L);
            }
            q.bytes[static_cast<std::size_t>(i * w + l)] = static_cast<std::uint8_t>(byte);
        }
    }
    return q;
}

Matrix dequantize_int8(const Int8Codebook& q, Index n, Index w) {
    Matrix out(n, w);
    for (Index i = 0; i < n; ++i) {
        for (Index l = 0; l < w; ++l) {
            const double range = q.maxs(l) - q.mins(l);
            out(i, l) = q.mins(l) +
                        static_cast<double>(q.bytes[static_cast<std::size_t>(i * w + l)]) /
                            255.0 * range;
        }
    }
    return out;
}

std::pair<Matrix, Matrix> residual_lowrank(const Matrix& w, const Matrix& what,
                                           const HessianState& hess, Index r) {
    if (w.rows() != what.rows() || w.cols() != what.cols()) {
        throw ValidationError("residual shape mismatch");
    }
    if (hess.dim() != w.cols()) {
        throw ValidationError("Hessian dimension does not match weight columns");
    }
    if (r < 0 || r > std::min(w.rows(), w.cols())) {
        throw ValidationError("rank r out of range");
    }
    if (r == 0) {
        return {Matrix(w.rows(), 0), Matrix(0, w.cols())};
    }
    const Matrix residual = w - what;
    const Matrix s = residual * hess.cholesky_factor();
    Eigen::BDCSVD<Matrix> svd(s, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) {
        throw NumericalError("SVD of the weighted residual failed");
    }
    const Matrix a =
        svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal();
    // B = V_r^T U^-1 via the triangular solve U^T X = V_r.
    const Matrix vr = svd.matrixV().leftCols(r);
    const Matrix bt = hess.cholesky_factor()
                          .transpose()
                          .triangularView<Eigen::Upper>()
                          .solve(vr);
    return {a, bt.transpose()};
}

double proxy_loss(const Matrix& w, const Matrix& what_full, const HessianState& hess) {
    if (w.rows() != what_full.rows() || w.cols() != what_full.cols()) {
        throw ValidationError("proxy loss shape mismatch");
    }
    if (hess.dim() != w.cols()) {
        throw ValidationError("Hessian dimension does not match weight columns");
    }
    const Matrix residual = w - what_full;
    return (residual * hess.hessian()).cwiseProduct(residual).sum();
}

GroupCandidate build_group_candidate(const Matrix& w_cur, const GroupPlan& plan, Index g,
                                     const HessianState& hess, const QuantConfig& cfg,
                                     const QuantizedLayer* warm) {
    const GroupSelector& q = plan.groups[static_cast<std::size_t>(g)];
    const Index width = q.size();
    const Index first = q.indices.front();
    const Matrix metric = hess.metric(q);
    const Index num_blocks = (w_cur.rows() + cfg.k - 1) / cfg.k;

    GroupCandidate cand;
    cand.group = g;
    cand.blocks.reserve(static_cast<std::size_t>(num_blocks));
    for (Index b = 0; b < num_blocks; ++b) {
        const Index r0 = b * cfg.k;
        const Index nb = std::min(cfg.k, w_cur.rows() - r0);
        const Matrix points = w_cur.block(r0, first, nb, width);
        Matrix init(0, width);
        if (warm != nullptr) {
            const CellCodebook& wc = warm->cell(b, g);
            init = wc.effective(warm->config.n, width, warm->config.codebook_int8);
        }
        vq::KmeansResult km = vq::weighted_kmeans_seeded(
            points, metric, init, cfg.n, derive_seed(cfg.seed, static_cast<std::uint64_t>(g),
                                                     static_cast<std::uint64_t>(b)),
            cfg.kmeans_max_iters);
        km = vq::flip_improve(points, metric, km.codebook, km.assignment, cfg.flip_passes);
        cand.loss += group_loss(points, reconstruct_rows(km.codebook.centroids, km.assignment),
                                metric);
        cand.blocks.push_back(std::move(km));
    }
    return cand;
}

GroupCandidate select_group(const Matrix& w_cur, const GroupPlan& plan,
                            const HessianState& hess, const QuantConfig& cfg,
                            const QuantizeOptions& opts) {
    GroupCandidate best;
    for (std::size_t g = 0; g < plan.groups.size(); ++g) {
        if (!plan.remaining[g]) {
            continue;
        }
        GroupCandidate cand = build_group_candidate(w_cur, plan, static_cast<Index>(g), hess,
                                                    cfg, opts.warm_start);
        if (best.group < 0 || cand.loss < best.loss) {
            best = std::move(cand);
        }
        if (opts.fast_order) {
            break; // fixed left-to-right order: first remaining group wins
        }
    }
    if (best.group < 0) {
        throw ValidationError("no remaining groups to select");
    }
    return best;
}

Matrix reconstruct_codebooks(const QuantizedLayer& layer) {
    Matrix out(layer.rows, layer.cols);
    const Index num_groups = layer.num_groups();
    for (Index b = 0; b < layer.num_blocks(); ++b) {
        const Index r0 = b * layer.config.k;
        for (Index g = 0; g < num_groups; ++g) {
            const Index width = layer.group_width(g);
            const Matrix eff =
                layer.cell(b, g).effective(layer.config.n, width, layer.config.codebook_int8);
            for (Index i = 0; i < layer.block_rows(b); ++i) {
                out.block(r0 + i, g * layer.config.d, 1, width) =
                    eff.row(static_cast<Index>(layer.index(r0 + i, g)));
            }
        }
    }
    return out;
}

QuantizeResult quantize_matrix(const Matrix& w, HessianState hess, const QuantConfig& cfg,
                               const QuantizeOptions& opts) {
    validate_config(cfg, w.rows(), w.cols());
    if (!w.allFinite()) {
        throw ValidationError("weights contain non-finite values");
    }
    if (hess.dim() != w.cols()) {
        throw ValidationError("Hessian dimension " + std::to_string(hess.dim()) +
                              " does not match weight columns " + std::to_string(w.cols()));
    }
    if (opts.warm_start != nullptr) {
        validate_warm_start(*opts.warm_start, cfg, w.rows(), w.cols());
    }

    QuantizeResult result;
    QuantizedLayer& layer = result.layer;
    layer.rows = w.rows();
    layer.cols = w.cols();
    layer.config = cfg;
    const Index num_groups = layer.num_groups();
    const Index num_blocks = layer.num_blocks();
    layer.index.setZero(w.rows(), num_groups);
    layer.codebooks.resize(static_cast<std::size_t>(num_groups * num_blocks));

    GroupPlan plan = GroupPlan::build(w.cols(), cfg.d);
    Matrix w_cur = w;
    while (plan.remaining_count() > 0) {
        GroupCandidate cand = select_group(w_cur, plan, hess, cfg, opts);
        const Index g = cand.group;
        const GroupSelector& q = plan.groups[static_cast<std::size_t>(g)];
        const Index width = q.size();

        Matrix what_q(w.rows(), width);
        for (Index b = 0; b < num_blocks; ++b) {
            const vq::KmeansResult& km = cand.blocks[static_cast<std::size_t>(b)];
            CellCodebook cell = make_cell(km.codebook.centroids, cfg.codebook_int8);
            const Matrix eff = cell.effective(cfg.n, width, cfg.codebook_int8);
            const Index r0 = b * cfg.k;
            for (Index i = 0; i < layer.block_rows(b); ++i) {
                const auto entry = km.assignment[static_cast<std::size_t>(i)];
                layer.index(r0 + i, g) = entry;
                what_q.row(r0 + i) = eff.row(static_cast<Index>(entry));
            }
            layer.codebooks[static_cast<std::size_t>(b * num_groups + g)] = std::move(cell);
        }

        double resid = 0.0;
        w_cur = compensate(w_cur, q, what_q, hess, &resid);
        hess.eliminate(q);
        plan.remaining[static_cast<std::size_t>(g)] = 0;
        result.stats.order.push_back(g);
        result.stats.selection_loss.push_back(cand.loss);
        result.stats.constraint_residual.push_back(resid);
    }

    if (cfg.lowrank_r > 0) {
        const Matrix what_cb = reconstruct_codebooks(layer);
        auto [a, b] = residual_lowrank(w, what_cb, hess, cfg.lowrank_r);
        layer.lowrank_a = canonical_fp16(a);
        layer.lowrank_b = canonical_fp16(b);
    }
    return result;
}

QuantizedLayer quantize_rtn(const Matrix& w, const QuantConfig& cfg) {
    validate_config(cfg, w.rows(), w.cols());
    if (!w.allFinite()) {
        throw ValidationError("weights contain non-finite values");
    }
    QuantizedLayer layer;
    layer.rows = w.rows();
    layer.cols = w.cols();
    layer.config = cfg;
    layer.config.lowrank_r = 0;
    const Index num_groups = layer.num_groups();
    const Index num_blocks = layer.num_blocks();
    layer.index.setZero(w.rows(), num_groups);
    layer.codebooks.resize(static_cast<std::size_t>(num_groups * num_blocks));

    for (Index g = 0; g < num_groups; ++g) {
        const Index first = g * cfg.d;
        const Index width = layer.group_width(g);
        const Matrix metric = Matrix::Identity(width, width);
        for (Index b = 0; b < num_blocks; ++b) {
            const Index r0 = b * cfg.k;
            const Index nb = layer.block_rows(b);
            const Matrix points = w.block(r0, first, nb, width);
            vq::KmeansResult km = vq::weighted_kmeans(
                points, metric, cfg.n,
                derive_seed(cfg.seed, static_cast<std::uint64_t>(g),
                            static_cast<std::uint64_t>(b)),
                cfg.kmeans_max_iters);
            km = vq::flip_improve(points, metric, km.codebook, km.assignment, cfg.flip_passes);
            CellCodebook cell = make_cell(km.codebook.centroids, cfg.codebook_int8);
            for (Index i = 0; i < nb; ++i) {
                layer.index(r0 + i, g) = km.assignment[static_cast<std::size_t>(i)];
            }
            layer.codebooks[static_cast<std::size_t>(b * num_groups + g)] = std::move(cell);
        }
    }
    return layer;
}

} // namespace atq
