#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "atq/tensor_file.hpp"

namespace atq::vq {

// Codebook of n centroids of dimension d, fitted under the quadratic metric
// dist(p, c) = (p - c)^T G (p - c) with G symmetric positive definite.
struct Codebook {
    Matrix centroids; // n x d

    Index size() const { return centroids.rows(); }
    Index dim() const { return centroids.cols(); }
};

using Assignment = std::vector<std::uint32_t>;

struct KmeansResult {
    Codebook codebook;
    Assignment assignment;
};

double weighted_distance(const Eigen::VectorXd& p, const Eigen::VectorXd& c, const Matrix& metric);

// Nearest centroid per point; ties break toward the lowest centroid index.
Assignment assign(const Matrix& points, const Codebook& cb, const Matrix& metric);

// Per-cluster arithmetic means (the optimal centroid under any fixed SPD
// metric, so this is metric-free). An empty cluster is re-seeded at the
// point with the largest Euclidean distance to its assigned centroid,
// processed in increasing cluster index with each repair point used once.
Codebook update_centroids(const Matrix& points, const Assignment& asg, Index n);

// Sum over points of the quadratic form against the assigned centroid.
double total_loss(const Matrix& points, const Codebook& cb, const Assignment& asg,
                  const Matrix& metric);

// Lloyd iteration with k-means++ seeding under the metric. Deterministic for
// a fixed seed; the loss is non-increasing across iterations.
KmeansResult weighted_kmeans(const Matrix& points, const Matrix& metric, Index n,
                             std::uint64_t seed, int max_iters = 100);

// Warm-started variant: starts from init (m <= n rows) and draws the
// remaining centroids by continued k-means++ sampling.
KmeansResult weighted_kmeans_seeded(const Matrix& points, const Matrix& metric,
                                    const Matrix& init, Index n, std::uint64_t seed,
                                    int max_iters = 100);

// Local search on top of a Lloyd-converged state: sweeps points in index
// order, moves one to whichever cluster strictly lowers the total loss with
// both affected means re-optimized (exact delta), then re-runs Lloyd; stops
// when a full sweep makes no move or after max_passes sweeps. Never returns
// a higher loss than its input.
KmeansResult flip_improve(const Matrix& points, const Matrix& metric, const Codebook& cb,
                          const Assignment& asg, int max_passes);

// True iff every point sits with a nearest centroid (1e-9 slack) and every
// nonempty centroid equals its cluster mean (1e-9 max-abs).
bool verify_lloyd(const Matrix& points, const Matrix& metric, const Codebook& cb,
                  const Assignment& asg);

} // namespace atq::vq
