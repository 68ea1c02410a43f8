#include "atq/vq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "atq/errors.hpp"
#include "atq/rng.hpp"

namespace atq::vq {

namespace {

double quad_form(const Eigen::RowVectorXd& diff, const Matrix& metric) {
    return diff * metric * diff.transpose();
}

void check_inputs(const Matrix& points, const Matrix& metric) {
    if (points.rows() < 1 || points.cols() < 1) {
        throw ValidationError("point set must be nonempty");
    }
    if (metric.rows() != points.cols() || metric.cols() != points.cols()) {
        throw ValidationError("metric is " + std::to_string(metric.rows()) + "x" +
                              std::to_string(metric.cols()) + ", points have dimension " +
                              std::to_string(points.cols()));
    }
}

// Continued k-means++ sampling: rows [0, have) of centroids are fixed, the
// rest are drawn proportionally to the current squared metric distance.
void kmeanspp_fill(const Matrix& points, const Matrix& metric, Matrix& centroids,
                   Index have, Xoshiro256& rng) {
    const Index p = points.rows();
    const Index n = centroids.rows();
    std::vector<double> mindist(static_cast<std::size_t>(p),
                                std::numeric_limits<double>::infinity());
    if (have == 0) {
        const Index first = static_cast<Index>(rng.bounded(static_cast<std::uint64_t>(p)));
        centroids.row(0) = points.row(first);
        have = 1;
    }
    for (Index c = 0; c < have; ++c) {
        for (Index i = 0; i < p; ++i) {
            const double d = quad_form(points.row(i) - centroids.row(c), metric);
            mindist[static_cast<std::size_t>(i)] =
                std::min(mindist[static_cast<std::size_t>(i)], d);
        }
    }
    for (Index c = have; c < n; ++c) {
        double total = 0.0;
        for (double d : mindist) {
            total += d;
        }
        Index chosen;
        if (total > 0.0) {
            const double target = rng.uniform01() * total;
            double cum = 0.0;
            chosen = p - 1;
            for (Index i = 0; i < p; ++i) {
                cum += mindist[static_cast<std::size_t>(i)];
                if (cum > target) {
                    chosen = i;
                    break;
                }
            }
        } else {
            // every point already coincides with a centroid; cycle through
            chosen = c % p;
        }
        centroids.row(c) = points.row(chosen);
        for (Index i = 0; i < p; ++i) {
            const double d = quad_form(points.row(i) - centroids.row(c), metric);
            mindist[static_cast<std::size_t>(i)] =
                std::min(mindist[static_cast<std::size_t>(i)], d);
        }
    }
}

// Core Lloyd iteration from an initial codebook. On natural convergence the
// returned pair satisfies both optimality conditions.
KmeansResult lloyd(const Matrix& points, const Matrix& metric, Codebook cb, int max_iters) {
    Assignment asg = assign(points, cb, metric);
    double prev_loss = total_loss(points, cb, asg, metric);
    for (int iter = 0; iter < max_iters; ++iter) {
        cb = update_centroids(points, asg, cb.size());
        Assignment next = assign(points, cb, metric);
        const double loss = total_loss(points, cb, next, metric);
        if (loss > prev_loss * (1.0 + 1e-12) + 1e-12) {
            throw NumericalError("k-means loss increased from " + std::to_string(prev_loss) +
                                 " to " + std::to_string(loss));
        }
        prev_loss = loss;
        if (next == asg) {
            break;
        }
        asg = std::move(next);
    }
    return {std::move(cb), std::move(asg)};
}

} // namespace

double weighted_distance(const Eigen::VectorXd& p, const Eigen::VectorXd& c,
                         const Matrix& metric) {
    const Eigen::RowVectorXd diff = (p - c).transpose();
    return quad_form(diff, metric);
}

Assignment assign(const Matrix& points, const Codebook& cb, const Matrix& metric) {
    check_inputs(points, metric);
    if (cb.dim() != points.cols()) {
        throw ValidationError("codebook dimension mismatch");
    }
    Assignment asg(static_cast<std::size_t>(points.rows()));
    for (Index i = 0; i < points.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t best_c = 0;
        for (Index c = 0; c < cb.size(); ++c) {
            const double d = quad_form(points.row(i) - cb.centroids.row(c), metric);
            if (d < best) {
                best = d;
                best_c = static_cast<std::uint32_t>(c);
            }
        }
        asg[static_cast<std::size_t>(i)] = best_c;
    }
    return asg;
}

Codebook update_centroids(const Matrix& points, const Assignment& asg, Index n) {
    const Index p = points.rows();
    if (static_cast<Index>(asg.size()) != p) {
        throw ValidationError("assignment length mismatch");
    }
    Matrix sums = Matrix::Zero(n, points.cols());
    std::vector<Index> counts(static_cast<std::size_t>(n), 0);
    for (Index i = 0; i < p; ++i) {
        const auto c = asg[static_cast<std::size_t>(i)];
        if (c >= static_cast<std::uint32_t>(n)) {
            throw ValidationError("assignment index " + std::to_string(c) + " out of range");
        }
        sums.row(static_cast<Index>(c)) += points.row(i);
        ++counts[c];
    }
    Codebook cb{Matrix::Zero(n, points.cols())};
    for (Index c = 0; c < n; ++c) {
        if (counts[static_cast<std::size_t>(c)] > 0) {
            cb.centroids.row(c) =
                sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        }
    }
    // Re-seed empty clusters at the point farthest from its own centroid.
    std::vector<double> dist(static_cast<std::size_t>(p));
    bool have_dist = false;
    std::vector<char> used(static_cast<std::size_t>(p), 0);
    for (Index c = 0; c < n; ++c) {
        if (counts[static_cast<std::size_t>(c)] > 0) {
            continue;
        }
        if (!have_dist) {
            for (Index i = 0; i < p; ++i) {
                dist[static_cast<std::size_t>(i)] =
                    (points.row(i) - cb.centroids.row(static_cast<Index>(asg[static_cast<std::size_t>(i)])))
                        .squaredNorm();
            }
            have_dist = true;
        }
        Index far = -1;
        double best = -1.0;
        for (Index i = 0; i < p; ++i) {
            if (!used[static_cast<std::size_t>(i)] && dist[static_cast<std::size_t>(i)] > best) {
                best = dist[static_cast<std::size_t>(i)];
                far = i;
            }
        }
        if (far < 0) {
            far = c % p; // more empty clusters than points: cycle
        } else {
            used[static_cast<std::size_t>(far)] = 1;
        }
        cb.centroids.row(c) = points.row(far);
    }
    return cb;
}

double total_loss(const Matrix& points, const Codebook& cb, const Assignment& asg,
                  const Matrix& metric) {
    double loss = 0.0;
    for (Index i = 0; i < points.rows(); ++i) {
        loss += quad_form(
            points.row(i) - cb.centroids.row(static_cast<Index>(asg[static_cast<std::size_t>(i)])),
            metric);
    }
    return loss;
}

KmeansResult weighted_kmeans(const Matrix& points, const Matrix& metric, Index n,
                             std::uint64_t seed, int max_iters) {
    return weighted_kmeans_seeded(points, metric, Matrix(0, points.cols()), n, seed, max_iters);
}

KmeansResult weighted_kmeans_seeded(const Matrix& points, const Matrix& metric,
                                    const Matrix& init, Index n, std::uint64_t seed,
                                    int max_iters) {
    check_inputs(points, metric);
    if (n < 1) {
        throw ValidationError("codebook size must be at least 1");
    }
    if (init.rows() > n) {
        throw ValidationError("warm start has more centroids than requested");
    }
    if (init.rows() > 0 && init.cols() != points.cols()) {
        throw ValidationError("warm start dimension mismatch");
    }
    Matrix centroids(n, points.cols());
    if (init.rows() > 0) {
        centroids.topRows(init.rows()) = init;
    }
    Xoshiro256 rng(seed);
    kmeanspp_fill(points, metric, centroids, init.rows(), rng);
    return lloyd(points, metric, Codebook{std::move(centroids)}, max_iters);
}

KmeansResult flip_improve(const Matrix& points, const Matrix& metric, const Codebook& cb,
                          const Assignment& asg, int max_passes) {
    check_inputs(points, metric);
    const Index p = points.rows();
    const Index n = cb.size();
    const double input_loss = total_loss(points, cb, asg, metric);

    KmeansResult cur{cb, asg};
    for (int pass = 0; pass < max_passes; ++pass) {
        // exact per-cluster sizes and means for delta evaluation
        std::vector<Index> counts(static_cast<std::size_t>(n), 0);
        Matrix means = Matrix::Zero(n, points.cols());
        for (Index i = 0; i < p; ++i) {
            const auto c = cur.assignment[static_cast<std::size_t>(i)];
            ++counts[c];
            means.row(static_cast<Index>(c)) += points.row(i);
        }
        for (Index c = 0; c < n; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                means.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
            } else {
                means.row(c) = cur.codebook.centroids.row(c);
            }
        }

        bool moved = false;
        for (Index i = 0; i < p; ++i) {
            const Index a = static_cast<Index>(cur.assignment[static_cast<std::size_t>(i)]);
            const Index ma = counts[static_cast<std::size_t>(a)];
            if (ma <= 1) {
                continue; // moving a singleton can never strictly improve
            }
            const double d_a = quad_form(points.row(i) - means.row(a), metric);
            const double gain = (static_cast<double>(ma) / static_cast<double>(ma - 1)) * d_a;
            double best_delta = 0.0;
            Index best_b = -1;
            for (Index b = 0; b < n; ++b) {
                if (b == a) {
                    continue;
                }
                const Index mb = counts[static_cast<std::size_t>(b)];
                const double d_b = quad_form(points.row(i) - means.row(b), metric);
                const double cost =
                    (static_cast<double>(mb) / static_cast<double>(mb + 1)) * d_b;
                const double delta = cost - gain;
                if (delta < best_delta) {
                    best_delta = delta;
                    best_b = b;
                }
            }
            if (best_b >= 0) {
                const Index mb = counts[static_cast<std::size_t>(best_b)];
                means.row(a) = (means.row(a) * static_cast<double>(ma) - points.row(i)) /
                               static_cast<double>(ma - 1);
                means.row(best_b) = (means.row(best_b) * static_cast<double>(mb) + points.row(i)) /
                                    static_cast<double>(mb + 1);
                counts[static_cast<std::size_t>(a)] = ma - 1;
                counts[static_cast<std::size_t>(best_b)] = mb + 1;
                cur.assignment[static_cast<std::size_t>(i)] =
                    static_cast<std::uint32_t>(best_b);
                moved = true;
            }
        }
        if (!moved) {
            break;
        }
        cur.codebook = update_centroids(points, cur.assignment, n);
        cur = lloyd(points, metric, cur.codebook, 100);
    }

    if (total_loss(points, cur.codebook, cur.assignment, metric) > input_loss) {
        return {cb, asg};
    }
    return cur;
}

bool verify_lloyd(const Matrix& points, const Matrix& metric, const Codebook& cb,
                  const Assignment& asg) {
    const Index p = points.rows();
    const Index n = cb.size();
    if (static_cast<Index>(asg.size()) != p) {
        return false;
    }
    for (Index i = 0; i < p; ++i) {
        if (asg[static_cast<std::size_t>(i)] >= static_cast<std::uint32_t>(n)) {
            return false;
        }
        const double own = quad_form(
            points.row(i) - cb.centroids.row(static_cast<Index>(asg[static_cast<std::size_t>(i)])),
            metric);
        for (Index c = 0; c < n; ++c) {
            if (own > quad_form(points.row(i) - cb.centroids.row(c), metric) + 1e-9) {
                return false;
            }
        }
    }
    Matrix sums = Matrix::Zero(n, points.cols());
    std::vector<Index> counts(static_cast<std::size_t>(n), 0);
    for (Index i = 0; i < p; ++i) {
        sums.row(static_cast<Index>(asg[static_cast<std::size_t>(i)])) += points.row(i);
        ++counts[asg[static_cast<std::size_t>(i)]];
    }
    for (Index c = 0; c < n; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0) {
            continue;
        }
        const Eigen::RowVectorXd mean =
            sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        if ((mean - cb.centroids.row(c)).cwiseAbs().maxCoeff() > 1e-9) {
            return false;
        }
    }
    return true;
}

} // namespace atq::vq
