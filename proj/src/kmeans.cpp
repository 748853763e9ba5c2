#include "qdgs/kmeans.hpp"

#include "qdgs/error.hpp"

#include <limits>

namespace qdgs {

int nearest_centroid(const Matrix& centroids, const Vector& x)
{
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < centroids.rows(); ++c) {
        const double d = (centroids.row(c).transpose() - x).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

namespace {

Matrix seed_plus_plus(const Matrix& points, int k, Rng& rng)
{
    const Eigen::Index n = points.rows();
    Matrix centroids(k, points.cols());
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    centroids.row(0) = points.row(pick(rng));

    Vector d2(n);
    for (Eigen::Index i = 0; i < n; ++i) d2(i) = (points.row(i) - centroids.row(0)).squaredNorm();

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int c = 1; c < k; ++c) {
        const double total = d2.sum();
        Eigen::Index chosen = 0;
        if (total <= 0.0) {
            chosen = pick(rng); // every point already coincides with a centroid
        } else {
            double r = unit(rng) * total;
            chosen = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                r -= d2(i);
                if (r < 0.0 && d2(i) > 0.0) {
                    chosen = i;
                    break;
                }
            }
        }
        centroids.row(c) = points.row(chosen);
        for (Eigen::Index i = 0; i < n; ++i)
            d2(i) = std::min(d2(i), (points.row(i) - centroids.row(c)).squaredNorm());
    }
    return centroids;
}

} // namespace

KMeansResult kmeans(const Matrix& points, int k, Rng& rng, int max_iter)
{
    const Eigen::Index n = points.rows();
    if (n == 0) throw ConfigError("kmeans: no points");
    if (k < 1 || k > n) throw ConfigError("kmeans: k must be in [1, number of points]");
    if (max_iter < 1) throw ConfigError("kmeans: max_iter must be >= 1");

    KMeansResult result;
    result.centroids = seed_plus_plus(points, k, rng);
    result.assignment.assign(static_cast<std::size_t>(n), -1);

    for (int it = 0; it < max_iter; ++it) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            const int c = nearest_centroid(result.centroids, points.row(i).transpose());
            if (c != result.assignment[i]) {
                result.assignment[i] = c;
                changed = true;
            }
        }
        result.iterations = it + 1;
        if (!changed) {
            result.converged = true;
            break;
        }
        Matrix sums = Matrix::Zero(k, points.cols());
        std::vector<int> counts(k, 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(result.assignment[i]) += points.row(i);
            ++counts[result.assignment[i]];
        }
        for (int c = 0; c < k; ++c)
            if (counts[c] > 0) result.centroids.row(c) = sums.row(c) / counts[c];
    }
    return result;
}

} // namespace qdgs
