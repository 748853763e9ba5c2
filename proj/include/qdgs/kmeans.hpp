#pragma once

#include "qdgs/types.hpp"

#include <vector>

namespace qdgs {

struct KMeansResult {
    Matrix centroids;             // k × d
    std::vector<int> assignment;  // one cluster id per point
    int iterations = 0;
    bool converged = false;
};

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or max_iter is reached. Points are rows. Distance ties go to the
/// lowest centroid index; an emptied cluster keeps its previous centroid.
KMeansResult kmeans(const Matrix& points, int k, Rng& rng, int max_iter = 100);

/// Index of the centroid nearest to x (lowest index on ties).
int nearest_centroid(const Matrix& centroids, const Vector& x);

} // namespace qdgs
