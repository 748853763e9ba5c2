#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>

namespace qdgs {

/// A point in the generator's latent space.
using LatentSolution = Eigen::VectorXd;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

using Rng = std::mt19937_64;

} // namespace qdgs
