#pragma once

#include "qdgs/archive.hpp"
#include "qdgs/types.hpp"

#include <nlohmann/json_fwd.hpp>

#include <span>
#include <vector>

namespace qdgs {

/// Truncated log-rank weights over the better half: w_i ∝ ln(λ/2 + 0.5) − ln(i),
/// i = 1..⌈λ/2⌉, normalized to sum 1.
std::vector<double> log_rank_weights(int lambda);

/// Indices sorted by delta descending; ties keep the lower index first.
std::vector<int> rank_by_delta(std::span<const double> deltas);

/// Gaussian over the k+1 branching coefficients, adapted CMA-ES style.
/// The sampling covariance is sigma² · C.
struct CoeffDistribution {
    Vector mean;
    double sigma = 0.5;
    Matrix C;
    Vector path_sigma;
    Vector path_c;
    int generation = 0;

    static CoeffDistribution fresh(int dim, double sigma_g);
    Matrix covariance() const { return sigma * sigma * C; }
    bool operator==(const CoeffDistribution& other) const;
};

struct EmitterConfig {
    double eta = 0.5;
    int lambda = 32;
    double sigma_g = 0.5;

    void validate() const;
};

/// θ' = θ + |c₀|·∇f + Σⱼ cⱼ·∇mⱼ. grad_m holds one measure gradient per column.
LatentSolution branch(const LatentSolution& theta, const Vector& grad_f, const Matrix& grad_m, const Vector& c);

class Emitter {
public:
    Emitter(LatentSolution theta0, int num_measures, EmitterConfig config = {});

    const LatentSolution& theta() const { return theta_; }
    const LatentSolution& theta0() const { return theta0_; }
    const CoeffDistribution& distribution() const { return dist_; }
    const EmitterConfig& config() const { return config_; }
    int coeff_dim() const { return static_cast<int>(dist_.mean.size()); }

    void set_theta(LatentSolution theta) { theta_ = std::move(theta); }
    void set_distribution(CoeffDistribution dist) { dist_ = std::move(dist); }

    /// λ i.i.d. draws from N(mean, sigma² C). Throws InternalError if C is not PD.
    std::vector<Vector> sample_coeffs(Rng& rng) const;

    /// θ ← θ + η Σ wᵢ (θ'ᵢ − θ) over the Δ-ranked branches.
    void ranked_ascent(std::span<const LatentSolution> branches, std::span<const double> deltas);

    /// Rank-μ / cumulative step-size update of the coefficient distribution.
    /// Returns false when the update went numerically bad (caller restarts).
    bool adapt(std::span<const Vector> coeffs, std::span<const double> deltas);

    /// Resets the distribution and jumps to a random elite (θ₀ if the archive is empty).
    void restart(const Archive& archive, Rng& rng);

    /// Restarts iff the archive did not change this iteration. Returns whether it did.
    bool maybe_restart(bool archive_changed, const Archive& archive, Rng& rng);

    nlohmann::json to_json() const;

private:
    EmitterConfig config_;
    LatentSolution theta0_;
    LatentSolution theta_;
    CoeffDistribution dist_;
};

} // namespace qdgs
