#include "qdgs/emitter.hpp"

#include "qdgs/error.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace qdgs {

std::vector<double> log_rank_weights(int lambda)
{
    if (lambda < 1)
        throw InternalError("rank weights need a non-empty population");
    const int mu = (lambda + 1) / 2;
    std::vector<double> w(static_cast<std::size_t>(mu));
    const double top = std::log(lambda / 2.0 + 0.5);
    for (int i = 0; i < mu; ++i)
        w[static_cast<std::size_t>(i)] = top - std::log(i + 1.0);
    const double sum = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto& x : w)
        x /= sum;
    return w;
}

std::vector<int> rank_by_delta(std::span<const double> deltas)
{
    std::vector<int> order(deltas.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return deltas[static_cast<std::size_t>(a)] > deltas[static_cast<std::size_t>(b)];
    });
    return order;
}

CoeffDistribution CoeffDistribution::fresh(int dim, double sigma_g)
{
    CoeffDistribution d;
    d.mean = Vector::Zero(dim);
    d.sigma = sigma_g;
    d.C = Matrix::Identity(dim, dim);
    d.path_sigma = Vector::Zero(dim);
    d.path_c = Vector::Zero(dim);
    d.generation = 0;
    return d;
}

bool CoeffDistribution::operator==(const CoeffDistribution& o) const
{
    return mean == o.mean && sigma == o.sigma && C == o.C && path_sigma == o.path_sigma && path_c == o.path_c
           && generation == o.generation;
}

void EmitterConfig::validate() const
{
    if (lambda < 2)
        throw ConfigError("branch population lambda must be >= 2");
    if (!(eta > 0.0))
        throw ConfigError("learning rate eta must be > 0");
    if (!(sigma_g >= 0.0) || !std::isfinite(sigma_g))
        throw ConfigError("branch step sigma_g must be finite and >= 0");
}

LatentSolution branch(const LatentSolution& theta, const Vector& grad_f, const Matrix& grad_m, const Vector& c)
{
    if (grad_f.size() != theta.size() || grad_m.rows() != theta.size())
        throw ConfigError("gradient dimension does not match the latent dimension");
    if (c.size() != grad_m.cols() + 1)
        throw ConfigError("coefficient vector must have k+1 entries");
    return theta + std::abs(c[0]) * grad_f + grad_m * c.tail(c.size() - 1);
}

Emitter::Emitter(LatentSolution theta0, int num_measures, EmitterConfig config)
    : config_(config), theta0_(std::move(theta0)), theta_(theta0_),
      dist_(CoeffDistribution::fresh(num_measures + 1, config.sigma_g))
{
    config_.validate();
    if (num_measures < 1)
        throw ConfigError("emitter needs at least one measure");
}

std::vector<Vector> Emitter::sample_coeffs(Rng& rng) const
{
    const int n = coeff_dim();
    Eigen::LLT<Matrix> llt(dist_.C);
    if (llt.info() != Eigen::Success)
        throw InternalError("coefficient covariance is not positive definite");
    const Matrix L = llt.matrixL();

    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Vector> out;
    out.reserve(static_cast<std::size_t>(config_.lambda));
    for (int i = 0; i < config_.lambda; ++i) {
        Vector z(n);
        for (int d = 0; d < n; ++d)
            z[d] = normal(rng);
        out.push_back(dist_.mean + dist_.sigma * (L * z));
    }
    return out;
}

void Emitter::ranked_ascent(std::span<const LatentSolution> branches, std::span<const double> deltas)
{
    if (branches.empty())
        throw InternalError("ranked ascent over an empty branch set");
    if (branches.size() != deltas.size())
        throw InternalError("branch and delta counts differ");
    const auto order = rank_by_delta(deltas);
    const auto w = log_rank_weights(static_cast<int>(branches.size()));
    Vector step = Vector::Zero(theta_.size());
    for (std::size_t r = 0; r < w.size(); ++r)
        step += w[r] * (branches[static_cast<std::size_t>(order[r])] - theta_);
    theta_ += config_.eta * step;
}

bool Emitter::adapt(std::span<const Vector> coeffs, std::span<const double> deltas)
{
    if (coeffs.size() != deltas.size() || coeffs.empty())
        throw InternalError("adapt needs one delta per coefficient sample");
    const int n = coeff_dim();
    const double nd = n;
    const auto order = rank_by_delta(deltas);
    const auto w = log_rank_weights(static_cast<int>(coeffs.size()));

    double sum_sq = 0.0;
    for (double x : w)
        sum_sq += x * x;
    const double mu_eff = 1.0 / sum_sq;

    const double c_sigma = (mu_eff + 2.0) / (nd + mu_eff + 5.0);
    const double d_sigma = 1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff - 1.0) / (nd + 1.0)) - 1.0) + c_sigma;
    const double c_c = (4.0 + mu_eff / nd) / (nd + 4.0 + 2.0 * mu_eff / nd);
    const double c_1 = 2.0 / ((nd + 1.3) * (nd + 1.3) + mu_eff);
    const double c_mu = std::min(1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nd + 2.0) * (nd + 2.0) + mu_eff));
    const double chi_n = std::sqrt(nd) * (1.0 - 1.0 / (4.0 * nd) + 1.0 / (21.0 * nd * nd));

    auto& d = dist_;
    if (!(d.sigma > 0.0))
        return true; // degenerate distribution, nothing to adapt

    const Vector old_mean = d.mean;
    Vector y_w = Vector::Zero(n);
    Matrix rank_mu = Matrix::Zero(n, n);
    for (std::size_t r = 0; r < w.size(); ++r) {
        const Vector y = (coeffs[static_cast<std::size_t>(order[r])] - old_mean) / d.sigma;
        y_w += w[r] * y;
        rank_mu += w[r] * y * y.transpose();
    }
    d.mean = old_mean + d.sigma * y_w;

    Eigen::SelfAdjointEigenSolver<Matrix> eig(d.C);
    if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() <= 0.0)
        return false;
    const Matrix inv_sqrt_C =
        eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();

    d.path_sigma = (1.0 - c_sigma) * d.path_sigma + std::sqrt(c_sigma * (2.0 - c_sigma) * mu_eff) * (inv_sqrt_C * y_w);
    ++d.generation;
    const double ps_norm = d.path_sigma.norm();
    const double h_denom = std::sqrt(1.0 - std::pow(1.0 - c_sigma, 2.0 * d.generation));
    const bool h_sigma = ps_norm / h_denom < (1.4 + 2.0 / (nd + 1.0)) * chi_n;

    d.path_c = (1.0 - c_c) * d.path_c + (h_sigma ? std::sqrt(c_c * (2.0 - c_c) * mu_eff) : 0.0) * y_w;
    const double delta_h = h_sigma ? 0.0 : c_c * (2.0 - c_c);
    d.C = (1.0 - c_1 - c_mu + c_1 * delta_h) * d.C + c_1 * d.path_c * d.path_c.transpose() + c_mu * rank_mu;
    d.C = (0.5 * (d.C + d.C.transpose())).eval();
    d.sigma *= std::exp((c_sigma / d_sigma) * (ps_norm / chi_n - 1.0));

    if (!std::isfinite(d.sigma) || d.sigma > 1e6 || !d.mean.allFinite() || !d.C.allFinite())
        return false;
    Eigen::LLT<Matrix> llt(d.C);
    return llt.info() == Eigen::Success;
}

void Emitter::restart(const Archive& archive, Rng& rng)
{
    dist_ = CoeffDistribution::fresh(coeff_dim(), config_.sigma_g);
    theta_ = archive.empty() ? theta0_ : archive.sample_elite(rng).theta;
}

bool Emitter::maybe_restart(bool archive_changed, const Archive& archive, Rng& rng)
{
    if (archive_changed)
        return false;
    restart(archive, rng);
    return true;
}

nlohmann::json Emitter::to_json() const
{
    const auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    std::vector<double> c_rows;
    for (Eigen::Index r = 0; r < dist_.C.rows(); ++r)
        for (Eigen::Index c = 0; c < dist_.C.cols(); ++c)
            c_rows.push_back(dist_.C(r, c));
    return nlohmann::json{{"mu", vec(dist_.mean)},
                          {"sigma", dist_.sigma},
                          {"C", c_rows},
                          {"theta", vec(theta_)},
                          {"generation", dist_.generation}};
}

} // namespace qdgs
