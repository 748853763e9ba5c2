#include "qdgs/scoring.hpp"

#include "qdgs/error.hpp"

#include <algorithm>
#include <cmath>

namespace qdgs {

double contrastive_score(const ImageBuffer& image, const ProbePair& probe)
{
    const double pos = probe.positive(image);
    const double neg = probe.negative(image);
    if (!std::isfinite(pos) || !std::isfinite(neg))
        throw EvaluationRejected("probe returned a non-finite score");
    return pos - neg;
}

Vector image_signature(const ImageBuffer& image)
{
    constexpr int side = 16;
    Vector sig = Vector::Zero(side * side);
    Vector weight = Vector::Zero(side * side);
    for (int y = 0; y < image.height; ++y) {
        const int sy = y * side / image.height;
        for (int x = 0; x < image.width; ++x) {
            const int sx = x * side / image.width;
            const double gray = (image.at(x, y, 0) + image.at(x, y, 1) + image.at(x, y, 2)) / 3.0;
            sig[sy * side + sx] += gray;
            weight[sy * side + sx] += 1.0;
        }
    }
    for (int i = 0; i < sig.size(); ++i)
        sig[i] = weight[i] > 0 ? sig[i] / weight[i] : 0.0;
    sig.array() -= sig.mean();
    return sig;
}

double cosine(const Vector& a, const Vector& b)
{
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0)
        return 0.0;
    return a.dot(b) / (na * nb);
}

void MarginMemory::push(Vector signature)
{
    if (capacity_ == 0)
        return;
    entries_.push_back(std::move(signature));
    while (entries_.size() > capacity_)
        entries_.pop_front();
}

double margin(const Vector& signature, const MarginMemory& memory)
{
    if (memory.empty())
        return 0.0;
    double best = -1.0;
    for (const auto& e : memory.entries())
        best = std::max(best, cosine(signature, e));
    return best;
}

double margin(const ImageBuffer& image, const MarginMemory& memory)
{
    return margin(image_signature(image), memory);
}

void update_memory(MarginMemory& memory, const ImageBuffer& image) { memory.push(image_signature(image)); }

CalibrationResult calibrate_regularizer(const LatentSampler& sampler, Rng& rng, int n, double rho)
{
    if (n < 2)
        throw ConfigError("regularizer calibration needs at least 2 samples");
    std::vector<Vector> draws;
    draws.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        draws.push_back(sampler(rng));
    const Eigen::Index dim = draws.front().size();

    CalibrationResult out;
    auto& spec = out.spec;
    spec.rho = rho;
    spec.center = Vector::Zero(dim);
    for (const auto& d : draws)
        spec.center += d;
    spec.center /= n;
    spec.scale = Vector::Zero(dim);
    for (const auto& d : draws)
        spec.scale += (d - spec.center).cwiseAbs2();
    spec.scale = (spec.scale / n).cwiseSqrt();
    for (Eigen::Index d = 0; d < dim; ++d) {
        if (spec.scale[d] < 1e-8) {
            spec.scale[d] = 1e-8;
            out.warnings.push_back("zero-variance latent dimension " + std::to_string(d) + "; scale floored at 1e-8");
        }
    }
    double total = 0.0;
    for (const auto& d : draws)
        total += standardized_distance(d, spec);
    spec.delta_reg = total / n;
    if (!(spec.delta_reg > 0.0))
        out.warnings.push_back("calibrated delta_reg is zero; the regularizer penalizes every non-center point");
    return out;
}

double standardized_distance(const Vector& theta, const RegularizerSpec& spec)
{
    if (theta.size() != spec.center.size())
        throw ConfigError("latent dimension does not match the regularizer calibration");
    return ((theta - spec.center).array() / spec.scale.array()).matrix().norm();
}

double reg_penalty_from_distance(double distance, const RegularizerSpec& spec)
{
    const double b = spec.boundary();
    const double over = std::max(distance, b) - b;
    return over * over;
}

double reg_penalty(const Vector& theta, const RegularizerSpec& spec)
{
    return reg_penalty_from_distance(standardized_distance(theta, spec), spec);
}

double composite_objective(const Vector& theta, const ImageBuffer& image, const MarginMemory& memory,
                           const RegularizerSpec& reg, const ObjectiveWeights& w, const ProbePair& probe)
{
    return composite_objective(contrastive_score(image, probe), margin(image, memory), reg_penalty(theta, reg), w);
}

Vector normalized(const Vector& v)
{
    const double n = v.norm();
    return n > 0.0 ? Vector(v / n) : v;
}

void normalize_grads(Vector& grad_f, Matrix& grad_m)
{
    grad_f = normalized(grad_f);
    for (Eigen::Index j = 0; j < grad_m.cols(); ++j)
        grad_m.col(j) = normalized(grad_m.col(j));
}

Vector fd_gradient(const std::function<double(const Vector&)>& fn, const Vector& theta, double h)
{
    if (!(h > 0.0))
        throw ConfigError("finite-difference step must be positive");
    Vector grad(theta.size());
    Vector probe = theta;
    for (Eigen::Index d = 0; d < theta.size(); ++d) {
        probe[d] = theta[d] + h;
        const double up = fn(probe);
        probe[d] = theta[d] - h;
        const double down = fn(probe);
        probe[d] = theta[d];
        if (!std::isfinite(up) || !std::isfinite(down))
            throw EvaluationRejected("non-finite value during finite differencing");
        grad[d] = (up - down) / (2.0 * h);
    }
    return grad;
}

} // namespace qdgs
