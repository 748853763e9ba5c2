#pragma once

#include "qdgs/image.hpp"
#include "qdgs/types.hpp"

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

namespace qdgs {

/// Maps an image to a similarity-like score in [-1, 1].
using ImageProbe = std::function<double(const ImageBuffer&)>;

/// A positive/negative probe pair; stands in for a pair of text prompts.
struct ProbePair {
    ImageProbe positive;
    ImageProbe negative;
};

/// positive(image) − negative(image). Throws EvaluationRejected on a non-finite probe.
double contrastive_score(const ImageBuffer& image, const ProbePair& probe);

/// 16×16 grayscale, flattened and mean-centered. Used as the image embedding for margins.
Vector image_signature(const ImageBuffer& image);

/// Cosine similarity; zero if either vector has zero norm.
double cosine(const Vector& a, const Vector& b);

/// FIFO ring of recent image signatures.
class MarginMemory {
public:
    explicit MarginMemory(std::size_t capacity = 100) : capacity_(capacity) {}

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const std::deque<Vector>& entries() const { return entries_; }

    void push(Vector signature);

private:
    std::size_t capacity_;
    std::deque<Vector> entries_;
};

/// max cosine between the signature and any memory entry; 0 on an empty memory.
double margin(const Vector& signature, const MarginMemory& memory);
double margin(const ImageBuffer& image, const MarginMemory& memory);

/// Appends the image's signature, evicting the oldest entry past capacity.
void update_memory(MarginMemory& memory, const ImageBuffer& image);

struct RegularizerSpec {
    double rho = 0.5;
    double delta_reg = 1.0;
    Vector center;
    Vector scale;

    double boundary() const { return rho * delta_reg; }
};

struct CalibrationResult {
    RegularizerSpec spec;
    std::vector<std::string> warnings;
};

using LatentSampler = std::function<Vector(Rng&)>;

/// Estimates per-dimension mean/std and the mean standardized distance from n draws.
CalibrationResult calibrate_regularizer(const LatentSampler& sampler, Rng& rng, int n = 10000, double rho = 0.5);

/// sqrt(Σ ((θ_d − center_d) / scale_d)²)
double standardized_distance(const Vector& theta, const RegularizerSpec& spec);

/// (max(δ, ρ δ_reg) − ρ δ_reg)²: zero inside the ball, squared overshoot outside.
double reg_penalty(const Vector& theta, const RegularizerSpec& spec);
double reg_penalty_from_distance(double distance, const RegularizerSpec& spec);

struct ObjectiveWeights {
    double beta1 = 0.5;
    double beta2 = 0.2;
};

/// g_txt − β₁ g_mgn − β₂ g_reg
inline double composite_objective(double g_txt, double g_mgn, double g_reg, const ObjectiveWeights& w)
{
    return g_txt - w.beta1 * g_mgn - w.beta2 * g_reg;
}

double composite_objective(const Vector& theta, const ImageBuffer& image, const MarginMemory& memory,
                           const RegularizerSpec& reg, const ObjectiveWeights& w, const ProbePair& probe);

/// Unit L2 norm; an exactly-zero vector is returned unchanged.
Vector normalized(const Vector& v);

/// Normalizes grad_f and every column of grad_m independently.
void normalize_grads(Vector& grad_f, Matrix& grad_m);

/// Central differences (f(θ+h e_d) − f(θ−h e_d)) / 2h.
Vector fd_gradient(const std::function<double(const Vector&)>& fn, const Vector& theta, double h = 1e-3);

} // namespace qdgs
