#pragma once

#include "qdgs/image.hpp"
#include "qdgs/scoring.hpp"
#include "qdgs/types.hpp"

#include <optional>

namespace qdgs {

/// Latent-to-image model. Implementations must be pure: generate() may be
/// called concurrently from several threads.
class Generator {
public:
    virtual ~Generator() = default;

    virtual int latent_dim() const = 0;
    /// Resolution used inside the search loop.
    virtual int working_resolution() const = 0;
    virtual ImageBuffer generate(const LatentSolution& theta, int resolution) const = 0;
    virtual LatentSolution sample_prior(Rng& rng) const = 0;

    ImageBuffer generate(const LatentSolution& theta) const { return generate(theta, working_resolution()); }
};

struct Evaluation {
    double f = 0.0;
    Vector m;
};

struct Gradients {
    Vector grad_f;
    Matrix grad_m; // one column per measure
};

/// Objective/measure contract. score() receives θ, its rendered image, and a
/// frozen snapshot of the margin memory; it must be pure and thread-safe, and
/// throws EvaluationRejected for unusable values. An embedding-model backend
/// implements the same three calls; gradients() may return nullopt, in which
/// case the pipeline falls back to central finite differences through the
/// generator.
class Scorer {
public:
    virtual ~Scorer() = default;

    virtual int num_measures() const = 0;
    virtual Evaluation score(const LatentSolution& theta, const ImageBuffer& image,
                             const MarginMemory& memory) const = 0;
    virtual std::optional<Gradients> gradients(const LatentSolution&, const ImageBuffer&, const MarginMemory&) const
    {
        return std::nullopt;
    }
    /// Embedding stored in the margin memory.
    virtual Vector signature(const ImageBuffer& image) const { return image_signature(image); }
};

} // namespace qdgs
