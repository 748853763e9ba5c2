#pragma once

#include "qdgs/pipeline.hpp"
#include "qdgs/problem.hpp"
#include "qdgs/shapes.hpp"

namespace qdgs::shapes {

class ShapesGenerator final : public Generator {
public:
    explicit ShapesGenerator(DomainConfig cfg = default_config(), int working_resolution = 64)
        : cfg_(cfg), resolution_(working_resolution) {}

    int latent_dim() const override { return kLatentDim; }
    int working_resolution() const override { return resolution_; }
    ImageBuffer generate(const LatentSolution& theta, int resolution) const override
    {
        return render(decode(theta, cfg_), resolution, cfg_);
    }
    using Generator::generate;
    LatentSolution sample_prior(Rng& rng) const override { return shapes::sample_prior(rng); }

    const DomainConfig& config() const { return cfg_; }

private:
    DomainConfig cfg_;
    int resolution_;
};

/// f = g_txt − β₁ g_mgn − β₂ g_reg with the quality probe pair as g_txt;
/// m = (redness, squareness).
class ShapesScorer final : public Scorer {
public:
    ShapesScorer(RegularizerSpec reg, ObjectiveWeights weights = {}, DomainConfig cfg = default_config())
        : reg_(std::move(reg)), weights_(weights), cfg_(cfg), quality_(quality_probe_pair(cfg_)) {}

    int num_measures() const override { return 2; }
    Evaluation score(const LatentSolution& theta, const ImageBuffer& image, const MarginMemory& memory) const override
    {
        const double g_txt = contrastive_score(image, quality_);
        const double g_mgn = memory.empty() ? 0.0 : margin(image, memory);
        const double g_reg = reg_penalty(theta, reg_);
        Evaluation e;
        e.f = composite_objective(g_txt, g_mgn, g_reg, weights_);
        e.m = Vector(2);
        e.m << probe_redness(image, cfg_).value, probe_squareness(image, cfg_).value;
        return e;
    }

    const RegularizerSpec& regularizer() const { return reg_; }
    const ObjectiveWeights& weights() const { return weights_; }

private:
    RegularizerSpec reg_;
    ObjectiveWeights weights_;
    DomainConfig cfg_;
    ProbePair quality_;
};

/// Re-measures the export render and labels it from m2; ambiguous renders are dropped.
inline Labeler shapes_labeler(DomainConfig cfg = default_config(), double tau = 0.01)
{
    return [cfg, tau](const ImageBuffer& image) {
        LabelDecision d;
        d.m = Vector(2);
        d.m << probe_redness(image, cfg).value, probe_squareness(image, cfg).value;
        const Label l = label_from_m2(d.m(1), tau);
        if (l != Label::ambiguous) d.label = to_string(l);
        return d;
    };
}

} // namespace qdgs::shapes
