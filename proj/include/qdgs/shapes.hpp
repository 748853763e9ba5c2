#pragma once

#include "qdgs/image.hpp"
#include "qdgs/scoring.hpp"
#include "qdgs/types.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace qdgs::shapes {

inline constexpr int kLatentDim = 6;
inline constexpr int kNoiseWaves = 4;

using Rgb = std::array<double, 3>;

/// Every tunable constant of the surrogate domain lives here.
struct DomainConfig {
    // decoder
    double gain = 5.0;                // logistic gain on the entangled color/shape logits
    double bias = 0.98;               // prior mass of the majority (red triangle, blue square) quadrants
    double kappa = 4.0;               // noise_amp = softplus(|z|²/6 − kappa)
    double pose_spread = 1.7;         // logistic spread for rotation/scale coordinates

    // renderer (lengths are fractions of the image width)
    Rgb red{0.86, 0.12, 0.12};
    Rgb blue{0.12, 0.12, 0.86};
    double square_half_side = 0.14;   // at scale 1; every morph has the same area
    double edge_softness_px = 0.5;    // logistic edge scale at 64 px and shape scale 1 (~2 px 10-90%)
    double min_edge_softness_px = 0.5; // floor for small shapes, keeps them anti-aliased
    double noise_base_frequency = 14; // cycles per image width

    // probes
    double redness_span = 0.95;       // pure anchors map to ∓this, leaving room before the clamp
    double alpha_dead_band = 0.25;    // coverage below this (and above 1 − it) is flattened
    // Ideal normalized polar moments: equilateral triangle √3/9 ≈ 0.19245, square 1/6.
    // Centering on their midpoint puts the ideal shapes at m2 = ∓0.5.
    double phi_mid = 0.5 * (std::sqrt(3.0) / 9.0 + 1.0 / 6.0);
    double phi_span = std::sqrt(3.0) / 9.0 - 1.0 / 6.0;
    double coverage_lo = 0.01;
    double coverage_lo_width = 0.0025;
    double coverage_hi = 0.6;
    double coverage_hi_width = 0.03;
    double laplacian_ref = 0.05;

    /// Slope k of the lines s = ±k·d that bound the agreeing (majority) wedge.
    double wedge_slope() const;
    /// Half the B−R gap between the anchors over redness_span; redness is divided by it so
    /// the anchors map to ∓redness_span.
    double color_contrast() const;
};

const DomainConfig& default_config();

enum class ShapeClass { triangle = 0, square = 1 };
enum class ColorClass { red = 0, blue = 1 };
enum class Label { triangle, square, ambiguous };

struct ShapeParams {
    double color = 0.5;    // 0 = red, 1 = blue
    double shape = 0.5;    // 0 = triangle, 1 = square
    double rotation = 0.0; // radians in [0, 2π)
    double scale = 1.0;    // [0.5, 2]
    double noise_amp = 0.0;
    std::array<double, kNoiseWaves * 3> noise_phase{};
};

/// Analytic entangled decoder from a 6-d latent to shape parameters.
ShapeParams decode(const Vector& z, const DomainConfig& cfg = default_config());

/// Smooth signed-distance render. Throws ConfigError for resolution < 8.
ImageBuffer render(const ShapeParams& params, int resolution, const DomainConfig& cfg = default_config());

using Polygon = std::array<std::array<double, 2>, 4>;

/// Constant-area trapezoid morph: t = 0 is an equilateral triangle (the two top
/// vertices coincide), t = 1 a square of the given half side. Centroid at the origin,
/// counter-clockwise.
Polygon morph_polygon(double t, double square_half_side);

/// Smooth signed distance to a convex counter-clockwise polygon, negative inside:
/// softness·log Σ exp(l_i / softness) over the signed distances l_i to the edge lines.
/// Lies within softness·log(edges) above the exact max(l_i). Zero-length edges are skipped.
double soft_sdf_convex_polygon(double x, double y, const Polygon& poly, double softness);

struct ProbeValue {
    double value = 0.0;
    bool degenerate = false;
};

/// Per-pixel foreground coverage estimated from the image alone.
std::vector<double> foreground_alpha(const ImageBuffer& image, const DomainConfig& cfg = default_config());

/// −1 red … +1 blue.
ProbeValue probe_redness(const ImageBuffer& image, const DomainConfig& cfg = default_config());

/// Normalized polar moment of the foreground coverage, Hu's first invariant
/// (μ20 + μ02)/μ00². Rotation and scale invariant. Degenerate below one pixel of coverage.
ProbeValue polar_moment(const ImageBuffer& image, const DomainConfig& cfg = default_config());

/// −1 triangle-like … +1 square-like.
ProbeValue probe_squareness(const ImageBuffer& image, const DomainConfig& cfg = default_config());

double coverage_term(const ImageBuffer& image, const DomainConfig& cfg = default_config());
double mean_squared_laplacian(const ImageBuffer& image);
double noise_term(const ImageBuffer& image, const DomainConfig& cfg = default_config());

/// clamp(coverage_term − noise_term, 0, 1)
double probe_quality(const ImageBuffer& image, const DomainConfig& cfg = default_config());

/// (coverage, noise) as a positive/negative pair.
ProbePair quality_probe_pair(const DomainConfig& cfg = default_config());
/// (blueness, redness) as a positive/negative pair.
ProbePair redness_probe_pair(const DomainConfig& cfg = default_config());

Label label_from_m2(double m2, double tau = 0.01);

const char* to_string(Label label);
const char* to_string(ShapeClass s);
const char* to_string(ColorClass c);

struct RealSample {
    ImageBuffer image;
    ShapeClass shape;
    ColorClass color;
};

/// Minority combos are blue triangle and red square.
inline bool is_minority(ShapeClass s, ColorClass c)
{
    return (s == ShapeClass::triangle) == (c == ColorClass::blue);
}

/// Draws from the ideal biased distribution (not the decoder).
std::vector<RealSample> sample_real(double b, int n, std::uint64_t seed, int resolution = 128,
                                    const DomainConfig& cfg = default_config());

/// Standard normal latent.
Vector sample_prior(Rng& rng);

} // namespace qdgs::shapes
