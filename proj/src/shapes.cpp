#include "qdgs/shapes.hpp"

#include "qdgs/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace qdgs::shapes {

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

// Quintic smoothstep on [0, 1]: zero first and second derivatives at both ends,
// so pixels crossing either end do not put kinks into the probes.
double smooth_ramp(double t)
{
    if (t <= 0.0)
        return 0.0;
    if (t >= 1.0)
        return 1.0;
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0);
}

// Fixed pseudo-random mixing weights in [-1, 1]; platform independent.
double mixing_weight(int row, int col)
{
    const double v = std::sin(12.9898 * (row + 1) + 78.233 * (col + 1)) * 43758.5453;
    return 2.0 * (v - std::floor(v)) - 1.0;
}

constexpr std::array<double, kNoiseWaves> kWaveAngles{0.3, 1.4, 2.2, 2.9};

double foreground_green(const DomainConfig& cfg) { return 0.5 * (cfg.red[1] + cfg.blue[1]); }

// Mixing coefficient between the foreground color and white, recovered from green.
std::vector<double> mixing_alpha(const ImageBuffer& image, const DomainConfig& cfg)
{
    const double g_fg = foreground_green(cfg);
    std::vector<double> alpha(image.pixels());
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            alpha[static_cast<std::size_t>(y) * image.width + x] =
                smooth_ramp((1.0 - image.at(x, y, 1)) / (1.0 - g_fg));
    return alpha;
}

} // namespace

double DomainConfig::wedge_slope() const
{
    if (!(bias > 0.0 && bias < 1.0))
        throw ConfigError("decoder bias must lie in (0, 1)");
    return std::tan(0.5 * std::numbers::pi * (1.0 - bias));
}

double DomainConfig::color_contrast() const
{
    const double c = 0.5 * ((blue[2] - blue[0]) - (red[2] - red[0]));
    if (!(c > 0.0))
        throw ConfigError("blue anchor must have a larger B−R difference than the red anchor");
    if (!(redness_span > 0.0 && redness_span <= 1.0))
        throw ConfigError("redness_span must lie in (0, 1]");
    return c / redness_span;
}

const DomainConfig& default_config()
{
    static const DomainConfig cfg;
    return cfg;
}

ShapeParams decode(const Vector& z, const DomainConfig& cfg)
{
    if (z.size() != kLatentDim)
        throw ConfigError("shape latent must have 6 dimensions");
    ShapeParams p;

    // The (s, d) plane is split by the lines s = ±k·d. Color and shape agree
    // iff |s| > k·|d|; the prior is isotropic so that wedge has mass
    // 1 − (2/π)·atan(k) = bias. The logits keep the radius of (s, d), so
    // moving outward saturates both attributes at any angle.
    const double s = z[0];
    const double d = z[1];
    const double k = cfg.wedge_slope();
    const double r = std::hypot(s, d);
    const double n = std::hypot(s, k * d);
    double color_logit = 0.0;
    double shape_logit = 0.0;
    if (n > 0.0) {
        color_logit = cfg.gain * r * (s - k * d) / n;
        shape_logit = cfg.gain * r * (s + k * d) / n;
    }
    p.color = logistic(color_logit);
    p.shape = logistic(shape_logit);
    p.rotation = 2.0 * std::numbers::pi * logistic(cfg.pose_spread * z[2]);
    p.scale = 0.5 * std::pow(4.0, logistic(cfg.pose_spread * z[3]));
    p.noise_amp = softplus(z.squaredNorm() / 6.0 - cfg.kappa);
    for (int j = 0; j < kNoiseWaves * 3; ++j) {
        double phase = 0.0;
        for (int i = 0; i < kLatentDim; ++i)
            phase += mixing_weight(j, i) * z[i];
        p.noise_phase[static_cast<std::size_t>(j)] = std::numbers::pi * phase;
    }
    return p;
}

Polygon morph_polygon(double t, double square_half_side)
{
    t = std::clamp(t, 0.0, 1.0);
    const double area = 4.0 * square_half_side * square_half_side;
    // height / base: √3/2 for the equilateral triangle, 1 for the square
    const double aspect = std::sqrt(3.0) / 2.0 + (1.0 - std::sqrt(3.0) / 2.0) * t;
    const double half_base = std::sqrt(area / ((1.0 + t) * 2.0 * aspect));
    const double height = 2.0 * aspect * half_base;
    const double centroid = height * (1.0 + 2.0 * t) / (3.0 * (1.0 + t));
    const double bottom = -centroid;
    const double top = height - centroid;
    return {{{-half_base, bottom}, {half_base, bottom}, {t * half_base, top}, {-t * half_base, top}}};
}

double soft_sdf_convex_polygon(double x, double y, const Polygon& poly, double softness)
{
    if (!(softness > 0.0))
        throw ConfigError("polygon softness must be > 0");
    std::array<double, 4> lines{};
    std::size_t count = 0;
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const auto& a = poly[i];
        const auto& b = poly[(i + 1) % poly.size()];
        const double ex = b[0] - a[0];
        const double ey = b[1] - a[1];
        const double len = std::hypot(ex, ey);
        if (len <= 1e-9)
            continue;
        // distance to the edge's supporting line, positive on the outer side
        lines[count] = (ey * (x - a[0]) - ex * (y - a[1])) / len;
        top = std::max(top, lines[count]);
        ++count;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < count; ++i)
        acc += std::exp((lines[i] - top) / softness);
    return top + softness * std::log(acc);
}

ImageBuffer render(const ShapeParams& params, int resolution, const DomainConfig& cfg)
{
    if (resolution < 8)
        throw ConfigError("render resolution must be at least 8 pixels");
    ImageBuffer img(resolution, resolution);

    // softness scales with the shape so the silhouette is scale-invariant
    const double tau = std::max(cfg.edge_softness_px * params.scale, cfg.min_edge_softness_px) / 64.0;
    const double cr = std::cos(params.rotation);
    const double sr = std::sin(params.rotation);
    const Polygon poly = morph_polygon(params.shape, cfg.square_half_side * params.scale);
    Rgb fg;
    for (int c = 0; c < 3; ++c)
        fg[static_cast<std::size_t>(c)] = cfg.red[static_cast<std::size_t>(c)]
                                          + params.color * (cfg.blue[static_cast<std::size_t>(c)] - cfg.red[static_cast<std::size_t>(c)]);

    std::array<std::array<double, 2>, kNoiseWaves> freq;
    for (int w = 0; w < kNoiseWaves; ++w) {
        const double mag = 2.0 * std::numbers::pi * cfg.noise_base_frequency * (1.0 + 0.15 * w);
        freq[static_cast<std::size_t>(w)] = {mag * std::cos(kWaveAngles[static_cast<std::size_t>(w)]),
                                             mag * std::sin(kWaveAngles[static_cast<std::size_t>(w)])};
    }
    const bool noisy = params.noise_amp > 0.0;

    // sin(a·u + b·v + φ) = sin(a·u)·cos(b·v + φ) + cos(a·u)·sin(b·v + φ), tabulated per column and row
    const auto n_px = static_cast<std::size_t>(resolution);
    std::vector<double> col_sin, col_cos, row_sin, row_cos;
    if (noisy) {
        col_sin.resize(kNoiseWaves * n_px);
        col_cos.resize(kNoiseWaves * n_px);
        row_sin.resize(kNoiseWaves * 3 * n_px);
        row_cos.resize(kNoiseWaves * 3 * n_px);
        for (std::size_t i = 0; i < n_px; ++i) {
            const double t = (static_cast<double>(i) + 0.5) / resolution - 0.5;
            for (std::size_t w = 0; w < kNoiseWaves; ++w) {
                col_sin[w * n_px + i] = std::sin(freq[w][0] * t);
                col_cos[w * n_px + i] = std::cos(freq[w][0] * t);
                for (std::size_t c = 0; c < 3; ++c) {
                    const double arg = freq[w][1] * t + params.noise_phase[w * 3 + c];
                    row_sin[(w * 3 + c) * n_px + i] = std::sin(arg);
                    row_cos[(w * 3 + c) * n_px + i] = std::cos(arg);
                }
            }
        }
    }

    for (int py = 0; py < resolution; ++py) {
        const double v = (py + 0.5) / resolution - 0.5;
        for (int px = 0; px < resolution; ++px) {
            const double u = (px + 0.5) / resolution - 0.5;
            // into the shape frame
            const double x = cr * u + sr * v;
            const double y = -sr * u + cr * v;
            const double d = soft_sdf_convex_polygon(x, y, poly, tau);
            const double alpha = logistic(-d / tau);
            for (int c = 0; c < 3; ++c) {
                double value = alpha * fg[static_cast<std::size_t>(c)] + (1.0 - alpha);
                if (noisy) {
                    double n = 0.0;
                    for (std::size_t w = 0; w < kNoiseWaves; ++w) {
                        const std::size_t col = w * n_px + static_cast<std::size_t>(px);
                        const std::size_t row = (w * 3 + static_cast<std::size_t>(c)) * n_px + static_cast<std::size_t>(py);
                        n += col_sin[col] * row_cos[row] + col_cos[col] * row_sin[row];
                    }
                    // splatter only darkens, so the white background stays off the upper clip
                    value -= params.noise_amp * 0.5 * (1.0 + n / kNoiseWaves);
                }
                img.at(px, py, c) = std::clamp(value, 0.0, 1.0);
            }
        }
    }
    return img;
}

std::vector<double> foreground_alpha(const ImageBuffer& image, const DomainConfig& cfg)
{
    // Both anchor colors share the green channel, so green alone separates
    // foreground from the white background. Small deviations (faint noise)
    // fall inside the dead band on either end.
    const double g_fg = foreground_green(cfg);
    const double lo = cfg.alpha_dead_band;
    const double span = 1.0 - 2.0 * lo;
    std::vector<double> alpha(image.pixels());
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            const double raw = (1.0 - image.at(x, y, 1)) / (1.0 - g_fg);
            alpha[static_cast<std::size_t>(y) * image.width + x] = smooth_ramp((raw - lo) / span);
        }
    return alpha;
}

ProbeValue probe_redness(const ImageBuffer& image, const DomainConfig& cfg)
{
    const auto alpha = mixing_alpha(image, cfg);
    // Pixel B−R equals alpha times the unmixed foreground B−R (white has B = R),
    // so this is the alpha²-weighted mean of the unmixed difference.
    double num = 0.0;
    double den = 0.0;
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const double a = alpha[static_cast<std::size_t>(y) * image.width + x];
            num += a * (image.at(x, y, 2) - image.at(x, y, 0));
            den += a * a;
        }
    }
    if (den < 1e-6 * static_cast<double>(image.pixels()))
        return {0.0, true};
    return {std::clamp(num / den / cfg.color_contrast(), -1.0, 1.0), false};
}

ProbeValue polar_moment(const ImageBuffer& image, const DomainConfig& cfg)
{
    // Hu's first invariant (μ20 + μ02) / μ00² of the coverage image, in pixel units.
    const auto alpha = foreground_alpha(image, cfg);
    const int w = image.width;
    double m00 = 0.0, m10 = 0.0, m01 = 0.0;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < w; ++x) {
            const double a = alpha[static_cast<std::size_t>(y) * w + x];
            m00 += a;
            m10 += a * x;
            m01 += a * y;
        }
    if (m00 < 1.0)
        return {0.0, true};
    const double cx = m10 / m00;
    const double cy = m01 / m00;
    double mu = 0.0;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < w; ++x) {
            const double a = alpha[static_cast<std::size_t>(y) * w + x];
            mu += a * ((x - cx) * (x - cx) + (y - cy) * (y - cy));
        }
    return {mu / (m00 * m00), false};
}

ProbeValue probe_squareness(const ImageBuffer& image, const DomainConfig& cfg)
{
    const auto phi = polar_moment(image, cfg);
    if (phi.degenerate)
        return {0.0, true};
    // squares have the smaller normalized moment
    return {std::clamp((cfg.phi_mid - phi.value) / cfg.phi_span, -1.0, 1.0), false};
}

double coverage_term(const ImageBuffer& image, const DomainConfig& cfg)
{
    const auto alpha = foreground_alpha(image, cfg);
    double area = 0.0;
    for (double a : alpha)
        area += a;
    const double frac = area / static_cast<double>(image.pixels());
    return logistic((frac - cfg.coverage_lo) / cfg.coverage_lo_width)
           * logistic((cfg.coverage_hi - frac) / cfg.coverage_hi_width);
}

double mean_squared_laplacian(const ImageBuffer& image)
{
    const int w = image.width;
    const int h = image.height;
    if (w < 3 || h < 3)
        return 0.0;
    // pixel-unit Laplacian rescaled to the 64 px reference grid
    const double norm = (w / 64.0) * (w / 64.0);
    double acc = 0.0;
    for (int y = 1; y < h - 1; ++y) {
        for (int x = 1; x < w - 1; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double lap = image.at(x + 1, y, c) + image.at(x - 1, y, c) + image.at(x, y + 1, c)
                                   + image.at(x, y - 1, c) - 4.0 * image.at(x, y, c);
                acc += (lap * norm) * (lap * norm);
            }
        }
    }
    return acc / (3.0 * (w - 2) * (h - 2));
}

double noise_term(const ImageBuffer& image, const DomainConfig& cfg)
{
    return std::clamp(mean_squared_laplacian(image) / cfg.laplacian_ref, 0.0, 1.0);
}

double probe_quality(const ImageBuffer& image, const DomainConfig& cfg)
{
    return std::clamp(contrastive_score(image, quality_probe_pair(cfg)), 0.0, 1.0);
}

ProbePair quality_probe_pair(const DomainConfig& cfg)
{
    return {[cfg](const ImageBuffer& img) { return coverage_term(img, cfg); },
            [cfg](const ImageBuffer& img) { return noise_term(img, cfg); }};
}

ProbePair redness_probe_pair(const DomainConfig& cfg)
{
    // Split of the alpha-weighted channel mean into blue and red halves; their
    // difference is exactly probe_redness before clamping.
    auto channel_mean = [cfg](const ImageBuffer& img, int channel) {
        const auto alpha = mixing_alpha(img, cfg);
        double num = 0.0, den = 0.0;
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                const double a = alpha[static_cast<std::size_t>(y) * img.width + x];
                num += a * (img.at(x, y, channel) - (1.0 - a));
                den += a * a;
            }
        return den > 0.0 ? num / den / cfg.color_contrast() : 0.0;
    };
    return {[channel_mean](const ImageBuffer& img) { return channel_mean(img, 2); },
            [channel_mean](const ImageBuffer& img) { return channel_mean(img, 0); }};
}

Label label_from_m2(double m2, double tau)
{
    if (m2 > tau)
        return Label::square;
    if (m2 < -tau)
        return Label::triangle;
    return Label::ambiguous;
}

const char* to_string(Label label)
{
    switch (label) {
    case Label::triangle: return "triangle";
    case Label::square: return "square";
    case Label::ambiguous: return "ambiguous";
    }
    return "?";
}

const char* to_string(ShapeClass s) { return s == ShapeClass::triangle ? "triangle" : "square"; }
const char* to_string(ColorClass c) { return c == ColorClass::red ? "red" : "blue"; }

std::vector<RealSample> sample_real(double b, int n, std::uint64_t seed, int resolution, const DomainConfig& cfg)
{
    if (!(b > 0.0 && b < 1.0))
        throw ConfigError("bias b must lie in (0, 1)");
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<RealSample> out;
    out.reserve(static_cast<std::size_t>(std::max(n, 0)));
    for (int i = 0; i < n; ++i) {
        const bool majority = unit(rng) < b;
        const bool first = unit(rng) < 0.5;
        ShapeClass shape;
        ColorClass color;
        if (majority) {
            shape = first ? ShapeClass::triangle : ShapeClass::square;
            color = first ? ColorClass::red : ColorClass::blue;
        } else {
            shape = first ? ShapeClass::triangle : ShapeClass::square;
            color = first ? ColorClass::blue : ColorClass::red;
        }
        ShapeParams p;
        p.color = color == ColorClass::blue ? 1.0 : 0.0;
        p.shape = shape == ShapeClass::square ? 1.0 : 0.0;
        p.rotation = unit(rng) * 359.0 * std::numbers::pi / 180.0;
        p.scale = 0.5 + 1.5 * unit(rng);
        out.push_back({render(p, resolution, cfg), shape, color});
    }
    return out;
}

Vector sample_prior(Rng& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector z(kLatentDim);
    for (int i = 0; i < kLatentDim; ++i)
        z[i] = normal(rng);
    return z;
}

} // namespace qdgs::shapes
