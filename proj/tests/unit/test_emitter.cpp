#include "qdgs/emitter.hpp"
#include "qdgs/error.hpp"

#include <doctest.h>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include <cmath>

using namespace qdgs;

namespace {

Vector vec(std::initializer_list<double> xs)
{
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v[i++] = x;
    return v;
}

std::vector<double> bowl(const std::vector<Vector>& cs, const Vector& target)
{
    std::vector<double> d;
    for (const auto& c : cs) d.push_back(-(c - target).squaredNorm());
    return d;
}

// Runs the adaptation loop on the bowl and returns the distance history of mu.
std::vector<double> bowl_trace(const Vector& target, int iterations, std::uint64_t seed)
{
    Emitter e(Vector::Zero(2), static_cast<int>(target.size()) - 1, EmitterConfig{0.5, 32, 0.5});
    Rng rng(seed);
    std::vector<double> dist{(e.distribution().mean - target).norm()};
    for (int i = 0; i < iterations; ++i) {
        const auto cs = e.sample_coeffs(rng);
        REQUIRE(e.adapt(cs, bowl(cs, target)));
        dist.push_back((e.distribution().mean - target).norm());
    }
    return dist;
}

} // namespace

TEST_SUITE("emitter")
{
    TEST_CASE("branch examples")
    {
        Matrix gm(2, 1);
        gm << 0, 1;
        CHECK(branch(vec({0, 0}), vec({1, 0}), gm, vec({-2, 3})).isApprox(vec({2, 3})));
        CHECK(branch(vec({0.3, -0.7}), vec({1, 0}), gm, vec({0, 0})) == vec({0.3, -0.7}));
        const Vector b = branch(vec({1, 1}), vec({1, 0}), gm, vec({0.5, -0.5}));
        CHECK(std::abs(b[0] - 1.5) < 1e-12);
        CHECK(std::abs(b[1] - 0.5) < 1e-12);
        CHECK_THROWS_AS(branch(vec({0, 0, 0}), vec({1, 0}), gm, vec({1, 1})), ConfigError);
        CHECK_THROWS_AS(branch(vec({0, 0}), vec({1, 0}), gm, vec({1, 1, 1})), ConfigError);
    }

    TEST_CASE("branch folds only the objective coefficient")
    {
        Rng rng(1);
        std::normal_distribution<double> n;
        for (int trial = 0; trial < 100; ++trial) {
            Vector theta(6), gf(6), c(3);
            Matrix gm(6, 2);
            for (int i = 0; i < 6; ++i) {
                theta[i] = n(rng);
                gf[i] = n(rng);
                gm(i, 0) = n(rng);
                gm(i, 1) = n(rng);
            }
            for (int i = 0; i < 3; ++i) c[i] = n(rng);
            Vector flipped = c;
            flipped[0] = -c[0];
            CHECK(branch(theta, gf, gm, c) == branch(theta, gf, gm, flipped));

            // Linear in the measure coefficients.
            Vector c2 = c;
            c2.tail(2) *= 2.0;
            const Vector lin = 2.0 * branch(theta, gf, gm, c) - branch(theta, gf, gm, c2);
            CHECK((lin - (theta + std::abs(c[0]) * gf)).norm() < 1e-10);
        }
    }

    TEST_CASE("log-rank weights")
    {
        CHECK(log_rank_weights(2) == std::vector<double>{1.0});
        const auto w = log_rank_weights(32);
        REQUIRE(w.size() == 16);
        double sum = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            sum += w[i];
            CHECK(w[i] > 0.0);
            if (i > 0) CHECK(w[i] < w[i - 1]);
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);

        // Scalar oracle for λ = 4: raw weights ln 2.5 − ln 1 and ln 2.5 − ln 2.
        const double a = std::log(2.5), b = std::log(2.5) - std::log(2.0);
        const auto w4 = log_rank_weights(4);
        CHECK(std::abs(w4[0] - a / (a + b)) < 1e-15);
        CHECK(std::abs(w4[1] - b / (a + b)) < 1e-15);
    }

    TEST_CASE("ranked ascent examples")
    {
        // λ = 2 keeps only the best branch: θ + η·((0,1) − θ).
        Emitter e(vec({0, 0}), 1, EmitterConfig{0.5, 2, 0.5});
        const std::vector<Vector> br{vec({1, 0}), vec({0, 1})};
        const std::vector<double> d{1.0, 3.0};
        e.ranked_ascent(br, d);
        CHECK(e.theta().isApprox(vec({0.0, 0.5})));

        Emitter same(vec({1, 2}), 1, EmitterConfig{0.5, 4, 0.5});
        const Vector v = vec({0.3, -0.4});
        const std::vector<Vector> shifted(4, vec({1, 2}) + v);
        same.ranked_ascent(shifted, std::vector<double>(4, 0.1));
        CHECK((same.theta() - (vec({1, 2}) + 0.5 * v)).norm() < 1e-12);

        CHECK_THROWS_AS(e.ranked_ascent(std::vector<Vector>{}, std::vector<double>{}), InternalError);
        CHECK_THROWS_AS(Emitter(vec({0}), 1, EmitterConfig{0.0, 2, 0.5}), ConfigError);
        CHECK_THROWS_AS(Emitter(vec({0}), 1, EmitterConfig{0.5, 1, 0.5}), ConfigError);
    }

    TEST_CASE("ranked ascent depends on ranks only")
    {
        Rng rng(2);
        std::normal_distribution<double> n;
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<Vector> br;
            std::vector<double> d, t;
            for (int i = 0; i < 8; ++i) {
                br.push_back(vec({n(rng), n(rng), n(rng)}));
                d.push_back(n(rng));
                t.push_back(std::exp(3.0 * d.back()) - 7.0);
            }
            Emitter a(Vector::Zero(3), 2, EmitterConfig{0.5, 8, 0.5});
            Emitter b = a;
            a.ranked_ascent(br, d);
            b.ranked_ascent(br, t);
            CHECK(a.theta() == b.theta());
        }
    }

    TEST_CASE("ties rank by lower index")
    {
        const std::vector<double> d{0.5, 1.0, 0.5, 1.0};
        CHECK(rank_by_delta(d) == std::vector<int>{1, 3, 0, 2});
    }

    TEST_CASE("sample_coeffs")
    {
        Emitter e(Vector::Zero(6), 2);
        Rng r1(42), r2(42);
        const auto a = e.sample_coeffs(r1);
        const auto b = e.sample_coeffs(r2);
        REQUIRE(a.size() == 32);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].size() == 3);
            CHECK(a[i] == b[i]);
        }

        auto dist = e.distribution();
        dist.sigma = 0.0;
        dist.mean = vec({0.1, 0.2, 0.3});
        e.set_distribution(dist);
        for (const auto& c : e.sample_coeffs(r1)) CHECK(c == dist.mean);

        dist.C(0, 0) = -1.0;
        e.set_distribution(dist);
        CHECK_THROWS_AS(e.sample_coeffs(r1), InternalError);
    }

    TEST_CASE("adapt on the analytic bowl")
    {
        const Vector target = vec({1.0, -1.5, 0.75});
        const auto trace = bowl_trace(target, 200, 7);
        CHECK(trace[50] <= 0.5 * trace[0]);
        bool reached = false;
        for (double d : trace) reached = reached || d <= 0.1 * trace[0];
        CHECK(reached);
    }

    TEST_CASE("adapt keeps C symmetric positive definite and is deterministic")
    {
        const Vector target = vec({-0.4, 2.0, 0.1});
        Emitter a(Vector::Zero(2), 2), b(Vector::Zero(2), 2);
        Rng ra(9), rb(9);
        for (int i = 0; i < 100; ++i) {
            const auto ca = a.sample_coeffs(ra);
            const auto cb = b.sample_coeffs(rb);
            a.adapt(ca, bowl(ca, target));
            b.adapt(cb, bowl(cb, target));
            const Matrix& C = a.distribution().C;
            CHECK((C - C.transpose()).norm() == 0.0);
            CHECK(Eigen::LLT<Matrix>(C).info() == Eigen::Success);
            CHECK(std::isfinite(a.distribution().sigma));
        }
        CHECK(a.distribution() == b.distribution());
    }

    TEST_CASE("maybe_restart")
    {
        Archive archive(MeasureSpec::uniform(2, {-1, 1}, 10));
        Emitter e(Vector::Zero(2), 2, EmitterConfig{0.5, 8, 0.5});
        Rng rng(4);
        const auto cs = e.sample_coeffs(rng);
        e.adapt(cs, bowl(cs, vec({1, 1, 1})));
        e.set_theta(vec({3, 3}));
        const Emitter before = e;

        CHECK_FALSE(e.maybe_restart(true, archive, rng));
        CHECK(e.distribution() == before.distribution());
        CHECK(e.theta() == before.theta());

        CHECK(e.maybe_restart(false, archive, rng));
        CHECK(e.theta() == Vector::Zero(2)); // empty archive falls back to θ₀
        CHECK(e.distribution().covariance().isApprox(0.25 * Matrix::Identity(3, 3)));
        CHECK(e.distribution().mean == Vector::Zero(3));
        CHECK(e.distribution() == Emitter(Vector::Zero(2), 2, EmitterConfig{0.5, 8, 0.5}).distribution());

        archive.insert(vec({7, -7}), 0.5, vec({0.2, 0.2}));
        e.maybe_restart(false, archive, rng);
        CHECK(e.theta() == vec({7, -7}));

        // A restarted emitter draws exactly what a fresh one draws.
        Emitter fresh(Vector::Zero(2), 2, EmitterConfig{0.5, 8, 0.5});
        Rng r1(5), r2(5);
        const auto x = e.sample_coeffs(r1);
        const auto y = fresh.sample_coeffs(r2);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i] == y[i]);
    }

    TEST_CASE("state serializes")
    {
        Emitter e(vec({1, 2}), 1);
        const auto j = e.to_json();
        CHECK(j.at("mu").size() == 2);
        CHECK(j.at("C").size() == 4);
        CHECK(j.at("sigma").get<double>() == 0.5);
        CHECK(j.at("theta")[1].get<double>() == 2.0);
    }
}
