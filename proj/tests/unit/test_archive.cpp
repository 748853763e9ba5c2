#include "qdgs/archive.hpp"
#include "qdgs/error.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>
#include <sstream>

using namespace qdgs;

namespace {

Vector v2(double a, double b)
{
    Vector v(2);
    v << a, b;
    return v;
}

MeasureSpec grid100() { return MeasureSpec::uniform(2, {-1.0, 1.0}, 100); }

Archive with_threshold(double t, const Vector& m)
{
    Archive a(grid100());
    a.set_cell(flat_index(cell_index(m, a.spec()), a.spec()), Cell{t, std::nullopt});
    return a;
}

} // namespace

TEST_SUITE("archive")
{
    TEST_CASE("cell_index bins the square grid")
    {
        CHECK(cell_index(v2(-1, -1), grid100()) == CellIndex{0, 0});
        CHECK(cell_index(v2(0, 0), grid100()) == CellIndex{50, 50});
        CHECK(cell_index(v2(1.2, 0), grid100()) == CellIndex{99, 50});
        CHECK(cell_index(v2(1.0, 1.0), grid100()) == CellIndex{99, 99});
        CHECK_THROWS_AS(cell_index(v2(std::nan(""), 0), grid100()), EvaluationRejected);
        CHECK_THROWS_AS(cell_index(v2(std::numeric_limits<double>::infinity(), 0), grid100()), EvaluationRejected);
    }

    TEST_CASE("cell_index is idempotent under clamping")
    {
        Rng rng(3);
        std::uniform_real_distribution<double> u(-3.0, 3.0);
        const auto spec = grid100();
        for (int i = 0; i < 1000; ++i) {
            const Vector m = v2(u(rng), u(rng));
            const Vector clamped = m.cwiseMax(-1.0).cwiseMin(1.0);
            CHECK(cell_index(m, spec) == cell_index(clamped, spec));
        }
    }

    TEST_CASE("invalid specs are rejected")
    {
        MeasureSpec bad{{{1.0, 1.0}}, {10}};
        CHECK_THROWS_AS(bad.validate(), ConfigError);
        MeasureSpec zero{{{0.0, 1.0}}, {0}};
        CHECK_THROWS_AS(zero.validate(), ConfigError);
    }

    TEST_CASE("improvement against the cell threshold")
    {
        Archive fresh(grid100());
        CHECK(fresh.improvement(0.5, v2(0, 0)) == 0.5);
        CHECK(with_threshold(0.01, v2(0, 0)).improvement(0.005, v2(0, 0)) == doctest::Approx(-0.005).epsilon(1e-12));
        CHECK(with_threshold(0.5, v2(0, 0)).improvement(0.5, v2(0, 0)) == 0.0);
        CHECK(fresh.occupied() == 0);
    }

    TEST_CASE("insert anneals the threshold and keeps the passive elite")
    {
        Archive a(grid100());
        const Vector theta = v2(1, 2);
        auto r = a.insert(theta, 0.5, v2(0, 0));
        CHECK(r.accepted);
        CHECK(r.delta == 0.5);
        CHECK(std::abs(a.cell(CellIndex{50, 50}).threshold - 0.01) < 1e-12);

        Archive b = with_threshold(0.5, v2(0, 0));
        r = b.insert(theta, 1.0, v2(0, 0));
        CHECK(r.accepted);
        CHECK(std::abs(b.cell(CellIndex{50, 50}).threshold - 0.51) < 1e-12);

        Archive c(grid100());
        const auto flat = flat_index(CellIndex{50, 50}, c.spec());
        c.set_cell(flat, Cell{0.6, Elite{theta, 0.3, v2(0, 0)}});
        r = c.insert(v2(5, 5), 0.4, v2(0, 0));
        CHECK_FALSE(r.accepted);
        CHECK(r.elite_replaced);
        CHECK(c.cell(flat).elite->f == 0.4);
        CHECK(c.cell(flat).threshold == 0.6);
    }

    TEST_CASE("threshold follows the closed-form recurrence")
    {
        Rng rng(11);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double alpha = 0.02;
        for (int trial = 0; trial < 200; ++trial) {
            Archive a(grid100(), {alpha, 0.0});
            std::vector<double> accepted;
            double f = 0.0;
            for (int i = 0; i < 40; ++i) {
                f += u(rng) * 0.2; // increasing values always beat the threshold
                REQUIRE(a.insert(v2(0, 0), f, v2(0.3, 0.3)).accepted);
                accepted.push_back(f);
            }
            const std::size_t n = accepted.size();
            double expect = std::pow(1 - alpha, static_cast<double>(n)) * 0.0;
            for (std::size_t i = 0; i < n; ++i)
                expect += alpha * std::pow(1 - alpha, static_cast<double>(n - 1 - i)) * accepted[i];
            CHECK(std::abs(a.cell(cell_index(v2(0.3, 0.3), a.spec())).threshold - expect) < 1e-12);
        }
    }

    TEST_CASE("acceptance iff improvement is positive; elite is the running max")
    {
        Rng rng(5);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        Archive a(MeasureSpec::uniform(2, {-1, 1}, 3));
        std::map<std::size_t, double> best;
        for (int i = 0; i < 2000; ++i) {
            const Vector m = v2(u(rng), u(rng));
            const double f = u(rng);
            const double d = a.improvement(f, m);
            const auto r = a.insert(v2(0, 0), f, m);
            CHECK(r.accepted == (d > 0.0));
            CHECK(r.delta == d);
            const auto flat = flat_index(cell_index(m, a.spec()), a.spec());
            best[flat] = best.count(flat) ? std::max(best[flat], f) : f;
            CHECK(a.cell(flat).elite->f == best[flat]);
        }
    }

    TEST_CASE("merge keeps the best elite per cell")
    {
        Archive a(grid100()), b(grid100());
        a.insert(v2(1, 1), 0.4, v2(0, 0));
        b.insert(v2(2, 2), 0.7, v2(0, 0));
        a.insert(v2(3, 3), 0.2, v2(0.5, 0.5));

        const Archive self = Archive::merge(std::vector<Archive>{a, a});
        for (auto flat : a.occupied_cells())
            CHECK(self.cell(flat).elite->theta == a.cell(flat).elite->theta);
        CHECK(self.occupied() == a.occupied());

        const Archive m = Archive::merge(std::vector<Archive>{a, b});
        CHECK(m.cell(cell_index(v2(0, 0), m.spec())).elite->f == 0.7);
        CHECK(m.cell(cell_index(v2(0.5, 0.5), m.spec())).elite->f == 0.2);
        CHECK(m.cell(cell_index(v2(0, 0), m.spec())).threshold == 0.0);

        Archive other(MeasureSpec::uniform(2, {-1, 1}, 10));
        CHECK_THROWS_AS(Archive::merge(std::vector<Archive>{a, other}), ConfigError);
    }

    TEST_CASE("merge is associative and commutative on elites")
    {
        Rng rng(9);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::vector<Archive> as;
        for (int k = 0; k < 3; ++k) {
            Archive a(MeasureSpec::uniform(2, {-1, 1}, 5));
            for (int i = 0; i < 30; ++i)
                a.insert(v2(u(rng), u(rng)), u(rng), v2(u(rng), u(rng)));
            as.push_back(a);
        }
        const auto same = [](const Archive& x, const Archive& y) {
            if (x.occupied_cells() != y.occupied_cells()) return false;
            for (auto flat : x.occupied_cells())
                if (x.cell(flat).elite->f != y.cell(flat).elite->f) return false;
            return true;
        };
        const Archive ab_c = Archive::merge(std::vector<Archive>{Archive::merge(std::vector<Archive>{as[0], as[1]}), as[2]});
        const Archive a_bc = Archive::merge(std::vector<Archive>{as[0], Archive::merge(std::vector<Archive>{as[1], as[2]})});
        const Archive cba = Archive::merge(std::vector<Archive>{as[2], as[1], as[0]});
        CHECK(same(ab_c, a_bc));
        CHECK(same(ab_c, cba));
    }

    TEST_CASE("stats")
    {
        Archive a(grid100());
        auto s = a.stats();
        CHECK(s.coverage == 0.0);
        CHECK(s.qd_score == 0.0);
        a.insert(v2(0, 0), 0.5, v2(0, 0));
        s = a.stats();
        CHECK(s.coverage == doctest::Approx(1e-4));
        CHECK(s.qd_score == 0.5);
        a.insert(v2(0, 0), 0.25, v2(0.5, 0.5));
        CHECK(a.stats().qd_score == 0.75);
        CHECK(a.stats().best_f == 0.5);
    }

    TEST_CASE("jsonl round trip in row-major order")
    {
        Archive a(grid100());
        a.insert(v2(0.1, 0.2), 0.3, v2(0.905, -0.905));
        a.insert(v2(0.4, 0.5), 0.6, v2(-0.905, 0.905));
        std::stringstream ss;
        a.write_jsonl(ss);
        const std::string text = ss.str();
        CHECK(text.find("\"cell\":[4,95]") < text.find("\"cell\":[95,4]"));
        const Archive b = Archive::read_jsonl(ss, grid100());
        CHECK(b.occupied_cells() == a.occupied_cells());
        for (auto flat : a.occupied_cells()) {
            CHECK(b.cell(flat).elite->theta == a.cell(flat).elite->theta);
            CHECK(b.cell(flat).elite->f == a.cell(flat).elite->f);
        }
    }
}
