// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
//
//   qdgs_acceptance --cli PATH --work DIR [--only 1,2,...]

#include "qdgs/downstream.hpp"
#include "qdgs/emitter.hpp"
#include "qdgs/error.hpp"
#include "qdgs/pipeline.hpp"
#include "qdgs/scoring.hpp"
#include "qdgs/shapes_problem.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <sys/wait.h>

using namespace qdgs;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what)
    {
        if (!ok) {
            pass = false;
            detail << "[failed: " << what << "] ";
        }
    }
};

Vector vec(std::initializer_list<double> xs)
{
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v[i++] = x;
    return v;
}

bool near(double a, double b, double tol = 1e-9) { return std::abs(a - b) <= tol; }

bool in_minority_quadrant(const Vector& m) { return (m(0) > 0.0) != (m(1) > 0.0); }

// ---------------------------------------------------------------------------

void unit_exactness(Outcome& o)
{
    Matrix gm(2, 1);
    gm << 0, 1;
    o.require(branch(vec({0, 0}), vec({1, 0}), gm, vec({-2, 3})).isApprox(vec({2, 3}), 1e-12), "branch (2,3)");
    o.require(branch(vec({0.4, -1}), vec({1, 0}), gm, vec({0, 0})) == vec({0.4, -1}), "branch identity");
    const Vector b3 = branch(vec({1, 1}), vec({1, 0}), gm, vec({0.5, -0.5}));
    o.require(near(b3[0], 1.5) && near(b3[1], 0.5), "branch (1.5,0.5)");

    const ObjectiveWeights w{0.5, 0.2};
    o.require(near(composite_objective(0.5, 0.9, 0.25, w), 0.0), "composite 0.0");
    o.require(near(composite_objective(0.37, 0.9, 0.25, ObjectiveWeights{0, 0}), 0.37), "composite reduction");
    o.require(near(composite_objective(0.6, 0.0, 0.0, w), 0.6), "composite empty memory at center");

    MarginMemory mem;
    o.require(margin(vec({1, 0, 0}), mem) == 0.0, "margin empty");
    for (double c : {0.2, 0.9, 0.4}) mem.push(vec({c, std::sqrt(1 - c * c), 0}));
    o.require(near(margin(vec({1, 0, 0}), mem), 0.9), "margin max 0.9");
    MarginMemory self;
    self.push(vec({0.3, -0.2, 0.7}));
    o.require(near(margin(vec({0.3, -0.2, 0.7}), self), 1.0), "margin self 1.0");

    RegularizerSpec r;
    r.delta_reg = 2.0;
    r.rho = 0.5;
    o.require(reg_penalty_from_distance(0.8, r) == 0.0, "penalty inside");
    o.require(near(reg_penalty_from_distance(1.5, r), 0.25), "penalty 0.25");
    o.require(reg_penalty_from_distance(1.0, r) == 0.0, "penalty boundary");

    using Acc = std::array<std::optional<double>, kGroups>;
    o.require(near(disparate_impact(Acc{0.9, 0.8, 0.85, 0.95}), 0.8 / 0.95), "DI 0.842");
    o.require(disparate_impact(Acc{1.0, 1.0, 1.0, 1.0}) == 1.0, "DI perfect");
    o.require(disparate_impact(Acc{1.0, 1.0, 0.0, 0.0}) == 0.0, "DI constant predictor");
    o.detail << "branch, composite, margin, penalty and DI examples checked to 1e-9";
}

void threshold_annealing(Outcome& o)
{
    const double alpha = 0.02;
    Rng rng(2);
    std::uniform_real_distribution<double> u(-0.5, 1.5);
    std::uniform_int_distribution<int> len(1, 60);
    double worst = 0.0;
    for (int seq = 0; seq < 1000; ++seq) {
        Archive a(MeasureSpec::uniform(2, {-1, 1}, 100), AnnealConfig{alpha, 0.0});
        const Vector m = vec({0.1, -0.3});
        std::vector<double> accepted;
        const int n = len(rng);
        for (int i = 0; i < n; ++i) {
            const double f = u(rng);
            if (a.insert(vec({0, 0}), f, m).accepted) accepted.push_back(f);
        }
        // threshold_n = (1−α)^n·min_f + Σ α(1−α)^{n−1−i} f_i over accepted f_i
        double expect = 0.0;
        const std::size_t k = accepted.size();
        for (std::size_t i = 0; i < k; ++i)
            expect += alpha * std::pow(1 - alpha, static_cast<double>(k - 1 - i)) * accepted[i];
        worst = std::max(worst, std::abs(a.cell(cell_index(m, a.spec())).threshold - expect));
    }
    o.require(worst <= 1e-12, "closed-form recurrence");
    o.detail << "1000 random sequences, max deviation " << worst;
}

void gradient_fidelity(Outcome& o)
{
    const double h = 1e-3;
    Rng rng(3);
    std::normal_distribution<double> n;
    int good = 0;
    const int probes = 200;
    double worst = 0.0;
    for (int i = 0; i < probes; ++i) {
        const Vector z = shapes::sample_prior(rng);
        Vector dir(shapes::kLatentDim);
        for (int d = 0; d < shapes::kLatentDim; ++d) dir[d] = n(rng);
        dir.normalize();
        const int which = i % 3;
        const auto fn = [which](const Vector& x) {
            const ImageBuffer img = shapes::render(shapes::decode(x), 64);
            if (which == 0) return shapes::probe_quality(img);
            if (which == 1) return shapes::probe_redness(img).value;
            return shapes::probe_squareness(img).value;
        };
        const double directional = fd_gradient(fn, z, h).dot(dir);
        const double secant = (fn(z + 0.5 * h * dir) - fn(z - 0.5 * h * dir)) / h;
        const double scale = std::max({std::abs(directional), std::abs(secant), 1e-12});
        const double rel = std::abs(directional - secant) / scale;
        worst = std::max(worst, rel);
        if (rel <= 0.05) ++good;
    }
    const double frac = static_cast<double>(good) / probes;
    o.require(frac >= 0.95, "95% within 5%");
    o.detail << good << "/" << probes << " probes within 5% (" << std::fixed << std::setprecision(1) << 100 * frac
             << "%)";
}

// Shared state for criteria 4 to 6.
struct ShapesArtifacts {
    QdgsRun qdgs;
    std::vector<Sample> random;
    SyntheticDataset qdgs_set;
    SyntheticDataset random_set;
    double seconds = 0.0;
};

ShapesArtifacts build_shapes_artifacts(const fs::path& work)
{
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(1);
    const auto cal = calibrate_regularizer([](Rng& r) { return shapes::sample_prior(r); }, rng);
    const shapes::ShapesGenerator gen;
    const shapes::ShapesScorer scorer(cal.spec);

    QdgsConfig cfg;
    cfg.iterations = 2000;
    cfg.lambda = 32;
    cfg.seed = 7;
    cfg.threads = 0;

    ShapesArtifacts a{run_qdgs(cfg, gen, scorer), {}, {}, {}, 0.0};
    const int budget = cfg.iterations * (cfg.lambda + 1);
    a.random = run_random(budget, gen, scorer, 7, 0);

    ExportOptions opt{128, 0, "elite"};
    a.qdgs_set = export_dataset(a.qdgs.archive, gen, shapes::shapes_labeler(), (work / "qdgs").string(), opt);

    // The random fine-tuning set gets as many raw draws as QDGS had elites to export.
    const std::size_t m = a.qdgs_set.records.size() + a.qdgs_set.dropped;
    std::vector<ExportItem> items;
    for (std::size_t i = 0; i < std::min(m, a.random.size()); ++i)
        items.push_back({a.random[i].theta, a.random[i].f, std::nullopt, std::nullopt, std::nullopt});
    opt.prefix = "rand";
    a.random_set = export_items(items, gen, shapes::shapes_labeler(), (work / "random").string(), opt);
    a.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return a;
}

double minority_fraction(const SyntheticDataset& ds)
{
    if (ds.records.empty()) return 0.0;
    std::size_t k = 0;
    for (const auto& r : ds.records) k += in_minority_quadrant(r.m);
    return static_cast<double>(k) / static_cast<double>(ds.records.size());
}

void coverage_claim(Outcome& o, const ShapesArtifacts& a)
{
    const Archive random_archive = archive_from_samples(a.random, a.qdgs.archive.spec());
    const double q = static_cast<double>(a.qdgs.archive.occupied());
    const double r = static_cast<double>(random_archive.occupied());
    const double ratio = r > 0 ? q / r : INFINITY;
    const double fq = minority_fraction(a.qdgs_set);
    const double fr = minority_fraction(a.random_set);
    o.require(a.qdgs.evaluations == a.random.size(), "identical evaluation budget");
    o.require(ratio >= 1.5, "(a) cells >= 1.5x random");
    o.require(fq >= 0.30, "(b) qdgs minority >= 30%");
    o.require(fr <= 0.10, "(b) random minority <= 10%");
    o.detail << std::fixed << std::setprecision(3) << "cells qdgs " << q << " vs random " << r << " (" << ratio
             << "x); minority share qdgs " << fq << " (" << a.qdgs_set.records.size() << " records), random " << fr
             << " (" << a.random_set.records.size() << " records); " << std::setprecision(0) << a.seconds << " s";
}

struct SweepSummary {
    std::map<std::pair<double, std::string>, double> minority; // mean over seeds
    double seconds = 0.0;
};

SweepSummary run_sweep(const ShapesArtifacts& a)
{
    const auto t0 = std::chrono::steady_clock::now();
    std::map<std::string, LabeledData> synth{{"qdgs", from_synthetic(a.qdgs_set)},
                                             {"random", from_synthetic(a.random_set)}};
    SweepConfig cfg; // reference b list, 5 seeds, 2000 training images, 1000 per eval group
    cfg.threads = 0;
    SweepSummary s;
    for (const auto& row : aggregate(experiment_sweep(cfg, synth))) s.minority[{row.b, row.method}] = row.minority_mean;
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return s;
}

void bias_repair(Outcome& o, const SweepSummary& s)
{
    const auto gain = [&](double b) { return s.minority.at({b, "qdgs"}) - s.minority.at({b, "none"}); };
    o.detail << std::fixed << std::setprecision(1) << "minority mean none/qdgs (pp):";
    for (double b : {0.80, 0.85, 0.90, 0.95, 0.98}) {
        o.detail << " b=" << std::setprecision(2) << b << std::setprecision(1) << ' ' << 100 * s.minority.at({b, "none"})
                 << '/' << 100 * s.minority.at({b, "qdgs"});
        if (!(gain(b) >= 0.0)) {
            std::ostringstream what;
            what << "(a) qdgs >= none at b=" << b;
            o.require(false, what.str());
        }
    }
    o.require(gain(0.98) > gain(0.80), "(b) gain at 0.98 > gain at 0.80");
    o.require(gain(0.98) >= 0.10, "(c) gain at 0.98 >= 10 pp");
    o.detail << "; gain 0.80 " << 100 * gain(0.80) << " pp, gain 0.98 " << 100 * gain(0.98) << " pp; "
             << std::setprecision(0) << s.seconds << " s";
}

void qdgs_vs_random(Outcome& o, const SweepSummary& s)
{
    const double q = s.minority.at({0.98, "qdgs"});
    const double r = s.minority.at({0.98, "random"});
    o.require(q >= r, "qdgs >= random at b=0.98");
    o.detail << std::fixed << std::setprecision(1) << "b=0.98 minority mean qdgs " << 100 * q << "% vs random "
             << 100 * r << "%";
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& cli, const fs::path& out, const fs::path& config, const std::string& args)
{
    const std::string cmd = "\"" + cli + "\" --config \"" + config.string() + "\" --out \"" + out.string()
                            + "\" --seed 11 --threads 1 " + args + " > \"" + (out.parent_path() / "cli.log").string()
                            + "\" 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

void determinism(Outcome& o, const std::string& cli, const fs::path& work)
{
    if (cli.empty()) {
        o.require(false, "no --cli given");
        return;
    }
    const auto t0 = std::chrono::steady_clock::now();
    fs::remove_all(work);
    fs::create_directories(work);
    const fs::path config = work / "toy.json";
    std::ofstream(config) << nlohmann::json{
        {"qdgs", {{"iterations", 50}, {"lambda", 8}}},
        {"scoring", {{"calibration_samples", 2000}, {"bias_samples", 20000}}},
        {"downstream",
         {{"b_list", {0.8, 0.98}},
          {"seeds", 2},
          {"train_size", 300},
          {"eval_per_group", 50},
          {"pretrain_epochs", 5},
          {"finetune_epochs", 3}}}}.dump(2);

    const std::vector<std::string> steps{"calibrate",
                                         "sample --method qdgs",
                                         "sample --method random --n 500",
                                         "export --method qdgs",
                                         "export --method random",
                                         "train --b 0.98 --name base",
                                         "train --b 0.98 --finetune qdgs --name tuned",
                                         "eval --model models/tuned.json",
                                         "eval",
                                         "report"};
    std::vector<std::map<std::string, std::string>> csvs(2);
    for (int run = 0; run < 2; ++run) {
        const fs::path out = work / ("run" + std::to_string(run)) / "out";
        fs::create_directories(out);
        for (const auto& step : steps) {
            std::string args = step;
            if (step.rfind("eval --model", 0) == 0) args = "eval --model \"" + (out / "models/tuned.json").string() + "\"";
            const int rc = run_cli(cli, out, config, args);
            if (rc != 0) {
                o.require(false, "run " + std::to_string(run) + " step '" + step + "' exit " + std::to_string(rc));
                return;
            }
        }
        for (const auto& e : fs::recursive_directory_iterator(out))
            if (e.is_regular_file() && e.path().extension() == ".csv")
                csvs[static_cast<std::size_t>(run)][fs::relative(e.path(), out).string()] = slurp(e.path());
    }
    std::size_t differing = 0;
    for (const auto& [name, body] : csvs[0]) {
        const auto it = csvs[1].find(name);
        if (it == csvs[1].end() || it->second != body) {
            ++differing;
            o.detail << "[differs: " << name << "] ";
        }
    }
    o.require(csvs[0].size() == csvs[1].size(), "same CSV file set");
    o.require(differing == 0, "byte-identical CSVs");
    o.require(csvs[0].count("results/sweep.csv") && csvs[0].count("report/report.csv"), "sweep and report present");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.detail << csvs[0].size() << " CSV artifacts compared across two seeded runs, " << differing << " differ; "
             << std::fixed << std::setprecision(0) << secs << " s";
}

void emitter_sanity(Outcome& o)
{
    const Vector target = vec({1.0, -1.5, 0.75});
    EmitterConfig ec{0.5, 32, 0.5};
    Emitter e(Vector::Zero(6), 2, ec);
    Rng rng(8);
    const double d0 = (e.distribution().mean - target).norm();
    int reached = -1;
    for (int it = 1; it <= 200 && reached < 0; ++it) {
        const auto cs = e.sample_coeffs(rng);
        std::vector<double> deltas;
        for (const auto& c : cs) deltas.push_back(-(c - target).squaredNorm());
        if (!e.adapt(cs, deltas)) break;
        if ((e.distribution().mean - target).norm() <= 0.1 * d0) reached = it;
    }
    o.require(reached > 0, "mu within 10% of the start distance in <= 200 iterations");

    Archive empty(MeasureSpec::uniform(2, {-1, 1}, 10));
    e.set_theta(vec({1, 2, 3, 4, 5, 6}));
    e.maybe_restart(false, empty, rng);
    const Emitter fresh(Vector::Zero(6), 2, ec);
    o.require(e.distribution() == fresh.distribution(), "restart distribution equals a fresh emitter");
    o.require(e.theta() == fresh.theta(), "restart theta equals theta0");
    o.require(e.distribution().covariance().isApprox(0.25 * Matrix::Identity(3, 3)), "covariance 0.25 I");
    o.detail << "bowl reached 10% of the initial distance at iteration " << reached
             << "; restart state equals a fresh emitter field by field";
}

void labeling(Outcome& o)
{
    const shapes::ShapesGenerator gen;
    Rng rng(9);
    const auto cal = calibrate_regularizer([](Rng& r) { return shapes::sample_prior(r); }, rng, 2000);
    const shapes::ShapesScorer scorer(cal.spec);
    std::vector<Sample> samples = run_random(3000, gen, scorer, 9, 0);
    const Archive archive = archive_from_samples(samples, MeasureSpec::uniform(2, {-1, 1}, 100));
    const auto labels = assign_identity_labels(archive, 5);

    std::map<int, std::vector<std::size_t>> chunks;
    for (std::size_t flat : archive.occupied_cells()) chunks[chunk_of(archive.cell(flat).elite->m, archive.spec())].push_back(flat);
    o.require(labels.size() == archive.occupied(), "every elite labeled once");

    int nonempty = 0, violations = 0, wrong_k = 0;
    for (const auto& [chunk, members] : chunks) {
        ++nonempty;
        const int expected_k = std::max(1, static_cast<int>(members.size() / 2));
        std::map<int, std::vector<std::size_t>> clusters;
        for (std::size_t flat : members) {
            const auto& l = labels.at(flat);
            if (l.chunk != chunk) ++violations;
            clusters[l.cluster].push_back(flat);
        }
        if (static_cast<int>(clusters.size()) != expected_k) ++wrong_k;
        for (const auto& [id, pts] : clusters)
            if (id < 0 || id >= expected_k) ++wrong_k;

        // Centroids recomputed from the labels; Lloyd's fixed point puts every
        // point nearest its own cluster mean.
        std::map<int, Vector> mean;
        for (const auto& [id, pts] : clusters) {
            Vector c = Vector::Zero(archive.cell(pts[0]).elite->theta.size());
            for (std::size_t flat : pts) c += archive.cell(flat).elite->theta;
            mean[id] = c / static_cast<double>(pts.size());
        }
        for (const auto& [id, pts] : clusters)
            for (std::size_t flat : pts) {
                const Vector& t = archive.cell(flat).elite->theta;
                const double own = (t - mean[id]).squaredNorm();
                for (const auto& [other, c] : mean)
                    if (other != id && (t - c).squaredNorm() < own - 1e-12) ++violations;
            }
    }
    o.require(wrong_k == 0, "k = max(1, floor(|C|/2)) per chunk");
    o.require(violations == 0, "nearest-centroid at convergence");

    // Label band: exactly |m2| <= 0.01 is ambiguous.
    int band_errors = 0;
    for (int i = -3000; i <= 3000; ++i) {
        const double m2 = i * 1e-5;
        const bool ambiguous = shapes::label_from_m2(m2) == shapes::Label::ambiguous;
        if (ambiguous != (std::abs(m2) <= 0.01)) ++band_errors;
    }
    for (double edge : {0.01, -0.01}) {
        if (shapes::label_from_m2(edge) != shapes::Label::ambiguous) ++band_errors;
        if (shapes::label_from_m2(std::nextafter(edge, 2 * edge)) == shapes::Label::ambiguous) ++band_errors;
    }
    o.require(band_errors == 0, "ambiguous band is exactly |m2| <= 0.01");
    o.detail << archive.occupied() << " elites in " << nonempty << " chunks; k mismatches " << wrong_k
             << ", assignment violations " << violations << ", band errors " << band_errors;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"QDGS acceptance criteria"};
    std::string cli, work = (fs::temp_directory_path() / "qdgs_acceptance").string();
    std::vector<int> only;
    app.add_option("--cli", cli, "path to the qdgs executable (criterion 7)");
    app.add_option("--work", work, "scratch directory");
    app.add_option("--only", only, "run a subset of criteria")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    const auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };
    fs::create_directories(work);

    const std::map<int, std::string> names{{1, "unit exactness"},      {2, "threshold annealing"},
                                           {3, "gradient fidelity"},   {4, "coverage vs random"},
                                           {5, "bias-repair trend"},   {6, "qdgs vs random fine-tuning"},
                                           {7, "determinism"},         {8, "emitter sanity"},
                                           {9, "labeling and k-means"}};
    int failures = 0;
    const auto report = [&](int c, const std::function<void(Outcome&)>& body) {
        if (!wanted(c)) return;
        Outcome o;
        try {
            body(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "exception: " << e.what();
        }
        if (!o.pass) ++failures;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << c << " (" << names.at(c) << "): " << o.detail.str()
                  << std::endl;
    };

    report(1, unit_exactness);
    report(2, threshold_annealing);
    report(3, gradient_fidelity);

    std::optional<ShapesArtifacts> shared;
    std::optional<SweepSummary> sweep;
    std::string shared_error;
    if (wanted(4) || wanted(5) || wanted(6)) {
        try {
            shared.emplace(build_shapes_artifacts(fs::path(work) / "shapes"));
            if (wanted(5) || wanted(6)) sweep.emplace(run_sweep(*shared));
        } catch (const std::exception& e) {
            shared_error = e.what();
        }
    }
    const auto need = [&](bool have) {
        if (!have) throw Error("shared QDGS run failed: " + shared_error);
    };
    report(4, [&](Outcome& o) { need(shared.has_value()); coverage_claim(o, *shared); });
    report(5, [&](Outcome& o) { need(sweep.has_value()); bias_repair(o, *sweep); });
    report(6, [&](Outcome& o) { need(sweep.has_value()); qdgs_vs_random(o, *sweep); });
    report(7, [&](Outcome& o) { determinism(o, cli, fs::path(work) / "determinism"); });
    report(8, emitter_sanity);
    report(9, labeling);

    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
