#include "qdgs/config.hpp"
#include "qdgs/downstream.hpp"
#include "qdgs/error.hpp"
#include "qdgs/parallel.hpp"
#include "qdgs/pipeline.hpp"
#include "qdgs/shapes_problem.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#ifndef QDGS_VERSION
#define QDGS_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qdgs;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kMissing = 3, kRuntime = 4 };

class MissingArtifact : public Error {
public:
    explicit MissingArtifact(const fs::path& p) : Error("missing artifact: " + p.string()) {}
};

void require(const fs::path& p)
{
    if (!fs::exists(p))
        throw MissingArtifact(p);
}

std::string utc_now()
{
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

std::ofstream open_out(const fs::path& p)
{
    fs::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out)
        throw IoError(p.string(), "cannot open for writing");
    return out;
}

template <class Stream>
Stream& lvalue(Stream&& s)
{
    return s;
}

json read_json(const fs::path& p)
{
    require(p);
    std::ifstream in(p);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw IoError(p.string(), std::string("invalid JSON (") + e.what() + ")");
    }
}

Matrix read_matrix_csv(const fs::path& p)
{
    require(p);
    std::ifstream in(p);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::vector<double> r;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
            r.push_back(std::stod(cell));
        rows.push_back(std::move(r));
    }
    if (rows.empty())
        throw IoError(p.string(), "empty matrix");
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size())
            throw IoError(p.string(), "ragged matrix");
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    return m;
}

/// Shared state of one command invocation.
struct Run {
    AppConfig cfg;
    fs::path out;
    std::string command;
    std::string started = utc_now();
    std::vector<std::string> artifacts;

    fs::path artifact(const fs::path& rel)
    {
        artifacts.push_back(rel.generic_string());
        return out / rel;
    }

    shapes::ShapesGenerator generator() const { return shapes::ShapesGenerator(cfg.domain, cfg.working_resolution); }

    RegularizerSpec regularizer() const
    {
        const json j = read_json(out / "calibration.json");
        RegularizerSpec spec;
        spec.rho = j.at("rho").get<double>();
        spec.delta_reg = j.at("delta_reg").get<double>();
        const auto c = j.at("center").get<std::vector<double>>();
        const auto s = j.at("scale").get<std::vector<double>>();
        spec.center = Eigen::Map<const Vector>(c.data(), static_cast<Eigen::Index>(c.size()));
        spec.scale = Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(s.size()));
        return spec;
    }

    void finish()
    {
        const fs::path path = out / "manifest.json";
        json manifest = fs::exists(path) ? read_json(path) : json{{"tool", "qdgs"}, {"runs", json::array()}};
        manifest["runs"].push_back({{"command", command},
                                    {"version", QDGS_VERSION},
                                    {"seed", cfg.seed},
                                    {"config", config_to_json(cfg)},
                                    {"started", started},
                                    {"finished", utc_now()},
                                    {"artifacts", artifacts}});
        open_out(path) << manifest.dump(2) << '\n';
    }
};

void write_density(Run& run, const std::string& method, const Matrix& density)
{
    write_matrix_csv(lvalue(open_out(run.artifact(fs::path(method) / "density.csv"))), density);
    write_ppm(run.artifact(fs::path(method) / "heatmap.ppm").string(), density_heatmap(density));
}

// ---------------------------------------------------------------- commands

void cmd_calibrate(Run& run)
{
    Rng rng(run.cfg.seed);
    const auto gen = run.generator();
    const CalibrationResult cal = calibrate_regularizer([&](Rng& r) { return gen.sample_prior(r); }, rng,
                                                        run.cfg.calibration_samples, run.cfg.rho);
    for (const auto& w : cal.warnings)
        std::cerr << "warning: " << w << '\n';

    Rng bias_rng(run.cfg.seed + 1);
    int majority = 0;
    for (int i = 0; i < run.cfg.bias_samples; ++i) {
        const auto p = shapes::decode(gen.sample_prior(bias_rng), run.cfg.domain);
        majority += (p.color < 0.5) == (p.shape < 0.5);
    }
    const double fraction = static_cast<double>(majority) / run.cfg.bias_samples;

    const auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    const json j{{"rho", cal.spec.rho},
                 {"delta_reg", cal.spec.delta_reg},
                 {"center", vec(cal.spec.center)},
                 {"scale", vec(cal.spec.scale)},
                 {"calibration_samples", run.cfg.calibration_samples},
                 {"target_bias", run.cfg.domain.bias},
                 {"majority_fraction", fraction},
                 {"bias_samples", run.cfg.bias_samples},
                 {"warnings", cal.warnings}};
    open_out(run.artifact("calibration.json")) << j.dump(2) << '\n';
    std::cout << std::setprecision(6) << "delta_reg " << cal.spec.delta_reg << "\nmajority_fraction " << fraction
              << " (target " << run.cfg.domain.bias << ")\n";
}

void cmd_sample(Run& run, const std::string& method)
{
    const auto gen = run.generator();
    const shapes::ShapesScorer scorer(run.regularizer(), run.cfg.qdgs.weights, run.cfg.domain);

    if (method == "qdgs") {
        const MultiTrialResult result = multi_trial(run.cfg.qdgs, gen, scorer);
        result.merged.write_jsonl(lvalue(open_out(run.artifact("qdgs/archive.jsonl"))));
        for (std::size_t t = 0; t < result.trials.size(); ++t) {
            const std::string name = result.trials.size() == 1 ? "run_log.csv" : "run_log_" + std::to_string(t) + ".csv";
            write_run_log_csv(lvalue(open_out(run.artifact(fs::path("qdgs") / name))), result.trials[t].log);
        }
        write_density(run, "qdgs", density_map(result.merged));
        const auto st = result.merged.stats();
        std::cout << "qdgs: " << st.occupied << " cells, coverage " << st.coverage << ", qd_score " << st.qd_score
                  << '\n';
    } else {
        const int n = run.cfg.random_budget();
        const auto samples = run_random(n, gen, scorer, run.cfg.seed, resolve_threads(run.cfg.threads));
        write_samples_csv(lvalue(open_out(run.artifact("random/samples.csv"))), samples);
        const Archive archive = archive_from_samples(samples, run.cfg.qdgs.grid, run.cfg.qdgs.anneal());
        archive.write_jsonl(lvalue(open_out(run.artifact("random/archive.jsonl"))));
        std::vector<Vector> ms;
        ms.reserve(samples.size());
        for (const auto& s : samples)
            ms.push_back(s.m);
        write_density(run, "random", density_map(ms, run.cfg.qdgs.grid));
        std::cout << "random: " << n << " samples, " << archive.occupied() << " cells\n";
    }
}

Archive load_archive(const Run& run, const fs::path& path)
{
    require(path);
    std::ifstream in(path);
    return Archive::read_jsonl(in, run.cfg.qdgs.grid, run.cfg.qdgs.anneal());
}

void cmd_export(Run& run, const std::string& method, int limit)
{
    const auto gen = run.generator();
    const Labeler labeler = shapes::shapes_labeler(run.cfg.domain, run.cfg.label_threshold);
    ExportOptions opts;
    opts.resolution = run.cfg.export_resolution;
    opts.threads = resolve_threads(run.cfg.threads);
    const fs::path rel = fs::path("datasets") / method;

    SyntheticDataset ds;
    if (method == "qdgs") {
        const Archive archive = load_archive(run, run.out / "qdgs/archive.jsonl");
        const auto identities = assign_identity_labels(archive, run.cfg.seed);
        opts.prefix = "elite";
        ds = export_dataset(archive, gen, labeler, (run.out / rel).string(), opts, &identities);
    } else {
        const fs::path path = run.out / "random/samples.csv";
        require(path);
        std::ifstream in(path);
        auto samples = read_samples_csv(in);
        if (limit > 0 && static_cast<std::size_t>(limit) < samples.size())
            samples.resize(static_cast<std::size_t>(limit));
        std::vector<ExportItem> items;
        for (const auto& s : samples)
            items.push_back({s.theta, s.f, flat_index(cell_index(s.m, run.cfg.qdgs.grid), run.cfg.qdgs.grid), {}, {}});
        opts.prefix = "sample";
        ds = export_items(items, gen, labeler, (run.out / rel).string(), opts);
    }
    run.artifacts.push_back((rel / "manifest.jsonl").generic_string());
    run.artifacts.push_back((rel / "images").generic_string());

    std::size_t minority = 0;
    for (const auto& r : ds.records)
        minority += (r.label == "triangle") == (r.m.size() > 0 && r.m[0] > 0.0);
    std::cout << method << ": exported " << ds.records.size() << " records, dropped " << ds.dropped
              << " ambiguous, minority fraction "
              << (ds.records.empty() ? 0.0 : static_cast<double>(minority) / ds.records.size()) << '\n';

    if (run.cfg.augment_delta > 0.0) {
        // rotation and scale coordinates: pose changes that keep the class
        Vector a = Vector::Zero(shapes::kLatentDim), b = Vector::Zero(shapes::kLatentDim);
        a[2] = 1.0;
        b[3] = 1.0;
        ExportOptions vopts = opts;
        vopts.prefix = "variant";
        const fs::path vrel = fs::path("datasets") / (method + "_variants");
        const auto vds = export_items(variant_items(ds, a, b, run.cfg.augment_delta), gen, labeler,
                                      (run.out / vrel).string(), vopts);
        run.artifacts.push_back((vrel / "manifest.jsonl").generic_string());
        std::cout << method << ": " << vds.records.size() << " augmentation variants\n";
    }
}

LabeledData load_synthetic(const Run& run, const std::string& method)
{
    const fs::path dir = run.out / "datasets" / method;
    require(dir / "manifest.jsonl");
    return from_synthetic(read_manifest(dir.string()));
}

void cmd_train(Run& run, double b, const std::string& finetune_method, std::string name)
{
    if (!(b > 0.0 && b < 1.0))
        throw ConfigError("--b must lie in (0, 1)");
    if (name.empty()) {
        std::ostringstream os;
        os << "b" << b << '_' << (finetune_method.empty() ? "none" : finetune_method);
        name = os.str();
    }
    const LabeledData synthetic = finetune_method.empty() ? LabeledData{} : load_synthetic(run, finetune_method);

    const LabeledData train_set =
        from_real(shapes::sample_real(b, run.cfg.downstream.train_size, run.cfg.seed, kClassifierSide, run.cfg.domain));
    TrainOptions pre = run.cfg.downstream.pretrain;
    pre.seed = run.cfg.seed;
    TrainResult result = train(train_set, pre);
    std::vector<double> tune_curve;
    if (!finetune_method.empty()) {
        TrainOptions tune = run.cfg.downstream.tune;
        tune.seed = run.cfg.seed;
        TrainResult tuned = finetune(result.model,
                                     run.cfg.downstream.tune_with_real ? concat(train_set, synthetic) : synthetic, tune);
        result.model = std::move(tuned.model);
        tune_curve = std::move(tuned.loss_curve);
    }
    open_out(run.artifact(fs::path("models") / (name + ".json"))) << result.model.to_json().dump() << '\n';
    auto curve = open_out(run.artifact(fs::path("models") / (name + "_loss.csv")));
    curve << "phase,epoch,loss\n" << std::setprecision(10);
    for (std::size_t e = 0; e < result.loss_curve.size(); ++e)
        curve << "pretrain," << e + 1 << ',' << result.loss_curve[e] << '\n';
    for (std::size_t e = 0; e < tune_curve.size(); ++e)
        curve << "finetune," << e + 1 << ',' << tune_curve[e] << '\n';
    std::cout << "trained " << name << " (" << train_set.size() << " real images"
              << (finetune_method.empty() ? ""
                                          : ", fine-tuned on " + std::to_string(synthetic.size()) + " synthetic"
                                                + (run.cfg.downstream.tune_with_real ? " plus the real set" : ""))
              << ")\n";
}

void cmd_eval(Run& run, const std::string& model_path)
{
    if (!model_path.empty()) {
        const fs::path p(model_path);
        const Classifier model = Classifier::from_json(read_json(p));
        const LabeledData eval = balanced_eval_set(run.cfg.downstream.eval_per_group, run.cfg.seed + 1'000'003,
                                                   kClassifierSide, run.cfg.domain);
        SweepRow row;
        row.method = p.stem().string();
        row.seed = static_cast<int>(run.cfg.seed);
        row.b = std::nan("");
        row.report = evaluate(model, eval);
        write_sweep_csv(lvalue(open_out(run.artifact(fs::path("results") / ("eval_" + p.stem().string() + ".csv")))), {row});
        std::cout << row.method << ": overall " << row.report.overall << ", minority_mean " << row.report.minority_mean
                  << ", DI " << row.report.di << '\n';
        return;
    }
    std::map<std::string, LabeledData> synthetic;
    for (const auto& m : run.cfg.downstream.methods) {
        if (m == "none")
            continue;
        if (fs::exists(run.out / "datasets" / m / "manifest.jsonl"))
            synthetic.emplace(m, load_synthetic(run, m));
        else
            std::cerr << "note: no dataset for method '" << m << "', its rows are marked absent\n";
    }
    const auto rows = experiment_sweep(run.cfg.downstream, synthetic);
    write_sweep_csv(lvalue(open_out(run.artifact("results/sweep.csv"))), rows);
    write_aggregate_csv(lvalue(open_out(run.artifact("results/aggregate.csv"))), aggregate(rows));
    std::cout << "sweep: " << rows.size() << " rows\n";
}

std::string pct(double v)
{
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << 100.0 * v;
    return os.str();
}

void cmd_report(Run& run)
{
    const fs::path sweep = run.out / "results/sweep.csv";
    require(sweep);
    std::ifstream in(sweep);
    const auto rows = read_sweep_csv(in);
    if (rows.empty())
        throw MissingArtifact(sweep);
    const auto agg = aggregate(rows);
    write_aggregate_csv(lvalue(open_out(run.artifact("report/report.csv"))), agg);

    std::vector<double> bs;
    std::vector<std::string> methods;
    for (const auto& a : agg) {
        if (std::find(bs.begin(), bs.end(), a.b) == bs.end())
            bs.push_back(a.b);
        if (std::find(methods.begin(), methods.end(), a.method) == methods.end())
            methods.push_back(a.method);
    }
    auto md = open_out(run.artifact("report/report.md"));
    md << "# Minority-group accuracy after fine-tuning\n\n"
       << "Mean over seeds of the two minority groups (blue triangle, red square), in percent, "
       << "with the standard error. Evaluated on a balanced set.\n\n| b |";
    for (const auto& m : methods)
        md << ' ' << m << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < methods.size(); ++i)
        md << "---|";
    md << '\n';
    for (double b : bs) {
        md << "| " << b << " |";
        for (const auto& m : methods) {
            const auto it = std::find_if(agg.begin(), agg.end(), [&](const AggregateRow& a) { return a.b == b && a.method == m; });
            if (it == agg.end())
                md << " absent |";
            else
                md << ' ' << pct(it->minority_mean) << " ± " << pct(it->minority_se) << " |";
        }
        md << '\n';
    }
    md << "\n## Disparate impact (min / max group accuracy)\n\n| b |";
    for (const auto& m : methods)
        md << ' ' << m << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < methods.size(); ++i)
        md << "---|";
    md << '\n';
    for (double b : bs) {
        md << "| " << b << " |";
        for (const auto& m : methods) {
            const auto it = std::find_if(agg.begin(), agg.end(), [&](const AggregateRow& a) { return a.b == b && a.method == m; });
            if (it == agg.end())
                md << " absent |";
            else
                md << ' ' << std::fixed << std::setprecision(3) << it->di_mean << std::defaultfloat << " |";
        }
        md << '\n';
    }

    for (const std::string method : {"qdgs", "random"}) {
        const fs::path density = run.out / method / "density.csv";
        if (!fs::exists(density))
            continue;
        write_ppm(run.artifact(fs::path("report") / ("density_" + method + ".ppm")).string(),
                  density_heatmap(read_matrix_csv(density)));
        md << "\n![" << method << " density](density_" << method << ".ppm)\n";
    }
    std::cout << "report: " << agg.size() << " aggregate rows\n";
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Quality-diversity generative sampling on the biased shapes domain"};
    app.set_version_flag("--version", QDGS_VERSION);
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_override;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    app.add_option("--config", config_path, "JSON config with domain/qdgs/scoring/downstream/io sections");
    app.add_option("--seed", seed, "global seed");
    app.add_option("--threads", threads, "worker cap, 0 = all cores");
    app.add_option("--out", out_override, "output root (overrides QDGS_OUT_DIR and io.out_dir)");

    auto* calibrate = app.add_subcommand("calibrate", "fit the latent regularizer and measure the decoder bias");

    auto* sample = app.add_subcommand("sample", "run QDGS or the random baseline");
    std::string sample_method = "qdgs";
    std::optional<int> iterations, lambda, n, trials;
    sample->add_option("--method", sample_method)->check(CLI::IsMember({"qdgs", "random"}));
    sample->add_option("--iterations", iterations);
    sample->add_option("--lambda", lambda);
    sample->add_option("--n", n, "random samples (default: the QDGS evaluation budget)");
    sample->add_option("--trials", trials);

    auto* exporter = app.add_subcommand("export", "render, label and write a synthetic dataset");
    std::string export_method = "qdgs";
    int limit = 0;
    std::optional<double> augment;
    exporter->add_option("--method", export_method)->check(CLI::IsMember({"qdgs", "random"}));
    exporter->add_option("--limit", limit, "random: export only the first N samples");
    exporter->add_option("--augment", augment, "latent step for the nine pose variants per record");

    auto* trainer = app.add_subcommand("train", "train a shape classifier on real biased data");
    double train_b = 0.98;
    std::string finetune_method, model_name;
    trainer->add_option("--b", train_b, "bias of the real training set");
    trainer->add_option("--finetune", finetune_method, "fine-tune on datasets/<METHOD>");
    trainer->add_option("--name", model_name);

    auto* evaluator = app.add_subcommand("eval", "evaluate one model, or run the full bias sweep");
    std::string model_path;
    evaluator->add_option("--model", model_path);

    auto* reporter = app.add_subcommand("report", "markdown/CSV tables and density heatmaps");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    Run run;
    try {
        if (!config_path.empty()) {
            if (!fs::exists(config_path)) {
                std::cerr << "error: config file not found: " << config_path << '\n';
                return kUsage;
            }
            run.cfg = load_config_file(config_path);
        }
        if (const char* env = std::getenv("QDGS_OUT_DIR"); env && *env)
            run.cfg.out_dir = env;
        if (!out_override.empty())
            run.cfg.out_dir = out_override;
        if (seed)
            run.cfg.seed = *seed;
        if (threads)
            run.cfg.threads = *threads;
        if (iterations)
            run.cfg.qdgs.iterations = *iterations;
        if (lambda)
            run.cfg.qdgs.lambda = *lambda;
        if (n)
            run.cfg.random_samples = *n;
        if (trials)
            run.cfg.qdgs.trials = *trials;
        if (augment)
            run.cfg.augment_delta = *augment;
        run.cfg.apply_globals();
        run.cfg.validate();
        if (n && *n < 1)
            throw ConfigError("--n must be >= 1");
        run.out = run.cfg.out_dir;

        if (*calibrate) {
            run.command = "calibrate";
            cmd_calibrate(run);
        } else if (*sample) {
            run.command = "sample";
            cmd_sample(run, sample_method);
        } else if (*exporter) {
            run.command = "export";
            cmd_export(run, export_method, limit);
        } else if (*trainer) {
            run.command = "train";
            cmd_train(run, train_b, finetune_method, model_name);
        } else if (*evaluator) {
            run.command = "eval";
            cmd_eval(run, model_path);
        } else if (*reporter) {
            run.command = "report";
            cmd_report(run);
        }
        run.finish();
        return kOk;
    } catch (const MissingArtifact& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kMissing;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
}
