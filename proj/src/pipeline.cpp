#include "qdgs/pipeline.hpp"

#include "qdgs/error.hpp"
#include "qdgs/kmeans.hpp"
#include "qdgs/parallel.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace qdgs {

namespace fs = std::filesystem;
using nlohmann::json;

void QdgsConfig::validate() const
{
    if (iterations < 1) throw ConfigError("qdgs: iterations must be >= 1");
    if (trials < 1) throw ConfigError("qdgs: trials must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("qdgs: alpha must be in [0, 1]");
    if (!(fd_step > 0.0)) throw ConfigError("qdgs: fd_step must be > 0");
    if (!(max_failure_rate >= 0.0)) throw ConfigError("qdgs: max_failure_rate must be >= 0");
    emitter().validate();
    grid.validate();
}

namespace {

struct Outcome {
    std::optional<Evaluation> eval;
    std::string error;
};

Outcome evaluate(const Generator& g, const Scorer& s, const LatentSolution& theta, const MarginMemory& memory)
{
    try {
        Evaluation e = s.score(theta, g.generate(theta), memory);
        if (!std::isfinite(e.f) || !e.m.allFinite()) throw EvaluationRejected("non-finite objective or measure");
        return {std::move(e), {}};
    } catch (const EvaluationRejected& ex) {
        return {std::nullopt, ex.what()};
    }
}

// Central differences of (f, m) through the generator; 2·d renders.
std::optional<Gradients> fd_gradients(const Generator& g, const Scorer& s, const LatentSolution& theta,
                                      const MarginMemory& memory, double h, int threads, std::size_t& count)
{
    const Eigen::Index d = theta.size();
    const int k = s.num_measures();
    std::vector<Outcome> out(static_cast<std::size_t>(2 * d));
    parallel_for(out.size(), threads, [&](std::size_t i) {
        LatentSolution p = theta;
        p(static_cast<Eigen::Index>(i / 2)) += (i % 2 == 0) ? h : -h;
        out[i] = evaluate(g, s, p, memory);
    });
    count += out.size();

    Gradients grads{Vector(d), Matrix(d, k)};
    for (Eigen::Index j = 0; j < d; ++j) {
        const auto& plus = out[static_cast<std::size_t>(2 * j)].eval;
        const auto& minus = out[static_cast<std::size_t>(2 * j + 1)].eval;
        if (!plus || !minus) return std::nullopt;
        grads.grad_f(j) = (plus->f - minus->f) / (2.0 * h);
        grads.grad_m.row(j) = ((plus->m - minus->m) / (2.0 * h)).transpose();
    }
    return grads;
}

} // namespace

QdgsRun run_qdgs(const QdgsConfig& config, const Generator& generator, const Scorer& scorer)
{
    config.validate();
    const int dim = generator.latent_dim();
    const int k = scorer.num_measures();
    if (config.grid.dims() != k) throw ConfigError("qdgs: grid dimensionality differs from the scorer's measure count");
    LatentSolution theta0 = config.theta0.value_or(LatentSolution::Zero(dim));
    if (theta0.size() != dim) throw ConfigError("qdgs: theta0 dimension differs from the generator latent dimension");

    QdgsRun run{Archive(config.grid, config.anneal()), {}, 0, 0, 0};
    run.log.reserve(static_cast<std::size_t>(config.iterations));

    Emitter emitter(theta0, k, config.emitter());
    MarginMemory memory(config.memory_capacity);
    Rng rng(config.seed);
    const int threads = resolve_threads(config.threads);
    const std::size_t lambda = static_cast<std::size_t>(config.lambda);
    int restarts = 0;
    std::string last_error;

    for (int it = 0; it < config.iterations; ++it) {
        int acceptances = 0;
        const LatentSolution theta = emitter.theta();
        const ImageBuffer image = generator.generate(theta);

        std::optional<Evaluation> here;
        std::optional<Gradients> grads;
        ++run.evaluations;
        try {
            here = scorer.score(theta, image, memory);
            if (!std::isfinite(here->f) || !here->m.allFinite())
                throw EvaluationRejected("non-finite objective or measure at the search point");
            grads = scorer.gradients(theta, image, memory);
            if (!grads)
                grads = fd_gradients(generator, scorer, theta, memory, config.fd_step, threads,
                                     run.gradient_evaluations);
            if (!grads) throw EvaluationRejected("finite-difference neighbourhood rejected");
        } catch (const EvaluationRejected& ex) {
            here.reset();
            last_error = ex.what();
            ++run.failures;
        }

        if (here) {
            normalize_grads(grads->grad_f, grads->grad_m);
            if (run.archive.insert(theta, here->f, here->m).accepted) ++acceptances;

            const std::vector<Vector> coeffs = emitter.sample_coeffs(rng);
            std::vector<LatentSolution> branches(lambda);
            for (std::size_t i = 0; i < lambda; ++i)
                branches[i] = branch(theta, grads->grad_f, grads->grad_m, coeffs[i]);

            std::vector<Outcome> outcomes(lambda);
            parallel_for(lambda, threads,
                         [&](std::size_t i) { outcomes[i] = evaluate(generator, scorer, branches[i], memory); });
            run.evaluations += lambda;

            std::vector<double> deltas(lambda, -std::numeric_limits<double>::infinity());
            for (std::size_t i = 0; i < lambda; ++i) {
                if (!outcomes[i].eval) {
                    ++run.failures;
                    last_error = outcomes[i].error;
                    continue;
                }
                const InsertResult r = run.archive.insert(branches[i], outcomes[i].eval->f, outcomes[i].eval->m);
                deltas[i] = r.delta;
                if (r.accepted) ++acceptances;
            }

            update_memory(memory, image);
            if (acceptances == 0) {
                emitter.restart(run.archive, rng);
                ++restarts;
            } else {
                emitter.ranked_ascent(branches, deltas);
                if (!emitter.adapt(coeffs, deltas)) {
                    emitter.restart(run.archive, rng);
                    ++restarts;
                }
            }
        } else {
            emitter.restart(run.archive, rng);
            ++restarts;
        }

        const ArchiveStats st = run.archive.stats();
        run.log.push_back({it + 1, st.coverage, st.qd_score, st.best_f, restarts, acceptances});

        const std::size_t attempted = run.evaluations + run.gradient_evaluations;
        if (attempted >= 100 && static_cast<double>(run.failures) > config.max_failure_rate * static_cast<double>(attempted)) {
            std::ostringstream msg;
            msg << "qdgs: aborting at iteration " << it + 1 << ": " << run.failures << " of " << attempted
                << " evaluations rejected (limit " << config.max_failure_rate * 100.0 << "%); last error: "
                << last_error;
            throw Error(msg.str());
        }
    }
    return run;
}

void write_run_log_csv(std::ostream& out, const std::vector<IterationLog>& log)
{
    out << "iteration,coverage,qd_score,best_f,restarts,acceptances\n";
    out << std::setprecision(10);
    for (const auto& r : log)
        out << r.iteration << ',' << r.coverage << ',' << r.qd_score << ',' << r.best_f << ',' << r.restarts << ','
            << r.acceptances << '\n';
}

std::vector<Sample> run_random(int n, const Generator& generator, const Scorer& scorer, std::uint64_t seed,
                               int threads)
{
    if (n < 0) throw ConfigError("run_random: n must be >= 0");
    Rng rng(seed);
    std::vector<Sample> samples(static_cast<std::size_t>(n));
    for (auto& s : samples) s.theta = generator.sample_prior(rng);
    const MarginMemory empty(0);
    parallel_for(samples.size(), resolve_threads(threads), [&](std::size_t i) {
        Evaluation e = scorer.score(samples[i].theta, generator.generate(samples[i].theta), empty);
        samples[i].f = e.f;
        samples[i].m = std::move(e.m);
    });
    return samples;
}

Archive archive_from_samples(const std::vector<Sample>& samples, const MeasureSpec& grid, AnnealConfig anneal)
{
    Archive a(grid, anneal);
    for (const auto& s : samples) a.insert(s.theta, s.f, s.m);
    return a;
}

void write_samples_csv(std::ostream& out, const std::vector<Sample>& samples)
{
    out << std::setprecision(17);
    const Eigen::Index d = samples.empty() ? 0 : samples.front().theta.size();
    const Eigen::Index k = samples.empty() ? 0 : samples.front().m.size();
    out << "index,f";
    for (Eigen::Index j = 0; j < k; ++j) out << ",m" << j + 1;
    for (Eigen::Index j = 0; j < d; ++j) out << ",theta" << j;
    out << '\n';
    for (std::size_t i = 0; i < samples.size(); ++i) {
        out << i << ',' << samples[i].f;
        for (Eigen::Index j = 0; j < k; ++j) out << ',' << samples[i].m(j);
        for (Eigen::Index j = 0; j < d; ++j) out << ',' << samples[i].theta(j);
        out << '\n';
    }
}

std::vector<Sample> read_samples_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line)) return {};
    int k = 0, d = 0;
    {
        std::stringstream hs(line);
        std::string col;
        while (std::getline(hs, col, ',')) {
            if (col.size() > 1 && col[0] == 'm') ++k;
            if (col.rfind("theta", 0) == 0) ++d;
        }
    }
    std::vector<Sample> samples;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> v;
        std::stringstream ls(line);
        std::string cell;
        try {
            while (std::getline(ls, cell, ',')) v.push_back(std::stod(cell));
        } catch (const std::exception&) {
            throw ConfigError("malformed sample row: " + line);
        }
        if (v.size() != static_cast<std::size_t>(2 + k + d)) throw ConfigError("sample row has the wrong width: " + line);
        Sample s;
        s.f = v[1];
        s.m = Eigen::Map<const Vector>(v.data() + 2, k);
        s.theta = Eigen::Map<const Vector>(v.data() + 2 + k, d);
        samples.push_back(std::move(s));
    }
    return samples;
}

MultiTrialResult multi_trial(const QdgsConfig& config, const Generator& generator, const Scorer& scorer)
{
    config.validate();
    MultiTrialResult result{Archive(config.grid, config.anneal()), {}};
    std::vector<Archive> archives;
    for (int t = 0; t < config.trials; ++t) {
        QdgsConfig c = config;
        c.seed = config.seed + static_cast<std::uint64_t>(t);
        result.trials.push_back(run_qdgs(c, generator, scorer));
        archives.push_back(result.trials.back().archive);
    }
    result.merged = Archive::merge(archives);
    return result;
}

int chunk_of(const Vector& m, const MeasureSpec& grid)
{
    if (grid.dims() < 2 || m.size() < 2) throw ConfigError("chunk_of: needs at least two measures");
    int idx[2];
    for (int d = 0; d < 2; ++d) {
        const Interval& b = grid.bounds[static_cast<std::size_t>(d)];
        const double t = (m(d) - b.lo) / (b.hi - b.lo) * 3.0;
        idx[d] = std::clamp(static_cast<int>(std::floor(t)), 0, 2);
    }
    return idx[0] * 3 + idx[1];
}

std::map<std::size_t, IdentityLabel> assign_identity_labels(const Archive& archive, std::uint64_t seed)
{
    if (archive.empty()) throw ConfigError("assign_identity_labels: archive has no elites");
    std::vector<std::vector<std::size_t>> chunks(9);
    for (std::size_t flat : archive.occupied_cells())
        chunks[static_cast<std::size_t>(chunk_of(archive.cell(flat).elite->m, archive.spec()))].push_back(flat);

    std::map<std::size_t, IdentityLabel> labels;
    for (int c = 0; c < 9; ++c) {
        const auto& members = chunks[static_cast<std::size_t>(c)];
        if (members.empty()) continue;
        const Eigen::Index dim = archive.cell(members.front()).elite->theta.size();
        Matrix pts(static_cast<Eigen::Index>(members.size()), dim);
        for (std::size_t i = 0; i < members.size(); ++i)
            pts.row(static_cast<Eigen::Index>(i)) = archive.cell(members[i]).elite->theta.transpose();
        const int k = std::max(1, static_cast<int>(members.size() / 2));
        Rng rng(seed + static_cast<std::uint64_t>(c));
        const KMeansResult km = kmeans(pts, k, rng);
        for (std::size_t i = 0; i < members.size(); ++i) labels[members[i]] = {c, km.assignment[i]};
    }
    return labels;
}

std::vector<LatentSolution> augment_variants(const LatentSolution& theta, const Vector& dir_a, const Vector& dir_b,
                                             double delta)
{
    if (dir_a.size() != theta.size() || dir_b.size() != theta.size())
        throw ConfigError("augment_variants: direction dimension mismatch");
    if (dir_a.squaredNorm() == 0.0 || dir_b.squaredNorm() == 0.0)
        throw ConfigError("augment_variants: directions must be non-zero");
    std::vector<LatentSolution> out;
    out.reserve(9);
    for (int i = -1; i <= 1; ++i)
        for (int j = -1; j <= 1; ++j) out.push_back(theta + (i * delta) * dir_a + (j * delta) * dir_b);
    return out;
}

namespace {

json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector json_vec(const json& j)
{
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json record_json(const DatasetRecord& r)
{
    json j{{"path", r.image_path}, {"label", r.label}, {"f", r.f}, {"theta", vec_json(r.theta)}};
    for (Eigen::Index i = 0; i < r.m.size(); ++i) j["m" + std::to_string(i + 1)] = r.m(i);
    if (r.cell) j["cell"] = *r.cell;
    if (r.identity) j["identity"] = {r.identity->chunk, r.identity->cluster};
    return j;
}

} // namespace

SyntheticDataset export_items(const std::vector<ExportItem>& items, const Generator& generator, const Labeler& labeler,
                              const std::string& out_dir, const ExportOptions& options)
{
    const fs::path root(out_dir);
    const fs::path images = root / "images";
    std::error_code ec;
    fs::create_directories(images, ec);
    if (ec) throw IoError(images.string(), "cannot create directory");

    const int width = static_cast<int>(std::to_string(std::max<std::size_t>(items.size(), 1) - 1).size());
    std::vector<std::optional<DatasetRecord>> records(items.size());
    parallel_for(items.size(), resolve_threads(options.threads), [&](std::size_t i) {
        const ExportItem& item = items[i];
        const ImageBuffer img = quantize8(generator.generate(item.theta, options.resolution));
        LabelDecision decision = item.inherited ? *item.inherited : labeler(img);
        if (!decision.label) return;
        std::ostringstream name;
        name << options.prefix << '_' << std::setw(width) << std::setfill('0') << i << ".png";
        const fs::path rel = fs::path("images") / name.str();
        write_png((root / rel).string(), img);
        records[i] = DatasetRecord{item.theta, rel.generic_string(), *decision.label, item.identity, item.f,
                                   std::move(decision.m), item.cell};
    });

    SyntheticDataset ds;
    ds.root = root.string();
    const fs::path manifest = root / "manifest.jsonl";
    std::ofstream out(manifest);
    if (!out) throw IoError(manifest.string(), "cannot open manifest for writing");
    out << std::setprecision(17);
    for (auto& r : records) {
        if (!r) {
            ++ds.dropped;
            continue;
        }
        out << record_json(*r).dump() << '\n';
        ds.records.push_back(std::move(*r));
    }
    if (!out) throw IoError(manifest.string(), "write failed");
    return ds;
}

SyntheticDataset export_dataset(const Archive& archive, const Generator& generator, const Labeler& labeler,
                                const std::string& out_dir, const ExportOptions& options,
                                const std::map<std::size_t, IdentityLabel>* identities)
{
    if (archive.empty()) throw ConfigError("export_dataset: archive has no elites");
    std::vector<ExportItem> items;
    for (std::size_t flat : archive.occupied_cells()) {
        const Elite& e = *archive.cell(flat).elite;
        ExportItem item{e.theta, e.f, flat, std::nullopt, std::nullopt};
        if (identities) {
            if (auto it = identities->find(flat); it != identities->end()) item.identity = it->second;
        }
        items.push_back(std::move(item));
    }
    ExportOptions opts = options;
    if (opts.prefix == ExportOptions{}.prefix) opts.prefix = "elite";
    return export_items(items, generator, labeler, out_dir, opts);
}

SyntheticDataset read_manifest(const std::string& dataset_dir)
{
    const fs::path manifest = fs::path(dataset_dir) / "manifest.jsonl";
    std::ifstream in(manifest);
    if (!in) throw IoError(manifest.string(), "cannot open manifest");
    SyntheticDataset ds;
    ds.root = dataset_dir;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            DatasetRecord r;
            r.image_path = j.at("path").get<std::string>();
            r.label = j.at("label").get<std::string>();
            r.f = j.at("f").get<double>();
            r.theta = json_vec(j.at("theta"));
            std::vector<double> m;
            for (int i = 1; j.contains("m" + std::to_string(i)); ++i) m.push_back(j.at("m" + std::to_string(i)));
            r.m = Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(m.size()));
            if (j.contains("cell")) r.cell = j.at("cell").get<std::size_t>();
            if (j.contains("identity")) r.identity = IdentityLabel{j["identity"][0], j["identity"][1]};
            ds.records.push_back(std::move(r));
        } catch (const json::exception& ex) {
            throw IoError(manifest.string(), "malformed line " + std::to_string(lineno) + " (" + ex.what() + ")");
        }
    }
    return ds;
}

std::vector<ExportItem> variant_items(const SyntheticDataset& parents, const Vector& dir_a, const Vector& dir_b,
                                      double delta)
{
    std::vector<ExportItem> items;
    items.reserve(parents.records.size() * 9);
    for (const DatasetRecord& r : parents.records)
        for (LatentSolution& v : augment_variants(r.theta, dir_a, dir_b, delta))
            items.push_back({std::move(v), r.f, r.cell, r.identity, LabelDecision{r.label, r.m}});
    return items;
}

Matrix density_map(const std::vector<Vector>& measures, const MeasureSpec& grid)
{
    if (grid.dims() != 2) throw ConfigError("density_map: grid must be two-dimensional");
    Matrix counts = Matrix::Zero(grid.resolution[0], grid.resolution[1]);
    for (const auto& m : measures) {
        const CellIndex c = cell_index(m, grid);
        counts(c[0], c[1]) += 1.0;
    }
    if (!measures.empty()) counts /= static_cast<double>(measures.size());
    return counts;
}

Matrix density_map(const Archive& archive)
{
    std::vector<Vector> ms;
    for (std::size_t flat : archive.occupied_cells()) ms.push_back(archive.cell(flat).elite->m);
    return density_map(ms, archive.spec());
}

void write_matrix_csv(std::ostream& out, const Matrix& grid)
{
    out << std::setprecision(10);
    for (Eigen::Index r = 0; r < grid.rows(); ++r) {
        for (Eigen::Index c = 0; c < grid.cols(); ++c) out << (c ? "," : "") << grid(r, c);
        out << '\n';
    }
}

ImageBuffer density_heatmap(const Matrix& density, int cell_px)
{
    if (cell_px < 1) throw ConfigError("density_heatmap: cell_px must be >= 1");
    const int nx = static_cast<int>(density.rows());
    const int ny = static_cast<int>(density.cols());
    ImageBuffer img(nx * cell_px, ny * cell_px, 0.0);
    const double peak = density.size() ? density.maxCoeff() : 0.0;
    for (int i = 0; i < nx; ++i) {
        for (int j = 0; j < ny; ++j) {
            const int level = peak > 0.0 ? static_cast<int>(std::lround(255.0 * density(i, j) / peak)) : 0;
            const double t = level / 255.0;
            const double rgb[3] = {std::clamp(3.0 * t, 0.0, 1.0), std::clamp(3.0 * t - 1.0, 0.0, 1.0),
                                   std::clamp(3.0 * t - 2.0, 0.0, 1.0)};
            for (int y = 0; y < cell_px; ++y)
                for (int x = 0; x < cell_px; ++x)
                    for (int ch = 0; ch < 3; ++ch)
                        img.at(i * cell_px + x, (ny - 1 - j) * cell_px + y, ch) = rgb[ch];
        }
    }
    return img;
}

} // namespace qdgs
