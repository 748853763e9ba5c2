#include "qdgs/downstream.hpp"

#include "qdgs/error.hpp"
#include "qdgs/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace qdgs {

int group_index(shapes::ShapeClass shape, shapes::ColorClass color)
{
    return static_cast<int>(shape) * 2 + static_cast<int>(color);
}

const char* group_name(int group)
{
    static constexpr const char* names[kGroups] = {"red_triangle", "blue_triangle", "red_square", "blue_square"};
    if (group < 0 || group >= kGroups)
        throw ConfigError("group index out of range");
    return names[group];
}

bool group_is_minority(int group)
{
    return group == 1 || group == 2;
}

void LabeledData::append(const Vector& x, int label, int group)
{
    if (X.cols() == 0)
        X.resize(x.size(), 0);
    if (x.size() != X.rows())
        throw ConfigError("sample feature count differs from the dataset");
    X.conservativeResize(Eigen::NoChange, X.cols() + 1);
    X.col(X.cols() - 1) = x;
    labels.push_back(label);
    groups.push_back(group);
}

LabeledData concat(const LabeledData& a, const LabeledData& b)
{
    if (a.size() == 0)
        return b;
    if (b.size() == 0)
        return a;
    if (a.X.rows() != b.X.rows())
        throw ConfigError("cannot join datasets with different feature counts");
    LabeledData out;
    out.X.resize(a.X.rows(), a.X.cols() + b.X.cols());
    out.X << a.X, b.X;
    out.labels = a.labels;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    out.groups = a.groups;
    out.groups.insert(out.groups.end(), b.groups.begin(), b.groups.end());
    return out;
}

namespace {

LabeledData build(std::size_t n, const std::function<void(std::size_t, Vector&, int&, int&)>& fill)
{
    LabeledData d;
    d.X.resize(kClassifierInput, static_cast<Eigen::Index>(n));
    d.labels.resize(n);
    d.groups.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vector x;
        fill(i, x, d.labels[i], d.groups[i]);
        d.X.col(static_cast<Eigen::Index>(i)) = x;
    }
    return d;
}

} // namespace

LabeledData from_real(const std::vector<shapes::RealSample>& samples)
{
    return build(samples.size(), [&](std::size_t i, Vector& x, int& label, int& group) {
        const auto& s = samples[i];
        x = classifier_input(s.image);
        label = static_cast<int>(s.shape);
        group = group_index(s.shape, s.color);
    });
}

LabeledData from_synthetic(const SyntheticDataset& dataset)
{
    const std::filesystem::path root(dataset.root);
    return build(dataset.records.size(), [&](std::size_t i, Vector& x, int& label, int& group) {
        const auto& r = dataset.records[i];
        if (r.label == "triangle")
            label = 0;
        else if (r.label == "square")
            label = 1;
        else
            throw ConfigError("synthetic record has unsupported label '" + r.label + "'");
        x = classifier_input(read_png((root / r.image_path).string()));
        const auto color = r.m.size() > 0 && r.m[0] > 0.0 ? shapes::ColorClass::blue : shapes::ColorClass::red;
        group = group_index(static_cast<shapes::ShapeClass>(label), color);
    });
}

LabeledData balanced_eval_set(int per_group, std::uint64_t seed, int resolution, const shapes::DomainConfig& cfg)
{
    if (per_group < 1)
        throw ConfigError("eval set needs at least one image per group");
    std::array<std::vector<ImageBuffer>, kGroups> pools;
    std::uint64_t batch_seed = seed;
    const auto full = [&] {
        return std::all_of(pools.begin(), pools.end(),
                           [&](const auto& p) { return p.size() >= static_cast<std::size_t>(per_group); });
    };
    while (!full()) {
        for (auto& s : shapes::sample_real(0.5, 4 * per_group, batch_seed++, resolution, cfg)) {
            auto& pool = pools[static_cast<std::size_t>(group_index(s.shape, s.color))];
            if (pool.size() < static_cast<std::size_t>(per_group))
                pool.push_back(std::move(s.image));
        }
    }
    return build(static_cast<std::size_t>(kGroups * per_group), [&](std::size_t i, Vector& x, int& label, int& group) {
        group = static_cast<int>(i) / per_group;
        label = group / 2;
        x = classifier_input(pools[static_cast<std::size_t>(group)][i % static_cast<std::size_t>(per_group)]);
    });
}

namespace {

void run_sgd(Classifier& model, const LabeledData& data, const TrainOptions& o, std::vector<double>& curve)
{
    if (o.batch < 1)
        throw ConfigError("batch size must be >= 1");
    if (o.epochs < 0)
        throw ConfigError("epochs must be >= 0");
    Rng rng(o.seed);
    std::vector<Eigen::Index> order(data.size());
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Classifier::Gradients g;
    Matrix xb;
    std::vector<int> yb;
    for (int e = 0; e < o.epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        double sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(o.batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(o.batch));
            xb.resize(data.X.rows(), static_cast<Eigen::Index>(end - start));
            yb.resize(end - start);
            for (std::size_t k = start; k < end; ++k) {
                xb.col(static_cast<Eigen::Index>(k - start)) = data.X.col(order[k]);
                yb[k - start] = data.labels[static_cast<std::size_t>(order[k])];
            }
            sum += model.backward(xb, yb, g);
            model.apply(g, o.lr);
            ++batches;
        }
        curve.push_back(batches ? sum / static_cast<double>(batches) : 0.0);
    }
}

void require_two_classes(const LabeledData& data)
{
    bool seen[2] = {false, false};
    for (int y : data.labels) {
        if (y != 0 && y != 1)
            throw ConfigError("labels must be 0 (triangle) or 1 (square)");
        seen[y] = true;
    }
    if (!seen[0] || !seen[1])
        throw ConfigError("training data must contain both classes");
}

} // namespace

TrainResult train(const LabeledData& data, const TrainOptions& options)
{
    require_two_classes(data);
    TrainResult r{Classifier(static_cast<int>(data.X.rows()), options.hidden, 2, options.seed), {}};
    run_sgd(r.model, data, options, r.loss_curve);
    return r;
}

TrainResult finetune(const Classifier& model, const LabeledData& data, const TrainOptions& options)
{
    TrainResult r{model, {}};
    if (options.epochs == 0)
        return r;
    require_two_classes(data);
    if (data.X.rows() != model.inputs())
        throw ConfigError("fine-tuning data does not match the model input size");
    run_sgd(r.model, data, options, r.loss_curve);
    return r;
}

double disparate_impact(const std::array<std::optional<double>, kGroups>& acc)
{
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& a : acc) {
        if (!a)
            continue;
        lo = std::min(lo, *a);
        hi = std::max(hi, *a);
    }
    if (!std::isfinite(lo))
        return std::numeric_limits<double>::quiet_NaN();
    if (hi == lo)
        return 1.0;
    return lo / hi;
}

EvalReport summarize(const std::array<std::optional<double>, kGroups>& acc, double overall)
{
    EvalReport r;
    r.group_accuracy = acc;
    r.overall = overall;
    double sum = 0.0;
    int n = 0;
    for (int g = 0; g < kGroups; ++g)
        if (group_is_minority(g) && acc[static_cast<std::size_t>(g)]) {
            sum += *acc[static_cast<std::size_t>(g)];
            ++n;
        }
    r.minority_mean = n ? sum / n : std::numeric_limits<double>::quiet_NaN();
    r.di = disparate_impact(acc);
    return r;
}

EvalReport evaluate(const Classifier& model, const LabeledData& eval)
{
    if (eval.size() == 0)
        throw ConfigError("evaluation set is empty");
    const auto pred = model.predict(eval.X);
    std::array<int, kGroups> hits{}, totals{};
    int correct = 0;
    for (std::size_t i = 0; i < eval.size(); ++i) {
        const bool ok = pred[i] == eval.labels[i];
        correct += ok;
        const int g = eval.groups[i];
        if (g < 0 || g >= kGroups)
            throw ConfigError("evaluation sample lacks a group tag");
        totals[static_cast<std::size_t>(g)]++;
        hits[static_cast<std::size_t>(g)] += ok;
    }
    std::array<std::optional<double>, kGroups> acc;
    for (std::size_t g = 0; g < kGroups; ++g)
        if (totals[g] > 0)
            acc[g] = static_cast<double>(hits[g]) / totals[g];
    return summarize(acc, static_cast<double>(correct) / static_cast<double>(eval.size()));
}

std::vector<SweepRow> experiment_sweep(const SweepConfig& config, const std::map<std::string, LabeledData>& synthetic)
{
    if (config.seeds < 1)
        throw ConfigError("sweep needs at least one seed");
    if (config.b_list.empty() || config.methods.empty())
        throw ConfigError("sweep needs at least one bias level and one method");
    for (double b : config.b_list)
        if (!(b > 0.0 && b < 1.0))
            throw ConfigError("bias levels must lie in (0, 1)");

    const LabeledData eval = balanced_eval_set(config.eval_per_group, config.base_seed + 1'000'003);
    const std::size_t nb = config.b_list.size();
    const std::size_t nm = config.methods.size();
    const std::size_t ns = static_cast<std::size_t>(config.seeds);
    std::vector<SweepRow> rows(nb * nm * ns);

    parallel_for(nb * ns, resolve_threads(config.threads), [&](std::size_t task) {
        const std::size_t bi = task / ns;
        const std::size_t s = task % ns;
        const double b = config.b_list[bi];
        const std::uint64_t seed = config.base_seed + s;

        const LabeledData train_set =
            from_real(shapes::sample_real(b, config.train_size, seed * 1000 + bi, kClassifierSide));
        TrainOptions pre = config.pretrain;
        pre.seed = seed;
        const Classifier base = train(train_set, pre).model;

        for (std::size_t mi = 0; mi < nm; ++mi) {
            SweepRow& row = rows[(bi * nm + mi) * ns + s];
            row.b = b;
            row.method = config.methods[mi];
            row.seed = static_cast<int>(seed);
            if (row.method == "none") {
                row.report = evaluate(base, eval);
                continue;
            }
            const auto it = synthetic.find(row.method);
            if (it == synthetic.end() || it->second.size() == 0) {
                row.absent = true;
                continue;
            }
            TrainOptions tune = config.tune;
            tune.seed = seed;
            const Classifier tuned = config.tune_with_real ? finetune(base, concat(train_set, it->second), tune).model
                                                           : finetune(base, it->second, tune).model;
            row.report = evaluate(tuned, eval);
        }
    });
    return rows;
}

std::vector<AggregateRow> aggregate(const std::vector<SweepRow>& rows)
{
    std::vector<AggregateRow> out;
    std::vector<std::vector<const SweepRow*>> members;
    for (const auto& r : rows) {
        if (r.absent)
            continue;
        auto it = std::find_if(out.begin(), out.end(),
                               [&](const AggregateRow& a) { return a.b == r.b && a.method == r.method; });
        if (it == out.end()) {
            out.push_back({});
            out.back().b = r.b;
            out.back().method = r.method;
            members.emplace_back();
            it = out.end() - 1;
        }
        members[static_cast<std::size_t>(it - out.begin())].push_back(&r);
    }
    const auto mean_se = [](const std::vector<double>& v, double& mean, double& se) {
        const double n = static_cast<double>(v.size());
        mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
        double ss = 0.0;
        for (double x : v)
            ss += (x - mean) * (x - mean);
        se = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
    };
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto& m = members[i];
        auto& a = out[i];
        a.n = static_cast<int>(m.size());
        std::vector<double> overall, minority, di;
        for (const SweepRow* r : m) {
            overall.push_back(r->report.overall);
            minority.push_back(r->report.minority_mean);
            di.push_back(r->report.di);
        }
        mean_se(overall, a.overall_mean, a.overall_se);
        mean_se(minority, a.minority_mean, a.minority_se);
        mean_se(di, a.di_mean, a.di_se);
        for (std::size_t g = 0; g < kGroups; ++g) {
            double sum = 0.0;
            int n = 0;
            for (const SweepRow* r : m)
                if (r->report.group_accuracy[g]) {
                    sum += *r->report.group_accuracy[g];
                    ++n;
                }
            a.group_mean[g] = n ? sum / n : std::numeric_limits<double>::quiet_NaN();
        }
    }
    return out;
}

namespace {

std::string num(double v)
{
    if (std::isnan(v))
        return "";
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

std::string opt(const std::optional<double>& v)
{
    return v ? num(*v) : "";
}

} // namespace

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows)
{
    out << "b,method,seed";
    for (int g = 0; g < kGroups; ++g)
        out << ',' << group_name(g);
    out << ",overall,minority_mean,di\n";
    for (const auto& r : rows) {
        out << num(r.b) << ',' << r.method << ',' << r.seed;
        if (r.absent) {
            out << ",absent,,,,,,\n";
            continue;
        }
        for (const auto& a : r.report.group_accuracy)
            out << ',' << opt(a);
        out << ',' << num(r.report.overall) << ',' << num(r.report.minority_mean) << ',' << num(r.report.di) << '\n';
    }
}

void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows)
{
    out << "b,method,n";
    for (int g = 0; g < kGroups; ++g)
        out << ',' << group_name(g);
    out << ",overall_mean,overall_se,minority_mean,minority_se,di_mean,di_se\n";
    for (const auto& a : rows) {
        out << num(a.b) << ',' << a.method << ',' << a.n;
        for (double g : a.group_mean)
            out << ',' << num(g);
        out << ',' << num(a.overall_mean) << ',' << num(a.overall_se) << ',' << num(a.minority_mean) << ','
            << num(a.minority_se) << ',' << num(a.di_mean) << ',' << num(a.di_se) << '\n';
    }
}

std::vector<SweepRow> read_sweep_csv(std::istream& in)
{
    std::vector<SweepRow> rows;
    std::string line;
    if (!std::getline(in, line))
        return rows;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
            f.push_back(cell);
        while (f.size() < 10)
            f.emplace_back();
        SweepRow r;
        try {
            r.b = std::stod(f[0]);
            r.method = f[1];
            r.seed = std::stoi(f[2]);
            if (f[3] == "absent") {
                r.absent = true;
            } else {
                const auto parse = [](const std::string& s) {
                    return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
                };
                for (std::size_t g = 0; g < kGroups; ++g)
                    if (!f[3 + g].empty())
                        r.report.group_accuracy[g] = std::stod(f[3 + g]);
                r.report.overall = parse(f[7]);
                r.report.minority_mean = parse(f[8]);
                r.report.di = parse(f[9]);
            }
        } catch (const std::exception&) {
            throw ConfigError("malformed sweep row: " + line);
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace qdgs
