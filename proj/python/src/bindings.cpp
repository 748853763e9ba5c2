#include "qdgs/archive.hpp"
#include "qdgs/downstream.hpp"
#include "qdgs/emitter.hpp"
#include "qdgs/error.hpp"
#include "qdgs/pipeline.hpp"
#include "qdgs/scoring.hpp"
#include "qdgs/shapes_problem.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace qdgs;

namespace {

py::array_t<double> to_numpy(const ImageBuffer& img)
{
    py::array_t<double> a({img.height, img.width, 3});
    std::copy(img.rgb.begin(), img.rgb.end(), a.mutable_data());
    return a;
}

ImageBuffer from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a)
{
    if (a.ndim() != 3 || a.shape(2) != 3)
        throw ConfigError("image must have shape (height, width, 3)");
    ImageBuffer img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
    std::copy(a.data(), a.data() + a.size(), img.rgb.begin());
    return img;
}

py::dict params_dict(const shapes::ShapeParams& p)
{
    py::dict d;
    d["color"] = p.color;
    d["shape"] = p.shape;
    d["rotation"] = p.rotation;
    d["scale"] = p.scale;
    d["noise_amp"] = p.noise_amp;
    d["noise_phase"] = std::vector<double>(p.noise_phase.begin(), p.noise_phase.end());
    return d;
}

shapes::ShapeParams params_from(double color, double shape, double rotation, double scale, double noise_amp)
{
    shapes::ShapeParams p;
    p.color = color;
    p.shape = shape;
    p.rotation = rotation;
    p.scale = scale;
    p.noise_amp = noise_amp;
    return p;
}

RegularizerSpec default_regularizer(std::uint64_t seed, int n)
{
    Rng rng(seed);
    return calibrate_regularizer([](Rng& r) { return shapes::sample_prior(r); }, rng, n).spec;
}

py::dict archive_summary(const Archive& a)
{
    const auto st = a.stats();
    py::list elites;
    for (std::size_t flat : a.occupied_cells()) {
        const Elite& e = *a.cell(flat).elite;
        py::dict d;
        d["cell"] = unflatten(flat, a.spec());
        d["f"] = e.f;
        d["m"] = e.m;
        d["theta"] = e.theta;
        elites.append(d);
    }
    py::dict out;
    out["coverage"] = st.coverage;
    out["qd_score"] = st.qd_score;
    out["best_f"] = st.best_f;
    out["occupied"] = st.occupied;
    out["elites"] = elites;
    return out;
}

} // namespace

PYBIND11_MODULE(_qdgs, m)
{
    m.doc() = "Quality-diversity generative sampling core";

    auto base = py::register_exception<Error>(m, "QdgsError");
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<EvaluationRejected>(m, "EvaluationRejected", base.ptr());
    py::register_exception<InternalError>(m, "InternalError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());

    // archive
    py::class_<MeasureSpec>(m, "MeasureSpec")
        .def_static("uniform", [](int k, double lo, double hi, int cells) { return MeasureSpec::uniform(k, {lo, hi}, cells); },
                    py::arg("k"), py::arg("lo"), py::arg("hi"), py::arg("cells"))
        .def_property_readonly("dims", &MeasureSpec::dims)
        .def_property_readonly("cell_count", &MeasureSpec::cell_count);

    m.def("cell_index", &cell_index, py::arg("m"), py::arg("spec"));

    py::class_<Archive>(m, "Archive")
        .def(py::init([](const MeasureSpec& spec, double alpha, double min_f) {
                 return Archive(spec, AnnealConfig{alpha, min_f});
             }),
             py::arg("spec"), py::arg("alpha") = 0.02, py::arg("min_f") = 0.0)
        .def("insert",
             [](Archive& a, const Vector& theta, double f, const Vector& m) {
                 const auto r = a.insert(theta, f, m);
                 return py::make_tuple(r.delta, r.accepted);
             },
             py::arg("theta"), py::arg("f"), py::arg("m"), "Returns (delta, accepted).")
        .def("improvement", &Archive::improvement, py::arg("f"), py::arg("m"))
        .def("threshold", [](const Archive& a, const CellIndex& idx) { return a.cell(idx).threshold; })
        .def("elite_f",
             [](const Archive& a, const CellIndex& idx) -> std::optional<double> {
                 const auto& c = a.cell(idx);
                 return c.elite ? std::optional<double>(c.elite->f) : std::nullopt;
             })
        .def_property_readonly("occupied", &Archive::occupied)
        .def("stats",
             [](const Archive& a) {
                 const auto s = a.stats();
                 return py::dict(py::arg("coverage") = s.coverage, py::arg("qd_score") = s.qd_score,
                                 py::arg("best_f") = s.best_f);
             })
        .def("summary", &archive_summary)
        .def_static("merge", [](const std::vector<Archive>& as) { return Archive::merge(as); });

    // emitter
    m.def("branch", &branch, py::arg("theta"), py::arg("grad_f"), py::arg("grad_m"), py::arg("c"));
    m.def("log_rank_weights", &log_rank_weights, py::arg("lam"));
    m.def(
        "ranked_ascent",
        [](const Vector& theta, const std::vector<Vector>& branches, const std::vector<double>& deltas, double eta) {
            Emitter e(theta, 1, EmitterConfig{eta, std::max<int>(2, static_cast<int>(branches.size())), 0.5});
            e.ranked_ascent(branches, deltas);
            return e.theta();
        },
        py::arg("theta"), py::arg("branches"), py::arg("deltas"), py::arg("eta") = 0.5);

    // scoring
    m.def("normalized", &normalized, py::arg("v"));
    m.def("fd_gradient", &fd_gradient, py::arg("fn"), py::arg("theta"), py::arg("h") = 1e-3);
    m.def("composite_objective",
          [](double g_txt, double g_mgn, double g_reg, double beta1, double beta2) {
              return composite_objective(g_txt, g_mgn, g_reg, ObjectiveWeights{beta1, beta2});
          },
          py::arg("g_txt"), py::arg("g_mgn"), py::arg("g_reg"), py::arg("beta1") = 0.5, py::arg("beta2") = 0.2);
    m.def("reg_penalty_from_distance",
          [](double distance, double delta_reg, double rho) {
              RegularizerSpec s;
              s.delta_reg = delta_reg;
              s.rho = rho;
              return reg_penalty_from_distance(distance, s);
          },
          py::arg("distance"), py::arg("delta_reg"), py::arg("rho") = 0.5);
    m.def("calibrate_standard_normal",
          [](int dim, int n, std::uint64_t seed) {
              Rng rng(seed);
              std::normal_distribution<double> normal;
              const auto cal = calibrate_regularizer(
                  [&](Rng& r) {
                      Vector v(dim);
                      for (int i = 0; i < dim; ++i) v[i] = normal(r);
                      return v;
                  },
                  rng, n);
              return cal.spec.delta_reg;
          },
          py::arg("dim"), py::arg("n") = 10000, py::arg("seed") = 0, "delta_reg of a standard normal sampler.");

    // shapes domain
    auto sh = m.def_submodule("shapes", "Biased shapes domain");
    sh.def("decode", [](const Vector& z) { return params_dict(shapes::decode(z)); }, py::arg("z"));
    sh.def("render",
           [](double color, double shape, double rotation, double scale, double noise_amp, int resolution) {
               return to_numpy(shapes::render(params_from(color, shape, rotation, scale, noise_amp), resolution));
           },
           py::arg("color"), py::arg("shape"), py::arg("rotation") = 0.0, py::arg("scale") = 1.0,
           py::arg("noise_amp") = 0.0, py::arg("resolution") = 64);
    sh.def("generate", [](const Vector& z, int resolution) { return to_numpy(shapes::render(shapes::decode(z), resolution)); },
           py::arg("z"), py::arg("resolution") = 64);
    sh.def("probe_redness", [](py::array_t<double> img) { return shapes::probe_redness(from_numpy(img)).value; });
    sh.def("probe_squareness", [](py::array_t<double> img) { return shapes::probe_squareness(from_numpy(img)).value; });
    sh.def("probe_quality", [](py::array_t<double> img) { return shapes::probe_quality(from_numpy(img)); });
    sh.def("label_from_m2", [](double m2, double tau) { return std::string(shapes::to_string(shapes::label_from_m2(m2, tau))); },
           py::arg("m2"), py::arg("tau") = 0.01);
    sh.def("sample_real_groups",
           [](double b, int n, std::uint64_t seed) {
               std::vector<std::pair<std::string, std::string>> out;
               for (const auto& s : shapes::sample_real(b, n, seed, 8))
                   out.emplace_back(shapes::to_string(s.shape), shapes::to_string(s.color));
               return out;
           },
           py::arg("b"), py::arg("n"), py::arg("seed") = 0, "(shape, color) pairs of n real draws.");

    // pipeline
    m.def(
        "run_qdgs_shapes",
        [](int iterations, int lam, std::uint64_t seed, int grid_cells, int threads) {
            QdgsConfig cfg;
            cfg.iterations = iterations;
            cfg.lambda = lam;
            cfg.seed = seed;
            cfg.threads = threads;
            cfg.grid = MeasureSpec::uniform(2, {-1.0, 1.0}, grid_cells);
            shapes::ShapesGenerator gen;
            shapes::ShapesScorer scorer(default_regularizer(seed, 10000));
            std::optional<QdgsRun> result;
            {
                py::gil_scoped_release release;
                result.emplace(run_qdgs(cfg, gen, scorer));
            }
            const QdgsRun& run = *result;
            py::dict out = archive_summary(run.archive);
            out["evaluations"] = run.evaluations;
            py::list log;
            for (const auto& r : run.log)
                log.append(py::make_tuple(r.iteration, r.coverage, r.qd_score, r.best_f, r.restarts, r.acceptances));
            out["log"] = log;
            return out;
        },
        py::arg("iterations"), py::arg("lam") = 32, py::arg("seed") = 0, py::arg("grid_cells") = 100,
        py::arg("threads") = 1);
    m.def(
        "run_random_shapes",
        [](int n, std::uint64_t seed) {
            shapes::ShapesGenerator gen;
            shapes::ShapesScorer scorer(default_regularizer(seed, 10000));
            std::vector<Sample> samples;
            {
                py::gil_scoped_release release;
                samples = run_random(n, gen, scorer, seed);
            }
            Matrix ms(static_cast<Eigen::Index>(samples.size()), 2);
            Vector fs(static_cast<Eigen::Index>(samples.size()));
            for (std::size_t i = 0; i < samples.size(); ++i) {
                ms.row(static_cast<Eigen::Index>(i)) = samples[i].m.transpose();
                fs[static_cast<Eigen::Index>(i)] = samples[i].f;
            }
            return py::make_tuple(fs, ms);
        },
        py::arg("n"), py::arg("seed") = 0, "Returns (f, m) with m of shape (n, 2).");
    m.def("augment_variants", &augment_variants, py::arg("theta"), py::arg("dir_a"), py::arg("dir_b"), py::arg("delta"));
    m.def(
        "density_map",
        [](const Matrix& measures, int cells) {
            std::vector<Vector> ms;
            for (Eigen::Index r = 0; r < measures.rows(); ++r) ms.push_back(measures.row(r).transpose());
            return density_map(ms, MeasureSpec::uniform(2, {-1.0, 1.0}, cells));
        },
        py::arg("measures"), py::arg("cells") = 100);

    // downstream
    m.def("disparate_impact",
          [](const std::vector<std::optional<double>>& acc) {
              if (acc.size() != kGroups) throw ConfigError("expected four group accuracies");
              std::array<std::optional<double>, kGroups> a;
              std::copy(acc.begin(), acc.end(), a.begin());
              return disparate_impact(a);
          },
          py::arg("group_accuracy"));
}
