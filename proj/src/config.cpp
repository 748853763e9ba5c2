#include "qdgs/config.hpp"

#include "qdgs/error.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <functional>
#include <map>

namespace qdgs {

using nlohmann::json;

namespace {

using Setter = std::function<void(const json&)>;

template <class T>
Setter bind(T& field)
{
    return [&field](const json& v) { field = v.get<T>(); };
}

void apply_section(const json& section, const std::string& name, const std::map<std::string, Setter>& setters)
{
    if (!section.is_object())
        throw ConfigError("config section '" + name + "' must be an object");
    for (const auto& [key, value] : section.items()) {
        const auto it = setters.find(key);
        if (it == setters.end())
            throw ConfigError("unknown config key '" + name + "." + key + "'");
        try {
            it->second(value);
        } catch (const json::exception&) {
            throw ConfigError("config key '" + name + "." + key + "' has the wrong type");
        }
    }
}

} // namespace

void AppConfig::apply_globals()
{
    qdgs.seed = seed;
    downstream.base_seed = seed;
    qdgs.threads = threads;
    downstream.threads = threads;
}

void AppConfig::validate() const
{
    qdgs.validate();
    if (!(domain.bias > 0.0 && domain.bias < 1.0))
        throw ConfigError("domain.bias must lie in (0, 1)");
    if (!(domain.gain > 0.0))
        throw ConfigError("domain.gain must be > 0");
    if (working_resolution < 8 || export_resolution < 8)
        throw ConfigError("render resolutions must be >= 8");
    if (calibration_samples < 2 || bias_samples < 1)
        throw ConfigError("calibration sample counts are too small");
    if (!(rho > 0.0))
        throw ConfigError("scoring.rho must be > 0");
    if (!(label_threshold >= 0.0))
        throw ConfigError("scoring.label_threshold must be >= 0");
    if (random_samples < 0)
        throw ConfigError("qdgs.random_samples must be >= 0");
    if (downstream.seeds < 1 || downstream.train_size < 2 || downstream.eval_per_group < 1)
        throw ConfigError("downstream sizes must be positive");
    if (downstream.pretrain.epochs < 0 || downstream.tune.epochs < 0 || downstream.pretrain.batch < 1)
        throw ConfigError("downstream epochs must be >= 0 and batch >= 1");
    for (double b : downstream.b_list)
        if (!(b > 0.0 && b < 1.0))
            throw ConfigError("downstream.b_list entries must lie in (0, 1)");
    if (!(augment_delta >= 0.0))
        throw ConfigError("io.augment_delta must be >= 0");
    if (threads < 0)
        throw ConfigError("threads must be >= 0");
}

AppConfig config_from_json(const json& doc, AppConfig c)
{
    if (!doc.is_object())
        throw ConfigError("config must be a JSON object");
    int grid_resolution = c.qdgs.grid.resolution.empty() ? 100 : c.qdgs.grid.resolution[0];
    int lr_batch = c.downstream.pretrain.batch;
    double lr = c.downstream.pretrain.lr;
    int hidden = c.downstream.pretrain.hidden;

    const std::map<std::string, std::function<void(const json&)>> sections{
        {"domain",
         [&](const json& s) {
             apply_section(s, "domain",
                           {{"gain", bind(c.domain.gain)},
                            {"bias", bind(c.domain.bias)},
                            {"kappa", bind(c.domain.kappa)},
                            {"pose_spread", bind(c.domain.pose_spread)},
                            {"working_resolution", bind(c.working_resolution)}});
         }},
        {"qdgs",
         [&](const json& s) {
             apply_section(s, "qdgs",
                           {{"iterations", bind(c.qdgs.iterations)},
                            {"eta", bind(c.qdgs.eta)},
                            {"lambda", bind(c.qdgs.lambda)},
                            {"sigma_g", bind(c.qdgs.sigma_g)},
                            {"alpha", bind(c.qdgs.alpha)},
                            {"min_f", bind(c.qdgs.min_f)},
                            {"grid_resolution", bind(grid_resolution)},
                            {"trials", bind(c.qdgs.trials)},
                            {"fd_step", bind(c.qdgs.fd_step)},
                            {"memory_capacity", bind(c.qdgs.memory_capacity)},
                            {"max_failure_rate", bind(c.qdgs.max_failure_rate)},
                            {"random_samples", bind(c.random_samples)}});
         }},
        {"scoring",
         [&](const json& s) {
             apply_section(s, "scoring",
                           {{"beta1", bind(c.qdgs.weights.beta1)},
                            {"beta2", bind(c.qdgs.weights.beta2)},
                            {"rho", bind(c.rho)},
                            {"calibration_samples", bind(c.calibration_samples)},
                            {"bias_samples", bind(c.bias_samples)},
                            {"label_threshold", bind(c.label_threshold)}});
         }},
        {"downstream",
         [&](const json& s) {
             apply_section(s, "downstream",
                           {{"b_list", bind(c.downstream.b_list)},
                            {"methods", bind(c.downstream.methods)},
                            {"seeds", bind(c.downstream.seeds)},
                            {"train_size", bind(c.downstream.train_size)},
                            {"eval_per_group", bind(c.downstream.eval_per_group)},
                            {"pretrain_epochs", bind(c.downstream.pretrain.epochs)},
                            {"finetune_epochs", bind(c.downstream.tune.epochs)},
                            {"finetune_with_real", bind(c.downstream.tune_with_real)},
                            {"lr", bind(lr)},
                            {"batch", bind(lr_batch)},
                            {"hidden", bind(hidden)}});
         }},
        {"io",
         [&](const json& s) {
             apply_section(s, "io",
                           {{"out_dir", bind(c.out_dir)},
                            {"export_resolution", bind(c.export_resolution)},
                            {"augment_delta", bind(c.augment_delta)}});
         }},
        {"seed", [&](const json& v) { c.seed = v.get<std::uint64_t>(); }},
        {"threads", [&](const json& v) { c.threads = v.get<int>(); }},
    };
    for (const auto& [key, value] : doc.items()) {
        const auto it = sections.find(key);
        if (it == sections.end())
            throw ConfigError("unknown config section '" + key + "'");
        try {
            it->second(value);
        } catch (const json::exception&) {
            throw ConfigError("config entry '" + key + "' has the wrong type");
        }
    }
    if (grid_resolution < 1)
        throw ConfigError("qdgs.grid_resolution must be >= 1");
    c.qdgs.grid = MeasureSpec::uniform(2, {-1.0, 1.0}, grid_resolution);
    for (TrainOptions* o : {&c.downstream.pretrain, &c.downstream.tune}) {
        o->lr = lr;
        o->batch = lr_batch;
        o->hidden = hidden;
    }
    c.apply_globals();
    c.validate();
    return c;
}

AppConfig load_config_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError(path, "cannot open config file");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
    return config_from_json(doc);
}

json config_to_json(const AppConfig& c)
{
    return {
        {"domain",
         {{"gain", c.domain.gain},
          {"bias", c.domain.bias},
          {"kappa", c.domain.kappa},
          {"pose_spread", c.domain.pose_spread},
          {"working_resolution", c.working_resolution}}},
        {"qdgs",
         {{"iterations", c.qdgs.iterations},
          {"eta", c.qdgs.eta},
          {"lambda", c.qdgs.lambda},
          {"sigma_g", c.qdgs.sigma_g},
          {"alpha", c.qdgs.alpha},
          {"min_f", c.qdgs.min_f},
          {"grid_resolution", c.qdgs.grid.resolution.at(0)},
          {"trials", c.qdgs.trials},
          {"fd_step", c.qdgs.fd_step},
          {"memory_capacity", c.qdgs.memory_capacity},
          {"max_failure_rate", c.qdgs.max_failure_rate},
          {"random_samples", c.random_samples}}},
        {"scoring",
         {{"beta1", c.qdgs.weights.beta1},
          {"beta2", c.qdgs.weights.beta2},
          {"rho", c.rho},
          {"calibration_samples", c.calibration_samples},
          {"bias_samples", c.bias_samples},
          {"label_threshold", c.label_threshold}}},
        {"downstream",
         {{"b_list", c.downstream.b_list},
          {"methods", c.downstream.methods},
          {"seeds", c.downstream.seeds},
          {"train_size", c.downstream.train_size},
          {"eval_per_group", c.downstream.eval_per_group},
          {"pretrain_epochs", c.downstream.pretrain.epochs},
          {"finetune_epochs", c.downstream.tune.epochs},
          {"finetune_with_real", c.downstream.tune_with_real},
          {"lr", c.downstream.pretrain.lr},
          {"batch", c.downstream.pretrain.batch},
          {"hidden", c.downstream.pretrain.hidden}}},
        {"io", {{"out_dir", c.out_dir}, {"export_resolution", c.export_resolution}, {"augment_delta", c.augment_delta}}},
        {"seed", c.seed},
        {"threads", c.threads},
    };
}

} // namespace qdgs
