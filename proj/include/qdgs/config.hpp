#pragma once

#include "qdgs/downstream.hpp"
#include "qdgs/pipeline.hpp"
#include "qdgs/shapes.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <string>

namespace qdgs {

/// Everything a CLI run needs. JSON sections: domain, qdgs, scoring, downstream, io,
/// plus top-level seed and threads.
struct AppConfig {
    shapes::DomainConfig domain;
    int working_resolution = 64;

    QdgsConfig qdgs;
    int random_samples = 0; // 0 means the QDGS budget, iterations·(λ+1)

    int calibration_samples = 10000;
    double rho = 0.5;
    int bias_samples = 100000;
    double label_threshold = 0.01;

    SweepConfig downstream;

    std::string out_dir = "qdgs_out";
    int export_resolution = 128;
    double augment_delta = 0.0; // > 0 adds nine pose variants per exported record

    std::uint64_t seed = 0;
    int threads = 0; // 0 means all cores

    int random_budget() const { return random_samples > 0 ? random_samples : qdgs.iterations * (qdgs.lambda + 1); }
    /// Copies seed and threads into the nested configs; call after changing either.
    void apply_globals();
    void validate() const;
};

/// Overlays a JSON document on the defaults. Unknown keys and wrong types raise ConfigError.
AppConfig config_from_json(const nlohmann::json& doc, AppConfig base = {});
AppConfig load_config_file(const std::string& path);
nlohmann::json config_to_json(const AppConfig& config);

} // namespace qdgs
