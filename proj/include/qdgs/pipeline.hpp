#pragma once

#include "qdgs/archive.hpp"
#include "qdgs/emitter.hpp"
#include "qdgs/image.hpp"
#include "qdgs/problem.hpp"
#include "qdgs/scoring.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace qdgs {

struct QdgsConfig {
    int iterations = 7000;
    double eta = 0.5;
    int lambda = 32;
    double sigma_g = 0.5;
    double alpha = 0.02;
    double min_f = 0.0;
    std::optional<LatentSolution> theta0; // zero vector when unset
    MeasureSpec grid = MeasureSpec::uniform(2, {-1.0, 1.0}, 100);
    ObjectiveWeights weights;             // consumed when building the scorer
    int trials = 1;
    std::uint64_t seed = 0;

    double fd_step = 1e-3;
    std::size_t memory_capacity = 100;
    double max_failure_rate = 0.01;
    int threads = 1;

    EmitterConfig emitter() const { return {eta, lambda, sigma_g}; }
    AnnealConfig anneal() const { return {alpha, min_f}; }
    void validate() const;
};

struct IterationLog {
    int iteration = 0;
    double coverage = 0.0;
    double qd_score = 0.0;
    double best_f = 0.0;
    int restarts = 0;     // cumulative
    int acceptances = 0;  // this iteration, search point included
};

struct QdgsRun {
    Archive archive;
    std::vector<IterationLog> log;
    std::size_t evaluations = 0;          // value evaluations: search points plus branches
    std::size_t gradient_evaluations = 0; // extra evaluations spent on finite differences
    std::size_t failures = 0;
};

/// Runs the gradient-arborescence QD loop. Throws Error when more than
/// max_failure_rate of the evaluations are rejected by the scorer.
QdgsRun run_qdgs(const QdgsConfig& config, const Generator& generator, const Scorer& scorer);

void write_run_log_csv(std::ostream& out, const std::vector<IterationLog>& log);

struct Sample {
    LatentSolution theta;
    double f = 0.0;
    Vector m;
};

/// n prior draws, each scored against an empty margin memory.
std::vector<Sample> run_random(int n, const Generator& generator, const Scorer& scorer, std::uint64_t seed,
                               int threads = 1);

/// Passive archive built from a sample set, i.e. the cells a sample set covers.
Archive archive_from_samples(const std::vector<Sample>& samples, const MeasureSpec& grid, AnnealConfig anneal = {});

void write_samples_csv(std::ostream& out, const std::vector<Sample>& samples);
std::vector<Sample> read_samples_csv(std::istream& in);

struct MultiTrialResult {
    Archive merged;
    std::vector<QdgsRun> trials;
};

/// config.trials independent runs seeded seed + t, merged cell-wise.
MultiTrialResult multi_trial(const QdgsConfig& config, const Generator& generator, const Scorer& scorer);

struct IdentityLabel {
    int chunk = 0;   // row-major over a 3×3 split of (m1, m2)
    int cluster = 0;
    bool operator==(const IdentityLabel&) const = default;
};

/// 3×3 chunking over the grid's first two measure ranges, then K-means on θ
/// inside each chunk with k = max(1, ⌊|chunk| / 2⌋). Keyed by flat cell index.
std::map<std::size_t, IdentityLabel> assign_identity_labels(const Archive& archive, std::uint64_t seed);

/// Chunk id of a measure vector over the first two dimensions of the grid.
int chunk_of(const Vector& m, const MeasureSpec& grid);

/// θ + i·δ·a + j·δ·b for i, j ∈ {−1, 0, 1}, i outer; the original is element 4.
std::vector<LatentSolution> augment_variants(const LatentSolution& theta, const Vector& dir_a, const Vector& dir_b,
                                             double delta);

struct LabelDecision {
    std::optional<std::string> label; // nullopt drops the record
    Vector m;                         // measures recorded in the manifest
};

/// Labels a rendered export image. The shapes labeler re-measures and applies label_from_m2.
using Labeler = std::function<LabelDecision(const ImageBuffer& image)>;

struct ExportItem {
    LatentSolution theta;
    double f = 0.0;
    std::optional<std::size_t> cell;
    std::optional<IdentityLabel> identity;
    std::optional<LabelDecision> inherited; // skips the labeler, used for augmentation variants
};

struct DatasetRecord {
    LatentSolution theta;
    std::string image_path; // relative to the dataset directory
    std::string label;
    std::optional<IdentityLabel> identity;
    double f = 0.0;
    Vector m;
    std::optional<std::size_t> cell;
};

struct SyntheticDataset {
    std::string root;
    std::vector<DatasetRecord> records;
    std::size_t dropped = 0; // ambiguous records excluded at export
};

struct ExportOptions {
    int resolution = 128;
    int threads = 1;
    std::string prefix = "img";
};

/// Renders each item, labels it, writes images/<prefix>_<i>.png for kept items
/// and manifest.jsonl under out_dir. IoError names any failing path.
SyntheticDataset export_items(const std::vector<ExportItem>& items, const Generator& generator, const Labeler& labeler,
                              const std::string& out_dir, const ExportOptions& options = {});

/// Exports every passive elite (row-major cell order), attaching identity labels when given.
SyntheticDataset export_dataset(const Archive& archive, const Generator& generator, const Labeler& labeler,
                                const std::string& out_dir, const ExportOptions& options = {},
                                const std::map<std::size_t, IdentityLabel>* identities = nullptr);

SyntheticDataset read_manifest(const std::string& dataset_dir);

/// The nine augment_variants of every record, each inheriting the record's label,
/// measures, cell and identity without re-measurement.
std::vector<ExportItem> variant_items(const SyntheticDataset& parents, const Vector& dir_a, const Vector& dir_b,
                                      double delta);

/// Per-cell frequencies over a two-dimensional grid, rows indexed by m1 bin.
Matrix density_map(const std::vector<Vector>& measures, const MeasureSpec& grid);
Matrix density_map(const Archive& archive);

void write_matrix_csv(std::ostream& out, const Matrix& grid);

/// 256-level "hot" colormap (black, red, yellow, white) scaled to the max cell,
/// m1 along x and m2 upward. Each cell is drawn as a cell_px square.
ImageBuffer density_heatmap(const Matrix& density, int cell_px = 4);

} // namespace qdgs
