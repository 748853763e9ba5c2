#pragma once

#include "qdgs/types.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace qdgs {

struct Interval {
    double lo = -1.0;
    double hi = 1.0;
};

/// Grid tessellation of a k-dimensional measure space.
struct MeasureSpec {
    std::vector<Interval> bounds;
    std::vector<int> resolution;

    /// Square k-dimensional grid with identical bounds and resolution per axis.
    static MeasureSpec uniform(int k, Interval range, int cells_per_dim);

    int dims() const { return static_cast<int>(bounds.size()); }
    std::size_t cell_count() const;
    void validate() const;

    bool operator==(const MeasureSpec& other) const;
};

using CellIndex = std::vector<int>;

/// Uniform binning with the top bin closed; out-of-range values clamp to the edge bin.
/// Throws EvaluationRejected on non-finite input.
CellIndex cell_index(const Vector& m, const MeasureSpec& spec);

std::size_t flat_index(const CellIndex& index, const MeasureSpec& spec);
CellIndex unflatten(std::size_t flat, const MeasureSpec& spec);

struct Elite {
    LatentSolution theta;
    double f = 0.0;
    Vector m;
};

struct Cell {
    double threshold = 0.0;
    std::optional<Elite> elite;
};

struct AnnealConfig {
    double alpha = 0.02;
    double min_f = 0.0;
};

struct InsertResult {
    double delta = 0.0;
    bool accepted = false;
    bool elite_replaced = false;
};

struct ArchiveStats {
    double coverage = 0.0;
    double qd_score = 0.0;
    double best_f = 0.0;
    std::size_t occupied = 0;
};

/// Holds two archives over the same grid: the annealed optimization archive
/// (per-cell thresholds, governs acceptance) and the passive elitist archive
/// (best-ever occupant per cell, the exported result).
///
/// Single writer. Concurrent reads between insert batches are fine.
class Archive {
public:
    Archive(MeasureSpec spec, AnnealConfig config = {});

    const MeasureSpec& spec() const { return spec_; }
    const AnnealConfig& config() const { return config_; }
    std::size_t size() const { return cells_.size(); }

    const Cell& cell(std::size_t flat) const { return cells_.at(flat); }
    const Cell& cell(const CellIndex& index) const;

    /// f minus the threshold of m's cell. Does not mutate.
    double improvement(double f, const Vector& m) const;

    /// Accepts iff f > threshold, annealing the threshold toward f on acceptance.
    /// The passive elite is replaced whenever f beats it, accepted or not.
    InsertResult insert(const LatentSolution& theta, double f, const Vector& m);

    ArchiveStats stats() const;
    bool empty() const { return occupied_ == 0; }
    std::size_t occupied() const { return occupied_; }

    /// Flat indices of occupied cells in row-major order.
    std::vector<std::size_t> occupied_cells() const;

    /// Uniformly random elite; the archive must be non-empty.
    const Elite& sample_elite(Rng& rng) const;

    /// Overwrites one cell; used when restoring saved state.
    void set_cell(std::size_t flat, Cell cell);

    /// Cell-wise max-f elite across inputs; thresholds reset to min_f.
    static Archive merge(std::span<const Archive> archives);

    /// One JSON object per occupied cell, row-major order.
    void write_jsonl(std::ostream& out) const;
    static Archive read_jsonl(std::istream& in, MeasureSpec spec, AnnealConfig config = {});

private:
    MeasureSpec spec_;
    AnnealConfig config_;
    std::vector<Cell> cells_;
    std::size_t occupied_ = 0;
};

} // namespace qdgs
