#include "qdgs/archive.hpp"

#include "qdgs/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

namespace qdgs {

MeasureSpec MeasureSpec::uniform(int k, Interval range, int cells_per_dim)
{
    MeasureSpec spec;
    spec.bounds.assign(static_cast<std::size_t>(k), range);
    spec.resolution.assign(static_cast<std::size_t>(k), cells_per_dim);
    spec.validate();
    return spec;
}

std::size_t MeasureSpec::cell_count() const
{
    std::size_t n = 1;
    for (int r : resolution)
        n *= static_cast<std::size_t>(r);
    return n;
}

void MeasureSpec::validate() const
{
    if (bounds.empty())
        throw ConfigError("measure spec needs at least one dimension");
    if (bounds.size() != resolution.size())
        throw ConfigError("measure spec bounds/resolution length mismatch");
    for (std::size_t d = 0; d < bounds.size(); ++d) {
        if (!(bounds[d].lo < bounds[d].hi))
            throw ConfigError("measure bounds need lo < hi on dimension " + std::to_string(d));
        if (resolution[d] < 1)
            throw ConfigError("measure resolution must be >= 1 on dimension " + std::to_string(d));
    }
}

bool MeasureSpec::operator==(const MeasureSpec& other) const
{
    if (resolution != other.resolution || bounds.size() != other.bounds.size())
        return false;
    for (std::size_t d = 0; d < bounds.size(); ++d)
        if (bounds[d].lo != other.bounds[d].lo || bounds[d].hi != other.bounds[d].hi)
            return false;
    return true;
}

CellIndex cell_index(const Vector& m, const MeasureSpec& spec)
{
    if (m.size() != spec.dims())
        throw ConfigError("measure vector has " + std::to_string(m.size()) + " entries, spec expects "
                          + std::to_string(spec.dims()));
    CellIndex index(static_cast<std::size_t>(spec.dims()));
    for (int d = 0; d < spec.dims(); ++d) {
        const double v = m[d];
        if (!std::isfinite(v))
            throw EvaluationRejected("non-finite measure value on dimension " + std::to_string(d));
        const auto& b = spec.bounds[static_cast<std::size_t>(d)];
        const int res = spec.resolution[static_cast<std::size_t>(d)];
        const double t = (v - b.lo) / (b.hi - b.lo) * res;
        // floor of a clamped value; hi itself lands in the last bin
        const double clamped = std::clamp(std::floor(t), 0.0, static_cast<double>(res - 1));
        index[static_cast<std::size_t>(d)] = static_cast<int>(clamped);
    }
    return index;
}

std::size_t flat_index(const CellIndex& index, const MeasureSpec& spec)
{
    std::size_t flat = 0;
    for (std::size_t d = 0; d < index.size(); ++d)
        flat = flat * static_cast<std::size_t>(spec.resolution[d]) + static_cast<std::size_t>(index[d]);
    return flat;
}

CellIndex unflatten(std::size_t flat, const MeasureSpec& spec)
{
    CellIndex index(spec.resolution.size());
    for (std::size_t d = index.size(); d-- > 0;) {
        const auto r = static_cast<std::size_t>(spec.resolution[d]);
        index[d] = static_cast<int>(flat % r);
        flat /= r;
    }
    return index;
}

Archive::Archive(MeasureSpec spec, AnnealConfig config) : spec_(std::move(spec)), config_(config)
{
    spec_.validate();
    if (!(config_.alpha >= 0.0 && config_.alpha <= 1.0))
        throw ConfigError("annealing rate alpha must lie in [0, 1]");
    if (!std::isfinite(config_.min_f))
        throw ConfigError("min_f must be finite");
    cells_.assign(spec_.cell_count(), Cell{config_.min_f, std::nullopt});
}

const Cell& Archive::cell(const CellIndex& index) const { return cells_.at(flat_index(index, spec_)); }

double Archive::improvement(double f, const Vector& m) const
{
    if (!std::isfinite(f))
        throw EvaluationRejected("non-finite objective value");
    return f - cells_[flat_index(cell_index(m, spec_), spec_)].threshold;
}

InsertResult Archive::insert(const LatentSolution& theta, double f, const Vector& m)
{
    if (!std::isfinite(f))
        throw EvaluationRejected("non-finite objective value");
    Cell& c = cells_[flat_index(cell_index(m, spec_), spec_)];

    InsertResult result;
    result.delta = f - c.threshold;
    if (result.delta > 0.0) {
        result.accepted = true;
        c.threshold = (1.0 - config_.alpha) * c.threshold + config_.alpha * f;
    }
    if (!c.elite || f > c.elite->f) {
        if (!c.elite)
            ++occupied_;
        c.elite = Elite{theta, f, m};
        result.elite_replaced = true;
    }
    return result;
}

ArchiveStats Archive::stats() const
{
    ArchiveStats s;
    s.best_f = -std::numeric_limits<double>::infinity();
    for (const auto& c : cells_) {
        if (!c.elite)
            continue;
        ++s.occupied;
        s.qd_score += c.elite->f;
        s.best_f = std::max(s.best_f, c.elite->f);
    }
    if (s.occupied == 0)
        s.best_f = 0.0;
    s.coverage = static_cast<double>(s.occupied) / static_cast<double>(cells_.size());
    return s;
}

std::vector<std::size_t> Archive::occupied_cells() const
{
    std::vector<std::size_t> out;
    out.reserve(occupied_);
    for (std::size_t i = 0; i < cells_.size(); ++i)
        if (cells_[i].elite)
            out.push_back(i);
    return out;
}

const Elite& Archive::sample_elite(Rng& rng) const
{
    if (occupied_ == 0)
        throw InternalError("cannot sample an elite from an empty archive");
    std::uniform_int_distribution<std::size_t> pick(0, occupied_ - 1);
    std::size_t target = pick(rng);
    for (const auto& c : cells_) {
        if (c.elite && target-- == 0)
            return *c.elite;
    }
    throw InternalError("occupied cell count out of sync");
}

void Archive::set_cell(std::size_t flat, Cell cell)
{
    Cell& slot = cells_.at(flat);
    if (slot.elite && !cell.elite)
        --occupied_;
    else if (!slot.elite && cell.elite)
        ++occupied_;
    slot = std::move(cell);
}

Archive Archive::merge(std::span<const Archive> archives)
{
    if (archives.empty())
        throw ConfigError("merge needs at least one archive");
    Archive merged(archives.front().spec_, archives.front().config_);
    for (const auto& a : archives) {
        if (!(a.spec_ == merged.spec_))
            throw ConfigError("cannot merge archives with different measure specs");
        for (std::size_t i = 0; i < a.cells_.size(); ++i) {
            const auto& src = a.cells_[i].elite;
            if (!src)
                continue;
            auto& dst = merged.cells_[i].elite;
            if (!dst) {
                dst = *src;
                ++merged.occupied_;
            } else if (src->f > dst->f) {
                dst = *src;
            }
        }
    }
    return merged;
}

namespace {

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_json(const nlohmann::json& j)
{
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

} // namespace

void Archive::write_jsonl(std::ostream& out) const
{
    for (std::size_t i = 0; i < cells_.size(); ++i) {
        const auto& e = cells_[i].elite;
        if (!e)
            continue;
        nlohmann::json row;
        row["cell"] = unflatten(i, spec_);
        row["f"] = e->f;
        row["m"] = to_std(e->m);
        row["theta"] = to_std(e->theta);
        out << row.dump() << '\n';
    }
}

Archive Archive::read_jsonl(std::istream& in, MeasureSpec spec, AnnealConfig config)
{
    Archive archive(std::move(spec), config);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        const auto row = nlohmann::json::parse(line);
        Elite e{from_json(row.at("theta")), row.at("f").get<double>(), from_json(row.at("m"))};
        const auto flat = flat_index(cell_index(e.m, archive.spec_), archive.spec_);
        auto& slot = archive.cells_[flat].elite;
        if (!slot) {
            ++archive.occupied_;
            slot = std::move(e);
        } else if (e.f > slot->f) {
            slot = std::move(e);
        }
    }
    return archive;
}

} // namespace qdgs
