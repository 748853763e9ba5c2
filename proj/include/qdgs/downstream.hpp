#pragma once

#include "qdgs/classifier.hpp"
#include "qdgs/pipeline.hpp"
#include "qdgs/shapes.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace qdgs {

/// Group index = shape·2 + color: red triangle, blue triangle, red square, blue square.
inline constexpr int kGroups = 4;
int group_index(shapes::ShapeClass shape, shapes::ColorClass color);
const char* group_name(int group);
bool group_is_minority(int group);

/// Classifier-ready data. Label 0 = triangle, 1 = square. Group is -1 when unknown.
struct LabeledData {
    Matrix X; // kClassifierInput × n
    std::vector<int> labels;
    std::vector<int> groups;

    std::size_t size() const { return labels.size(); }
    void append(const Vector& x, int label, int group = -1);
};

LabeledData from_real(const std::vector<shapes::RealSample>& samples);

/// Columns of a followed by columns of b. Throws ConfigError on a feature count mismatch.
LabeledData concat(const LabeledData& a, const LabeledData& b);

/// Loads every manifest record, reading the PNGs and converting the "triangle"/"square" labels.
/// The color group comes from the sign of the stored m1.
LabeledData from_synthetic(const SyntheticDataset& dataset);

/// Draws from sample_real(0.5) until each of the four groups holds per_group images.
LabeledData balanced_eval_set(int per_group, std::uint64_t seed, int resolution = kClassifierSide,
                              const shapes::DomainConfig& cfg = shapes::default_config());

struct TrainOptions {
    int epochs = 30;
    double lr = 0.05;
    int batch = 64;
    int hidden = 64;
    std::uint64_t seed = 0;
};

struct TrainResult {
    Classifier model;
    std::vector<double> loss_curve; // mean minibatch loss per epoch
};

/// Mini-batch SGD on softmax cross-entropy from a fresh He initialization.
/// Throws ConfigError when fewer than two classes are present.
TrainResult train(const LabeledData& data, const TrainOptions& options);

/// Continues SGD from model. Zero epochs returns the model unchanged.
TrainResult finetune(const Classifier& model, const LabeledData& data, const TrainOptions& options);

struct EvalReport {
    std::array<std::optional<double>, kGroups> group_accuracy;
    double overall = 0.0;
    double minority_mean = 0.0; // NaN when no minority group is present
    double di = 0.0;            // min / max over present groups
};

EvalReport evaluate(const Classifier& model, const LabeledData& eval);

/// Fairness summary from raw per-group accuracies; absent groups are skipped.
EvalReport summarize(const std::array<std::optional<double>, kGroups>& group_accuracy, double overall);
double disparate_impact(const std::array<std::optional<double>, kGroups>& group_accuracy);

struct SweepConfig {
    std::vector<double> b_list{0.80, 0.85, 0.90, 0.95, 0.98};
    std::vector<std::string> methods{"none", "random", "qdgs"};
    int seeds = 5;
    std::uint64_t base_seed = 0;
    int train_size = 2000;
    int eval_per_group = 1000;
    TrainOptions pretrain{};
    TrainOptions tune{10, 0.05, 64, 64, 0};
    // Fine-tune on the pretraining set plus the synthetic set instead of the
    // synthetic set alone. Without the real images the tuned model drifts toward
    // the synthetic distribution and loses accuracy at mild bias.
    bool tune_with_real = true;
    int threads = 1;
};

struct SweepRow {
    double b = 0.0;
    std::string method;
    int seed = 0;
    bool absent = false; // no synthetic set for this method
    EvalReport report;
};

/// For each (b, seed) pretrains on sample_real(b), then evaluates the
/// pretrained model ("none") and a copy fine-tuned on each method's synthetic
/// set. synthetic maps method name to its data; a missing entry marks that
/// method's rows absent.
std::vector<SweepRow> experiment_sweep(const SweepConfig& config,
                                       const std::map<std::string, LabeledData>& synthetic);

struct AggregateRow {
    double b = 0.0;
    std::string method;
    int n = 0;
    std::array<double, kGroups> group_mean{};
    double overall_mean = 0.0, overall_se = 0.0;
    double minority_mean = 0.0, minority_se = 0.0;
    double di_mean = 0.0, di_se = 0.0;
};

/// Mean and standard error (sample std / sqrt(n)) per (b, method), in first-seen order.
std::vector<AggregateRow> aggregate(const std::vector<SweepRow>& rows);

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);
void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows);
std::vector<SweepRow> read_sweep_csv(std::istream& in);

} // namespace qdgs
