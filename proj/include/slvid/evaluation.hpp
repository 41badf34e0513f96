#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace slv {

struct EncoderParams;
struct LabeledSet;

// Rows are true regions, columns predicted regions; labels in lexicographic order.
struct ConfusionMatrix {
    std::vector<std::string> labels;
    std::vector<std::uint64_t> counts;  // R x R, row-major

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::vector<std::string> region_labels);

    std::size_t size() const noexcept { return labels.size(); }
    std::uint64_t& at(std::size_t truth, std::size_t predicted) { return counts[truth * labels.size() + predicted]; }
    std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * labels.size() + predicted]; }
    std::uint64_t total() const;
    std::uint64_t trace() const;

    void add(std::size_t truth, std::size_t predicted) { ++at(truth, predicted); }
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population standard deviation
};

struct ClassScores {
    MeanStd precision;
    MeanStd recall;
    MeanStd f1;
};

struct EvalReport {
    std::size_t n_runs = 1;
    MeanStd accuracy;
    MeanStd macro_f1;
    std::vector<ClassScores> per_class;
    ConfusionMatrix confusion;  // summed over runs when aggregated
};

// Metrics of a single confusion matrix. Undefined precision, recall or F1 (0/0) count as 0.
EvalReport report_from_confusion(const ConfusionMatrix& cm);

// Index of the largest logit; ties go to the lowest index.
std::size_t argmax_prediction(std::span<const double> logits);

// Argmax predictions of the classifier head over a labeled split.
EvalReport evaluate(const EncoderParams& params, const LabeledSet& split);

EvalReport aggregate(std::span<const EvalReport> reports);

MeanStd mean_std(std::span<const double> values);

// "60.18±0.55": percentages with two decimals.
std::string format_percent(const MeanStd& v);

// metric\tmean\tstd rows, a blank line, then the confusion matrix as TSV.
std::string format_report_tsv(const EvalReport& report);
EvalReport parse_report_tsv(const std::string& text);

std::string format_confusion_tsv(const ConfusionMatrix& cm);

} // namespace slv
