#include "slvid/evaluation.hpp"

#include "slvid/dataset.hpp"
#include "slvid/encoder.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace slv {

namespace {

double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find('\t', start);
        out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
        if (pos == std::string::npos) {
            return out;
        }
        start = pos + 1;
    }
}

} // namespace

ConfusionMatrix::ConfusionMatrix(std::vector<std::string> region_labels)
    : labels(std::move(region_labels)), counts(labels.size() * labels.size(), 0) {}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        t += at(i, i);
    }
    return t;
}

EvalReport report_from_confusion(const ConfusionMatrix& cm) {
    const std::size_t R = cm.size();
    if (R == 0 || cm.total() == 0) {
        throw std::invalid_argument("evaluate: empty split");
    }
    EvalReport report;
    report.confusion = cm;
    report.accuracy.mean = static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
    report.per_class.resize(R);
    double f1_sum = 0.0;
    for (std::size_t c = 0; c < R; ++c) {
        double tp = static_cast<double>(cm.at(c, c));
        double predicted = 0.0;
        double actual = 0.0;
        for (std::size_t k = 0; k < R; ++k) {
            predicted += static_cast<double>(cm.at(k, c));
            actual += static_cast<double>(cm.at(c, k));
        }
        ClassScores& s = report.per_class[c];
        s.precision.mean = safe_ratio(tp, predicted);
        s.recall.mean = safe_ratio(tp, actual);
        s.f1.mean = safe_ratio(2.0 * s.precision.mean * s.recall.mean, s.precision.mean + s.recall.mean);
        f1_sum += s.f1.mean;
    }
    report.macro_f1.mean = f1_sum / static_cast<double>(R);
    return report;
}

std::size_t argmax_prediction(std::span<const double> logits) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < logits.size(); ++r) {
        if (logits[r] > logits[best]) {
            best = r;
        }
    }
    return best;
}

EvalReport evaluate(const EncoderParams& params, const LabeledSet& split) {
    if (split.empty()) {
        throw std::invalid_argument("evaluate: empty split");
    }
    if (split.region_names.size() != params.num_regions) {
        throw std::invalid_argument("evaluate: model has " + std::to_string(params.num_regions) +
                                    " regions, split has " + std::to_string(split.region_names.size()));
    }
    ConfusionMatrix cm(split.region_names);
    for (std::size_t i = 0; i < split.size(); ++i) {
        const ForwardResult fr = forward(params, split.frames[i]);
        cm.add(static_cast<std::size_t>(split.labels[i]), argmax_prediction(fr.logits));
    }
    return report_from_confusion(cm);
}

MeanStd mean_std(std::span<const double> values) {
    if (values.empty()) {
        throw std::invalid_argument("mean_std: no values");
    }
    MeanStd out;
    for (double v : values) {
        out.mean += v;
    }
    out.mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) {
        ss += (v - out.mean) * (v - out.mean);
    }
    out.std = std::sqrt(ss / static_cast<double>(values.size()));
    return out;
}

EvalReport aggregate(std::span<const EvalReport> reports) {
    if (reports.empty()) {
        throw std::invalid_argument("aggregate: no reports");
    }
    const auto& labels = reports.front().confusion.labels;
    for (const auto& r : reports) {
        if (r.confusion.labels != labels || r.per_class.size() != labels.size()) {
            throw std::invalid_argument("aggregate: mismatched region sets");
        }
    }
    auto collect = [&](auto&& get) {
        std::vector<double> v;
        for (const auto& r : reports) {
            v.push_back(get(r));
        }
        return mean_std(v);
    };

    EvalReport out;
    out.n_runs = 0;
    for (const auto& r : reports) {
        out.n_runs += r.n_runs;
    }
    out.accuracy = collect([](const EvalReport& r) { return r.accuracy.mean; });
    out.macro_f1 = collect([](const EvalReport& r) { return r.macro_f1.mean; });
    out.per_class.resize(labels.size());
    for (std::size_t c = 0; c < labels.size(); ++c) {
        out.per_class[c].precision = collect([c](const EvalReport& r) { return r.per_class[c].precision.mean; });
        out.per_class[c].recall = collect([c](const EvalReport& r) { return r.per_class[c].recall.mean; });
        out.per_class[c].f1 = collect([c](const EvalReport& r) { return r.per_class[c].f1.mean; });
    }
    out.confusion = ConfusionMatrix(labels);
    for (const auto& r : reports) {
        for (std::size_t i = 0; i < out.confusion.counts.size(); ++i) {
            out.confusion.counts[i] += r.confusion.counts[i];
        }
    }
    return out;
}

std::string format_percent(const MeanStd& v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f\xC2\xB1%.2f", 100.0 * v.mean, 100.0 * v.std);
    return buf;
}

std::string format_confusion_tsv(const ConfusionMatrix& cm) {
    std::ostringstream out;
    out << "true\\pred";
    for (const auto& l : cm.labels) {
        out << '\t' << l;
    }
    out << '\n';
    for (std::size_t i = 0; i < cm.size(); ++i) {
        out << cm.labels[i];
        for (std::size_t j = 0; j < cm.size(); ++j) {
            out << '\t' << cm.at(i, j);
        }
        out << '\n';
    }
    return out.str();
}

std::string format_report_tsv(const EvalReport& report) {
    std::ostringstream out;
    out << "metric\tmean\tstd_population\n";
    auto row = [&](const std::string& name, const MeanStd& v) {
        out << name << '\t' << format_double(v.mean) << '\t' << format_double(v.std) << '\n';
    };
    row("n_runs", {static_cast<double>(report.n_runs), 0.0});
    row("accuracy", report.accuracy);
    row("macro_f1", report.macro_f1);
    for (std::size_t c = 0; c < report.per_class.size(); ++c) {
        const std::string& l = report.confusion.labels[c];
        row("precision:" + l, report.per_class[c].precision);
        row("recall:" + l, report.per_class[c].recall);
        row("f1:" + l, report.per_class[c].f1);
    }
    out << '\n' << format_confusion_tsv(report.confusion);
    return out.str();
}

EvalReport parse_report_tsv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("metric\t", 0) != 0) {
        throw std::runtime_error("report: missing header row");
    }
    std::map<std::string, MeanStd> metrics;
    while (std::getline(in, line) && !line.empty()) {
        const auto f = split_tabs(line);
        if (f.size() != 3) {
            throw std::runtime_error("report: bad metric row: " + line);
        }
        metrics[f[0]] = {std::stod(f[1]), std::stod(f[2])};
    }
    if (!std::getline(in, line)) {
        throw std::runtime_error("report: missing confusion matrix");
    }
    auto header = split_tabs(line);
    header.erase(header.begin());
    EvalReport report;
    report.confusion = ConfusionMatrix(header);
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (!std::getline(in, line)) {
            throw std::runtime_error("report: truncated confusion matrix");
        }
        const auto f = split_tabs(line);
        if (f.size() != header.size() + 1 || f[0] != header[i]) {
            throw std::runtime_error("report: bad confusion row: " + line);
        }
        for (std::size_t j = 0; j < header.size(); ++j) {
            report.confusion.at(i, j) = std::stoull(f[j + 1]);
        }
    }
    auto get = [&](const std::string& k) {
        const auto it = metrics.find(k);
        if (it == metrics.end()) {
            throw std::runtime_error("report: missing metric " + k);
        }
        return it->second;
    };
    report.n_runs = static_cast<std::size_t>(get("n_runs").mean);
    report.accuracy = get("accuracy");
    report.macro_f1 = get("macro_f1");
    report.per_class.resize(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) {
        report.per_class[c] = {get("precision:" + header[c]), get("recall:" + header[c]), get("f1:" + header[c])};
    }
    return report;
}

} // namespace slv
