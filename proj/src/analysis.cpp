#include "slvid/analysis.hpp"

#include "slvid/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace slv {

namespace {

// tab20
constexpr std::array<const char*, kPaletteSize> kPalette{
    "#1f77b4", "#aec7e8", "#ff7f0e", "#ffbb78", "#2ca02c", "#98df8a", "#d62728", "#ff9896", "#9467bd", "#c5b0d5",
    "#8c564b", "#c49c94", "#e377c2", "#f7b6d2", "#7f7f7f", "#c7c7c7", "#bcbd22", "#dbdb8d", "#17becf", "#9edae5"};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

Matrix pairwise_squared_distances(const Matrix& x) {
    const std::size_t n = x.rows();
    Matrix d(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            d(i, j) = d(j, i) = squared_distance(x.row(i), x.row(j));
        }
    }
    return d;
}

void check_finite(const Matrix& x, const char* who) {
    for (double v : x.data()) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument(std::string(who) + ": non-finite input");
        }
    }
}

} // namespace

void TsneConfig::validate(std::size_t n_points) const {
    if (!(perplexity > 1.0) || !(perplexity < static_cast<double>(n_points))) {
        throw std::invalid_argument("tsne: perplexity must satisfy 1 < perplexity < n");
    }
    if (n_iter < 250) {
        throw std::invalid_argument("tsne: n_iter must be >= 250");
    }
    if (!(learning_rate > 0.0) || !(early_exaggeration >= 1.0)) {
        throw std::invalid_argument("tsne: bad learning rate or exaggeration");
    }
}

ConditionalRow calibrate_row(std::span<const double> squared_distances, std::size_t self, double perplexity) {
    const std::size_t n = squared_distances.size();
    if (n < 2 || self >= n) {
        throw std::invalid_argument("calibrate_row: need at least one neighbour");
    }
    double min_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
        if (j != self) {
            min_d = std::min(min_d, squared_distances[j]);
        }
    }
    const double target = std::log(perplexity);

    ConditionalRow row;
    row.p.assign(n, 0.0);
    double beta_lo = -std::numeric_limits<double>::infinity();
    double beta_hi = std::numeric_limits<double>::infinity();
    double beta = 1.0;
    for (std::size_t it = 0; it < kPerplexityMaxIter; ++it) {
        double sum = 0.0;
        double weighted = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == self) {
                row.p[j] = 0.0;
                continue;
            }
            const double d = squared_distances[j] - min_d;
            row.p[j] = std::exp(-beta * d);
            sum += row.p[j];
            weighted += d * row.p[j];
        }
        const double entropy = std::log(sum) + beta * weighted / sum;
        for (double& v : row.p) {
            v /= sum;
        }
        row.beta = beta;
        row.entropy = entropy;
        row.iterations = it + 1;
        const double diff = entropy - target;
        if (std::abs(diff) < kPerplexityTol) {
            row.converged = true;
            break;
        }
        if (diff > 0.0) {
            beta_lo = beta;
            beta = std::isinf(beta_hi) ? beta * 2.0 : (beta + beta_hi) / 2.0;
        } else {
            beta_hi = beta;
            beta = std::isinf(beta_lo) ? beta / 2.0 : (beta + beta_lo) / 2.0;
        }
    }
    return row;
}

Affinities compute_affinities(const Matrix& x, double perplexity) {
    const std::size_t n = x.rows();
    check_finite(x, "tsne");
    const Matrix d = pairwise_squared_distances(x);
    Affinities out;
    out.joint = Matrix(n, n);
    out.betas.resize(n);
    Matrix conditional(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const ConditionalRow row = calibrate_row(d.row(i), i, perplexity);
        std::copy(row.p.begin(), row.p.end(), conditional.row(i).begin());
        out.betas[i] = row.beta;
        if (!row.converged) {
            ++out.capped_rows;
        }
        out.max_log_perplexity_error = std::max(out.max_log_perplexity_error, std::abs(row.entropy - std::log(perplexity)));
    }
    const double inv = 1.0 / (2.0 * static_cast<double>(n));
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) {
                continue;
            }
            const double v = std::max((conditional(i, j) + conditional(j, i)) * inv, kAffinityFloor);
            out.joint(i, j) = v;
            total += v;
        }
    }
    for (double& v : out.joint.data()) {
        v /= total;
    }
    return out;
}

Matrix student_t_affinities(const Matrix& y) {
    const std::size_t n = y.rows();
    Matrix q(n, n);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = 1.0 / (1.0 + squared_distance(y.row(i), y.row(j)));
            q(i, j) = q(j, i) = v;
            sum += 2.0 * v;
        }
    }
    for (double& v : q.data()) {
        v /= sum;
    }
    return q;
}

double kl_divergence(const Matrix& p, const Matrix& q) {
    double kl = 0.0;
    for (std::size_t i = 0; i < p.rows(); ++i) {
        for (std::size_t j = 0; j < p.cols(); ++j) {
            if (i != j && p(i, j) > 0.0) {
                kl += p(i, j) * std::log(p(i, j) / q(i, j));
            }
        }
    }
    return kl;
}

Matrix tsne_gradient(const Matrix& p, const Matrix& y) {
    const std::size_t n = y.rows();
    const std::size_t dims = y.cols();
    const Matrix q = student_t_affinities(y);
    Matrix grad(n, dims);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) {
                continue;
            }
            const double num = 1.0 / (1.0 + squared_distance(y.row(i), y.row(j)));
            const double mult = 4.0 * (p(i, j) - q(i, j)) * num;
            for (std::size_t k = 0; k < dims; ++k) {
                grad(i, k) += mult * (y(i, k) - y(j, k));
            }
        }
    }
    return grad;
}

namespace {

// Core optimisation; rows are already in canonical (ascending key) order.
Projection tsne_ordered(const Matrix& x, std::span<const std::uint64_t> keys, const TsneConfig& cfg) {
    const std::size_t n = x.rows();
    const Affinities aff = compute_affinities(x, cfg.perplexity);
    const Matrix& p = aff.joint;
    double p_log_p = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i != j) {
                p_log_p += p(i, j) * std::log(p(i, j));
            }
        }
    }

    constexpr std::size_t kDims = 2;
    Projection proj;
    proj.capped_rows = aff.capped_rows;
    proj.y = Matrix(n, kDims);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = make_stream(cfg.seed, {0x75e, keys[i]});
        std::normal_distribution<double> normal(0.0, 1e-4);
        for (std::size_t k = 0; k < kDims; ++k) {
            proj.y(i, k) = normal(rng);
        }
    }

    Matrix update(n, kDims);
    Matrix gains(n, kDims, 1.0);
    Matrix num(n, n);
    Matrix& y = proj.y;
    const auto kl_from_num = [&](double num_sum) {
        // KL = sum p log p - sum p log q, with log q = log num - log Z.
        double cross = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i != j) {
                    cross += p(i, j) * (std::log(num(i, j)) - std::log(num_sum));
                }
            }
        }
        return p_log_p - cross;
    };
    const auto fill_num = [&]() {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const double v = 1.0 / (1.0 + squared_distance(y.row(i), y.row(j)));
                num(i, j) = num(j, i) = v;
                sum += 2.0 * v;
            }
        }
        return sum;
    };

    proj.kl_trace.reserve(cfg.n_iter + 1);
    for (std::size_t iter = 0; iter < cfg.n_iter; ++iter) {
        const double exaggeration = iter < cfg.exaggeration_iters ? cfg.early_exaggeration : 1.0;
        const double momentum = iter < cfg.momentum_switch_iter ? cfg.initial_momentum : cfg.final_momentum;
        const double num_sum = fill_num();
        proj.kl_trace.push_back(kl_from_num(num_sum));

        for (std::size_t i = 0; i < n; ++i) {
            double g[kDims] = {0.0, 0.0};
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) {
                    continue;
                }
                const double mult = 4.0 * (exaggeration * p(i, j) - num(i, j) / num_sum) * num(i, j);
                for (std::size_t k = 0; k < kDims; ++k) {
                    g[k] += mult * (y(i, k) - y(j, k));
                }
            }
            for (std::size_t k = 0; k < kDims; ++k) {
                double& gain = gains(i, k);
                gain = (g[k] > 0.0) != (update(i, k) > 0.0) ? gain + 0.2 : gain * 0.8;
                gain = std::max(gain, 0.01);
                update(i, k) = momentum * update(i, k) - cfg.learning_rate * gain * g[k];
            }
        }
        for (std::size_t k = 0; k < kDims; ++k) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                y(i, k) += update(i, k);
                mean += y(i, k);
            }
            mean /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                y(i, k) -= mean;
            }
        }
    }
    proj.kl_trace.push_back(kl_from_num(fill_num()));
    return proj;
}

} // namespace

Projection tsne(const Matrix& x, std::vector<std::string> labels, const TsneConfig& cfg,
                std::span<const std::uint64_t> point_keys) {
    const std::size_t n = x.rows();
    if (n < 5) {
        throw std::invalid_argument("tsne: need at least 5 points");
    }
    if (!labels.empty() && labels.size() != n) {
        throw std::invalid_argument("tsne: label count does not match points");
    }
    if (!point_keys.empty() && point_keys.size() != n) {
        throw std::invalid_argument("tsne: point key count does not match points");
    }
    cfg.validate(n);

    // Every sum runs in key order, so a row permutation that carries its keys
    // along reproduces the same floating-point operations.
    std::vector<std::uint64_t> keys(n);
    for (std::size_t i = 0; i < n; ++i) {
        keys[i] = point_keys.empty() ? i : point_keys[i];
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
    Matrix xs(n, x.cols());
    std::vector<std::uint64_t> ks(n);
    for (std::size_t r = 0; r < n; ++r) {
        std::copy(x.row(order[r]).begin(), x.row(order[r]).end(), xs.row(r).begin());
        ks[r] = keys[order[r]];
    }

    Projection sorted = tsne_ordered(xs, ks, cfg);
    Projection proj;
    proj.y = Matrix(n, sorted.y.cols());
    for (std::size_t r = 0; r < n; ++r) {
        std::copy(sorted.y.row(r).begin(), sorted.y.row(r).end(), proj.y.row(order[r]).begin());
    }
    proj.kl_trace = std::move(sorted.kl_trace);
    proj.capped_rows = sorted.capped_rows;
    proj.labels = std::move(labels);
    return proj;
}

const char* palette_color(std::size_t rank) { return kPalette[rank % kPaletteSize]; }

std::string render_scatter(const Projection& proj) {
    constexpr double kSize = 800.0;
    constexpr double kMargin = 0.05 * kSize;
    const std::size_t n = proj.y.rows();

    const std::set<std::string> unique(proj.labels.begin(), proj.labels.end());
    std::map<std::string, std::size_t> rank;
    for (const auto& l : unique) {
        rank.emplace(l, rank.size());
    }

    double xmin = std::numeric_limits<double>::infinity();
    double xmax = -xmin;
    double ymin = xmin;
    double ymax = -xmin;
    for (std::size_t i = 0; i < n; ++i) {
        xmin = std::min(xmin, proj.y(i, 0));
        xmax = std::max(xmax, proj.y(i, 0));
        ymin = std::min(ymin, proj.y(i, 1));
        ymax = std::max(ymax, proj.y(i, 1));
    }
    const double extent = std::max(xmax - xmin, ymax - ymin);
    const double scale = extent > 0.0 ? (kSize - 2.0 * kMargin) / extent : 0.0;
    const double xc = 0.5 * (xmin + xmax);
    const double yc = 0.5 * (ymin + ymax);

    std::ostringstream out;
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"800\" height=\"800\" viewBox=\"0 0 800 800\">\n"
        << "<rect x=\"0\" y=\"0\" width=\"800\" height=\"800\" fill=\"#ffffff\"/>\n<g id=\"points\">\n";
    for (std::size_t i = 0; i < n; ++i) {
        const double px = kSize / 2.0 + (proj.y(i, 0) - xc) * scale;
        const double py = kSize / 2.0 - (proj.y(i, 1) - yc) * scale;
        const std::string& label = i < proj.labels.size() ? proj.labels[i] : std::string();
        const std::size_t r = rank.contains(label) ? rank.at(label) : 0;
        out << "<circle cx=\"" << fmt("%.2f", px) << "\" cy=\"" << fmt("%.2f", py) << "\" r=\"3\" fill=\""
            << palette_color(r) << "\"/>\n";
    }
    out << "</g>\n<g id=\"legend\" font-family=\"sans-serif\" font-size=\"11\">\n";
    std::size_t row = 0;
    for (const auto& [label, r] : rank) {
        const double y = 14.0 + 14.0 * static_cast<double>(row++);
        out << "<rect x=\"700\" y=\"" << fmt("%.0f", y - 9.0) << "\" width=\"10\" height=\"10\" fill=\""
            << palette_color(r) << "\"/><text x=\"714\" y=\"" << fmt("%.0f", y) << "\">" << xml_escape(label)
            << "</text>\n";
    }
    out << "</g>\n</svg>\n";
    return out.str();
}

Matrix confusion_shades(const ConfusionMatrix& cm, bool normalize) {
    const std::size_t R = cm.size();
    Matrix shades(R, R);
    std::uint64_t max_count = 0;
    for (auto c : cm.counts) {
        max_count = std::max(max_count, c);
    }
    for (std::size_t i = 0; i < R; ++i) {
        std::uint64_t row_sum = 0;
        for (std::size_t j = 0; j < R; ++j) {
            row_sum += cm.at(i, j);
        }
        const double denom = static_cast<double>(normalize ? row_sum : max_count);
        for (std::size_t j = 0; j < R; ++j) {
            shades(i, j) = denom > 0.0 ? static_cast<double>(cm.at(i, j)) / denom : 0.0;
        }
    }
    return shades;
}

std::string render_confusion(const ConfusionMatrix& cm, bool normalize) {
    const std::size_t R = cm.size();
    constexpr double kCell = 40.0;
    constexpr double kOffset = 60.0;
    const double size = kOffset + kCell * static_cast<double>(R) + 10.0;
    const Matrix shades = confusion_shades(cm, normalize);

    std::ostringstream out;
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << fmt("%.0f", size) << "\" height=\""
        << fmt("%.0f", size) << "\" viewBox=\"0 0 " << fmt("%.0f", size) << ' ' << fmt("%.0f", size) << "\">\n"
        << "<g font-family=\"sans-serif\" font-size=\"10\">\n";
    for (std::size_t k = 0; k < R; ++k) {
        const double c = kOffset + kCell * (static_cast<double>(k) + 0.5);
        out << "<text x=\"" << fmt("%.1f", c) << "\" y=\"" << fmt("%.1f", kOffset - 8.0)
            << "\" text-anchor=\"middle\">" << xml_escape(cm.labels[k]) << "</text>\n";
        out << "<text x=\"" << fmt("%.1f", kOffset - 6.0) << "\" y=\"" << fmt("%.1f", c + 3.0)
            << "\" text-anchor=\"end\">" << xml_escape(cm.labels[k]) << "</text>\n";
    }
    for (std::size_t i = 0; i < R; ++i) {
        for (std::size_t j = 0; j < R; ++j) {
            const double s = shades(i, j);
            // White to dark blue.
            const int r = static_cast<int>(std::lround(255.0 - s * (255.0 - 8.0)));
            const int g = static_cast<int>(std::lround(255.0 - s * (255.0 - 48.0)));
            const int b = static_cast<int>(std::lround(255.0 - s * (255.0 - 107.0)));
            char color[16];
            std::snprintf(color, sizeof color, "#%02x%02x%02x", r, g, b);
            const double x = kOffset + kCell * static_cast<double>(j);
            const double y = kOffset + kCell * static_cast<double>(i);
            out << "<rect class=\"cell\" x=\"" << fmt("%.1f", x) << "\" y=\"" << fmt("%.1f", y) << "\" width=\"40\" height=\"40\" fill=\""
                << color << "\" data-shade=\"" << fmt("%.4f", s) << "\"/>";
            const std::string text = normalize ? fmt("%.2f", s) : std::to_string(cm.at(i, j));
            out << "<text x=\"" << fmt("%.1f", x + kCell / 2.0) << "\" y=\"" << fmt("%.1f", y + kCell / 2.0 + 3.0)
                << "\" text-anchor=\"middle\" fill=\"" << (s > 0.5 ? "#ffffff" : "#000000") << "\">" << text
                << "</text>\n";
        }
    }
    out << "</g>\n</svg>\n";
    return out.str();
}

double knn_purity(const Matrix& x, std::span<const int> labels, std::size_t k) {
    const std::size_t n = x.rows();
    if (labels.size() != n) {
        throw std::invalid_argument("knn_purity: label count does not match points");
    }
    if (n < k + 1) {
        throw std::invalid_argument("knn_purity: need at least k + 1 points");
    }
    std::vector<std::pair<double, std::size_t>> dist(n - 1);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t w = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) {
                dist[w++] = {squared_distance(x.row(i), x.row(j)), j};
            }
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
        std::map<int, std::size_t> votes;
        for (std::size_t r = 0; r < k; ++r) {
            ++votes[labels[dist[r].second]];
        }
        // std::map iterates labels in ascending order, so ties go to the lower label.
        int majority = votes.begin()->first;
        std::size_t best = 0;
        for (const auto& [label, count] : votes) {
            if (count > best) {
                best = count;
                majority = label;
            }
        }
        if (majority == labels[i]) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

ClusterQuality cluster_quality(const Matrix& x, std::span<const int> labels) {
    const std::size_t n = x.rows();
    if (labels.size() != n) {
        throw std::invalid_argument("cluster_quality: label count does not match points");
    }
    const std::set<int> distinct(labels.begin(), labels.end());
    if (distinct.size() < 2) {
        throw std::invalid_argument("cluster_quality: need at least 2 labels");
    }
    ClusterQuality out;
    out.knn_purity = knn_purity(x, labels);

    std::map<int, std::size_t> class_size;
    for (int l : labels) {
        ++class_size[l];
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::map<int, double> sum_by_label;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) {
                sum_by_label[labels[j]] += std::sqrt(squared_distance(x.row(i), x.row(j)));
            }
        }
        const std::size_t own = class_size[labels[i]];
        if (own < 2) {
            continue;  // singleton clusters score 0
        }
        const double a = sum_by_label[labels[i]] / static_cast<double>(own - 1);
        double b = std::numeric_limits<double>::infinity();
        for (const auto& [label, s] : sum_by_label) {
            if (label != labels[i]) {
                b = std::min(b, s / static_cast<double>(class_size[label]));
            }
        }
        const double denom = std::max(a, b);
        total += denom > 0.0 ? (b - a) / denom : 0.0;
    }
    out.silhouette = total / static_cast<double>(n);
    return out;
}

} // namespace slv
