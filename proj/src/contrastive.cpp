#include "slvid/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace slv {

namespace {

void check_finite(const Matrix& z, const char* who) {
    for (double v : z.data()) {
        if (!std::isfinite(v)) {
            throw std::invalid_argument(std::string(who) + ": NaN or infinite embedding value");
        }
    }
}

void check_batch(const Matrix& z, std::size_t expected_rows, const char* who) {
    if (z.rows() != expected_rows) {
        throw std::invalid_argument(std::string(who) + ": embedding rows do not match labels");
    }
    if (z.rows() < 2) {
        throw std::invalid_argument(std::string(who) + ": batch must contain at least 2 embeddings");
    }
    check_finite(z, who);
}

// log(1 + sum_k exp(x_k)), stable for large x.
double log1p_sum_exp(std::span<const double> x) {
    double m = 0.0;
    for (double v : x) {
        m = std::max(m, v);
    }
    double s = std::exp(-m);
    for (double v : x) {
        s += std::exp(v - m);
    }
    return m + std::log(s);
}

void add_pair_grad(Matrix& grad, const Matrix& z, std::size_t i, std::size_t j, double coeff) {
    // d(z_i . z_j) = z_j dz_i + z_i dz_j
    const auto zi = z.row(i);
    const auto zj = z.row(j);
    auto gi = grad.row(i);
    auto gj = grad.row(j);
    for (std::size_t h = 0; h < z.cols(); ++h) {
        gi[h] += coeff * zj[h];
        gj[h] += coeff * zi[h];
    }
}

} // namespace

void ContrastiveParams::validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("contrastive params: tau must be > 0");
    if (!(margin >= 0.0)) throw std::invalid_argument("contrastive params: margin must be >= 0");
    if (!(alpha > 0.0) || !(beta > 0.0)) throw std::invalid_argument("contrastive params: alpha, beta must be > 0");
    if (!(epsilon >= 0.0)) throw std::invalid_argument("contrastive params: epsilon must be >= 0");
    if (!std::isfinite(lambda)) throw std::invalid_argument("contrastive params: lambda must be finite");
}

MinedPairs mine(std::span<const int> labels) {
    const std::size_t m = labels.size();
    MinedPairs out;
    out.positives.resize(m);
    out.negatives.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            if (j == i) {
                continue;
            }
            (labels[j] == labels[i] ? out.positives[i] : out.negatives[i]).push_back(j);
        }
    }
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t p : out.positives[a]) {
            for (std::size_t n : out.negatives[a]) {
                out.triplets.push_back({a, p, n});
            }
        }
    }
    return out;
}

Matrix similarity_matrix(const Matrix& z) {
    const std::size_t m = z.rows();
    Matrix s(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i; j < m; ++j) {
            s(i, j) = s(j, i) = dot(z.row(i), z.row(j));
        }
    }
    return s;
}

LossOutput sc_loss(const Matrix& z, const MinedPairs& pairs, const ContrastiveParams& params) {
    check_batch(z, pairs.positives.size(), "sc_loss");
    params.validate();
    const std::size_t m = z.rows();
    const bool all_in_denominator = params.supcon_denominator == SupconDenominator::all;
    const Matrix s = similarity_matrix(z);

    LossOutput out;
    out.grad = Matrix(m, z.cols());
    std::vector<std::size_t> denom;
    std::vector<double> weights;
    for (std::size_t i = 0; i < m; ++i) {
        const auto& pos = pairs.positives[i];
        const auto& neg = pairs.negatives[i];
        if (pos.empty() || (!all_in_denominator && neg.empty())) {
            continue;
        }
        denom.clear();
        if (all_in_denominator) {
            std::merge(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(denom));
        } else {
            denom = neg;
        }

        double max_logit = -std::numeric_limits<double>::infinity();
        for (std::size_t k : denom) {
            max_logit = std::max(max_logit, s(i, k) / params.tau);
        }
        weights.assign(denom.size(), 0.0);
        double sum = 0.0;
        for (std::size_t d = 0; d < denom.size(); ++d) {
            weights[d] = std::exp(s(i, denom[d]) / params.tau - max_logit);
            sum += weights[d];
        }
        const double lse = max_logit + std::log(sum);

        const double inv_p = 1.0 / static_cast<double>(pos.size());
        double mean_pos = 0.0;
        for (std::size_t p : pos) {
            mean_pos += s(i, p) / params.tau;
        }
        out.value += lse - mean_pos * inv_p;
        ++out.n_active;

        for (std::size_t p : pos) {
            add_pair_grad(out.grad, z, i, p, -inv_p / params.tau);
        }
        for (std::size_t d = 0; d < denom.size(); ++d) {
            add_pair_grad(out.grad, z, i, denom[d], weights[d] / sum / params.tau);
        }
    }
    return out;
}

LossOutput tm_loss(const Matrix& z, const MinedPairs& pairs, const ContrastiveParams& params) {
    check_batch(z, pairs.positives.size(), "tm_loss");
    params.validate();
    const std::size_t m = z.rows();
    const std::size_t H = z.cols();

    LossOutput out;
    out.grad = Matrix(m, H);
    if (pairs.triplets.empty()) {
        return out;
    }
    const double inv_count = 1.0 / static_cast<double>(pairs.triplets.size());

    Matrix dist(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
            dist(i, j) = dist(j, i) = std::sqrt(squared_distance(z.row(i), z.row(j)));
        }
    }

    // d|a - b| / da = (a - b)/|a - b|, taken as 0 at a == b.
    auto add_distance_grad = [&](std::size_t a, std::size_t b, double coeff) {
        const double d = dist(a, b);
        if (d == 0.0) {
            return;
        }
        const auto za = z.row(a);
        const auto zb = z.row(b);
        auto ga = out.grad.row(a);
        auto gb = out.grad.row(b);
        for (std::size_t h = 0; h < H; ++h) {
            const double g = coeff * (za[h] - zb[h]) / d;
            ga[h] += g;
            gb[h] -= g;
        }
    };

    double total = 0.0;
    for (const Triplet& t : pairs.triplets) {
        const double hinge = dist(t.anchor, t.positive) - dist(t.anchor, t.negative) + params.margin;
        if (hinge > 0.0) {
            total += hinge;
            ++out.n_active;
            add_distance_grad(t.anchor, t.positive, inv_count);
            add_distance_grad(t.anchor, t.negative, -inv_count);
        }
    }
    out.value = total * inv_count;
    return out;
}

MsSelection ms_mine(const Matrix& similarity, const MinedPairs& pairs, double epsilon) {
    const std::size_t m = pairs.positives.size();
    MsSelection sel;
    sel.kept_positives.resize(m);
    sel.kept_negatives.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        const auto& pos = pairs.positives[i];
        const auto& neg = pairs.negatives[i];
        if (pos.empty() || neg.empty()) {
            continue;
        }
        double hardest_neg = -std::numeric_limits<double>::infinity();
        for (std::size_t n : neg) {
            hardest_neg = std::max(hardest_neg, similarity(i, n));
        }
        double hardest_pos = std::numeric_limits<double>::infinity();
        for (std::size_t p : pos) {
            hardest_pos = std::min(hardest_pos, similarity(i, p));
        }
        for (std::size_t p : pos) {
            if (similarity(i, p) < hardest_neg + epsilon) {
                sel.kept_positives[i].push_back(p);
            }
        }
        for (std::size_t n : neg) {
            if (similarity(i, n) > hardest_pos - epsilon) {
                sel.kept_negatives[i].push_back(n);
            }
        }
    }
    return sel;
}

double ms_anchor_term(std::span<const double> positive_sims, std::span<const double> negative_sims,
                      const ContrastiveParams& params) {
    std::vector<double> x;
    x.reserve(std::max(positive_sims.size(), negative_sims.size()));
    for (double s : positive_sims) {
        x.push_back(-params.alpha * (s - params.lambda));
    }
    const double pos_term = x.empty() ? 0.0 : log1p_sum_exp(x) / params.alpha;
    x.clear();
    for (double s : negative_sims) {
        x.push_back(params.beta * (s - params.lambda));
    }
    const double neg_term = x.empty() ? 0.0 : log1p_sum_exp(x) / params.beta;
    return pos_term + neg_term;
}

LossOutput ms_loss(const Matrix& z, std::span<const int> labels, const ContrastiveParams& params) {
    check_batch(z, labels.size(), "ms_loss");
    params.validate();
    const std::size_t m = z.rows();
    const MinedPairs pairs = mine(labels);
    const Matrix s = similarity_matrix(z);
    const MsSelection sel = ms_mine(s, pairs, params.epsilon);
    const double inv_m = 1.0 / static_cast<double>(m);

    LossOutput out;
    out.grad = Matrix(m, z.cols());
    std::vector<double> x;
    for (std::size_t i = 0; i < m; ++i) {
        const auto& kp = sel.kept_positives[i];
        const auto& kn = sel.kept_negatives[i];
        if (kp.empty() && kn.empty()) {
            continue;
        }
        ++out.n_active;

        // Positive part: d/dS_ip (1/alpha) log(1 + sum e^{x_p}) = -e^{x_p} / (1 + sum e^{x}).
        if (!kp.empty()) {
            x.clear();
            for (std::size_t p : kp) {
                x.push_back(-params.alpha * (s(i, p) - params.lambda));
            }
            const double lse = log1p_sum_exp(x);
            out.value += inv_m * lse / params.alpha;
            for (std::size_t k = 0; k < kp.size(); ++k) {
                add_pair_grad(out.grad, z, i, kp[k], -inv_m * std::exp(x[k] - lse));
            }
        }
        if (!kn.empty()) {
            x.clear();
            for (std::size_t n : kn) {
                x.push_back(params.beta * (s(i, n) - params.lambda));
            }
            const double lse = log1p_sum_exp(x);
            out.value += inv_m * lse / params.beta;
            for (std::size_t k = 0; k < kn.size(); ++k) {
                add_pair_grad(out.grad, z, i, kn[k], inv_m * std::exp(x[k] - lse));
            }
        }
    }
    return out;
}

} // namespace slv
