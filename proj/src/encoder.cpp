#include "slvid/encoder.hpp"

#include "slvid/dataset.hpp"
#include "slvid/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace slv {

namespace {

void fill_glorot(Matrix& m, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : m.data()) {
        w = dist(rng);
    }
}

} // namespace

EncoderParams EncoderParams::zeros(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_regions) {
    if (input_dim == 0 || hidden_dim == 0 || num_regions == 0) {
        throw std::invalid_argument("encoder dimensions must be >= 1");
    }
    EncoderParams p;
    p.input_dim = input_dim;
    p.hidden_dim = hidden_dim;
    p.num_regions = num_regions;
    p.w1 = Matrix(input_dim, hidden_dim);
    p.b1.assign(hidden_dim, 0.0);
    p.w2 = Matrix(hidden_dim, hidden_dim);
    p.b2.assign(hidden_dim, 0.0);
    p.head_w = Matrix(hidden_dim, num_regions);
    p.head_b.assign(num_regions, 0.0);
    return p;
}

EncoderParams EncoderParams::glorot(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_regions,
                                    std::uint64_t seed) {
    EncoderParams p = zeros(input_dim, hidden_dim, num_regions);
    Rng rng = make_stream(seed, {0xe1c0de});
    fill_glorot(p.w1, rng);
    fill_glorot(p.w2, rng);
    fill_glorot(p.head_w, rng);
    return p;
}

std::array<std::span<double>, EncoderParams::kNumTensors> EncoderParams::tensors() {
    return {w1.data(), std::span<double>(b1), w2.data(), std::span<double>(b2), head_w.data(),
            std::span<double>(head_b)};
}

std::array<std::span<const double>, EncoderParams::kNumTensors> EncoderParams::tensors() const {
    return {w1.data(), std::span<const double>(b1), w2.data(), std::span<const double>(b2), head_w.data(),
            std::span<const double>(head_b)};
}

bool EncoderParams::same_values(const EncoderParams& other) const {
    return input_dim == other.input_dim && hidden_dim == other.hidden_dim && num_regions == other.num_regions &&
           w1 == other.w1 && b1 == other.b1 && w2 == other.w2 && b2 == other.b2 && head_w == other.head_w &&
           head_b == other.head_b;
}

Matrix frames_as_matrix(const Utterance& utt) {
    Matrix m(utt.num_frames, utt.feature_dim);
    for (std::size_t i = 0; i < utt.frames.size(); ++i) {
        m.data()[i] = static_cast<double>(utt.frames[i]);
    }
    return m;
}

ForwardResult forward(const EncoderParams& params, const Matrix& frames) {
    const std::size_t T = frames.rows();
    const std::size_t F = params.input_dim;
    const std::size_t H = params.hidden_dim;
    const std::size_t R = params.num_regions;
    if (T == 0) {
        throw std::invalid_argument("forward: utterance has no frames");
    }
    if (frames.cols() != F) {
        throw std::invalid_argument("forward: dimension mismatch (utterance F=" + std::to_string(frames.cols()) +
                                    ", encoder F=" + std::to_string(F) + ")");
    }

    ForwardResult out;
    ForwardCache& c = out.cache;
    c.input = frames;
    c.pre1 = Matrix(T, H);
    c.pre2 = Matrix(T, H);
    c.frame_embeddings = Matrix(T, H);
    c.input_dim = F;
    c.hidden_dim = H;
    c.num_regions = R;
    c.params_version = params.version;

    std::vector<double> h1(H);
    for (std::size_t t = 0; t < T; ++t) {
        auto a1 = c.pre1.row(t);
        std::copy(params.b1.begin(), params.b1.end(), a1.begin());
        for (std::size_t f = 0; f < F; ++f) {
            const double x = frames(t, f);
            const auto w = params.w1.row(f);
            for (std::size_t h = 0; h < H; ++h) {
                a1[h] += x * w[h];
            }
        }
        for (std::size_t h = 0; h < H; ++h) {
            h1[h] = a1[h] > 0.0 ? a1[h] : 0.0;
        }
        auto a2 = c.pre2.row(t);
        std::copy(params.b2.begin(), params.b2.end(), a2.begin());
        for (std::size_t i = 0; i < H; ++i) {
            if (h1[i] == 0.0) {
                continue;
            }
            const auto w = params.w2.row(i);
            for (std::size_t j = 0; j < H; ++j) {
                a2[j] += h1[i] * w[j];
            }
        }
        auto e = c.frame_embeddings.row(t);
        for (std::size_t j = 0; j < H; ++j) {
            e[j] = a2[j] > 0.0 ? a2[j] : 0.0;
        }
    }

    // Fixed frame order keeps the pooled sum reproducible.
    out.pooled.assign(H, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        const auto e = c.frame_embeddings.row(t);
        for (std::size_t j = 0; j < H; ++j) {
            out.pooled[j] += e[j];
        }
    }
    const double inv_t = 1.0 / static_cast<double>(T);
    for (double& v : out.pooled) {
        v *= inv_t;
    }
    c.pooled = out.pooled;

    out.logits = params.head_b;
    for (std::size_t h = 0; h < H; ++h) {
        const auto w = params.head_w.row(h);
        for (std::size_t r = 0; r < R; ++r) {
            out.logits[r] += out.pooled[h] * w[r];
        }
    }
    return out;
}

ForwardResult forward(const EncoderParams& params, const Utterance& utt) {
    return forward(params, frames_as_matrix(utt));
}

void accumulate_backward(const EncoderParams& params, const ForwardCache& cache, std::span<const double> grad_pooled,
                         std::span<const double> grad_logits, EncoderParams& grads) {
    const std::size_t F = params.input_dim;
    const std::size_t H = params.hidden_dim;
    const std::size_t R = params.num_regions;
    if (cache.params_version != params.version || cache.input_dim != F || cache.hidden_dim != H ||
        cache.num_regions != R) {
        throw std::logic_error("backward: stale cache (parameters changed since forward)");
    }
    if ((!grad_pooled.empty() && grad_pooled.size() != H) || (!grad_logits.empty() && grad_logits.size() != R)) {
        throw std::invalid_argument("backward: upstream gradient dimension mismatch");
    }
    if (grads.input_dim != F || grads.hidden_dim != H || grads.num_regions != R) {
        throw std::invalid_argument("backward: gradient buffer shape mismatch");
    }

    std::vector<double> g_pooled(H, 0.0);
    if (!grad_pooled.empty()) {
        std::copy(grad_pooled.begin(), grad_pooled.end(), g_pooled.begin());
    }
    if (!grad_logits.empty()) {
        for (std::size_t h = 0; h < H; ++h) {
            const auto w = params.head_w.row(h);
            auto gw = grads.head_w.row(h);
            double acc = 0.0;
            for (std::size_t r = 0; r < R; ++r) {
                acc += w[r] * grad_logits[r];
                gw[r] += cache.pooled[h] * grad_logits[r];
            }
            g_pooled[h] += acc;
        }
        for (std::size_t r = 0; r < R; ++r) {
            grads.head_b[r] += grad_logits[r];
        }
    }

    const std::size_t T = cache.input.rows();
    const double inv_t = 1.0 / static_cast<double>(T);
    std::vector<double> g_a2(H);
    std::vector<double> g_a1(H);
    for (std::size_t t = 0; t < T; ++t) {
        const auto a1 = cache.pre1.row(t);
        const auto a2 = cache.pre2.row(t);
        bool any = false;
        for (std::size_t j = 0; j < H; ++j) {
            g_a2[j] = a2[j] > 0.0 ? g_pooled[j] * inv_t : 0.0;
            any = any || g_a2[j] != 0.0;
        }
        if (!any) {
            continue;
        }
        for (std::size_t i = 0; i < H; ++i) {
            const double h1 = a1[i] > 0.0 ? a1[i] : 0.0;
            const auto w = params.w2.row(i);
            auto gw = grads.w2.row(i);
            double acc = 0.0;
            for (std::size_t j = 0; j < H; ++j) {
                gw[j] += h1 * g_a2[j];
                acc += w[j] * g_a2[j];
            }
            g_a1[i] = a1[i] > 0.0 ? acc : 0.0;
        }
        for (std::size_t j = 0; j < H; ++j) {
            grads.b2[j] += g_a2[j];
            grads.b1[j] += g_a1[j];
        }
        for (std::size_t f = 0; f < F; ++f) {
            const double x = cache.input(t, f);
            auto gw = grads.w1.row(f);
            for (std::size_t h = 0; h < H; ++h) {
                gw[h] += x * g_a1[h];
            }
        }
    }
}

EncoderParams backward(const EncoderParams& params, const ForwardCache& cache, std::span<const double> grad_pooled,
                       std::span<const double> grad_logits) {
    EncoderParams grads = params.zeros_like();
    accumulate_backward(params, cache, grad_pooled, grad_logits, grads);
    return grads;
}

CrossEntropy cross_entropy(std::span<const double> logits, std::size_t label) {
    if (label >= logits.size()) {
        throw std::invalid_argument("cross_entropy: label out of range");
    }
    double max_logit = -std::numeric_limits<double>::infinity();
    for (double z : logits) {
        if (!std::isfinite(z)) {
            throw std::invalid_argument("cross_entropy: non-finite logits");
        }
        max_logit = std::max(max_logit, z);
    }
    CrossEntropy out;
    out.grad_logits.resize(logits.size());
    double sum = 0.0;
    for (std::size_t r = 0; r < logits.size(); ++r) {
        out.grad_logits[r] = std::exp(logits[r] - max_logit);
        sum += out.grad_logits[r];
    }
    out.loss = std::log(sum) - (logits[label] - max_logit);
    for (double& g : out.grad_logits) {
        g /= sum;
    }
    out.grad_logits[label] -= 1.0;
    return out;
}

Normalized l2_normalize(std::span<const double> e) {
    const double norm = std::sqrt(dot(e, e));
    if (!(norm > kMinEmbeddingNorm)) {
        throw std::domain_error("l2_normalize: degenerate embedding (norm below 1e-12)");
    }
    Normalized out;
    out.norm = norm;
    out.unit.resize(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) {
        out.unit[i] = e[i] / norm;
    }
    return out;
}

std::vector<double> l2_normalize_backward(const Normalized& n, std::span<const double> grad_unit) {
    const double proj = dot(n.unit, grad_unit);
    std::vector<double> g(grad_unit.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = (grad_unit[i] - n.unit[i] * proj) / n.norm;
    }
    return g;
}

} // namespace slv
